//! Raw binary encoding of a probe record, for consumers that do not want JSON.
//!
//! All integers little-endian:
//!
//! ```text
//! b"SPRB"  u32 version (1)  u32 steps  u32 probe_count
//! per probe:  u32 layer  u32 n  i32[n] potentials  u32[n] spike_counts
//! u32 layer_count  u64[layer_count] layer_spikes
//! u64 synaptic_events  u64 neuron_updates
//! ```

use spikesearch::snn::{LayerProbe, OpCounters, ProbeRecord};

use crate::error::CliError;

const MAGIC: &[u8; 4] = b"SPRB";
const VERSION: u32 = 1;

pub fn encode(record: &ProbeRecord) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [VERSION, record.steps, record.probes.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in &record.probes {
        out.extend_from_slice(&(p.layer as u32).to_le_bytes());
        out.extend_from_slice(&(p.potentials.len() as u32).to_le_bytes());
        for v in &p.potentials {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in &p.spike_counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out.extend_from_slice(&(record.layer_spikes.len() as u32).to_le_bytes());
    for s in &record.layer_spikes {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&record.ops.synaptic_events.to_le_bytes());
    out.extend_from_slice(&record.ops.neuron_updates.to_le_bytes());
    out
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], CliError> {
        if self.0.len() < N {
            return Err(CliError::Data("truncated probe record".into()));
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        self.take().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        self.take().map(u64::from_le_bytes)
    }
}

pub fn decode(bytes: &[u8]) -> Result<ProbeRecord, CliError> {
    let mut r = Reader(bytes);
    if &r.take::<4>()? != MAGIC {
        return Err(CliError::Data("not a probe record".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::Data(format!("unsupported probe record version {version}")));
    }
    let steps = r.u32()?;
    let count = r.u32()?;
    let mut probes = Vec::new();
    for _ in 0..count {
        let layer = r.u32()? as usize;
        let n = r.u32()? as usize;
        let potentials = (0..n).map(|_| r.take().map(i32::from_le_bytes)).collect::<Result<_, _>>()?;
        let spike_counts = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
        probes.push(LayerProbe {
            layer,
            potentials,
            spike_counts,
        });
    }
    let layers = r.u32()?;
    let layer_spikes = (0..layers).map(|_| r.u64()).collect::<Result<_, _>>()?;
    let ops = OpCounters {
        synaptic_events: r.u64()?,
        neuron_updates: r.u64()?,
    };
    if !r.0.is_empty() {
        return Err(CliError::Data("trailing bytes after probe record".into()));
    }
    Ok(ProbeRecord {
        steps,
        probes,
        layer_spikes,
        ops,
        raster: None,
    })
}
