//! Discrete-time integer simulator of a converted network.
//!
//! Neurons are integrate-and-fire with soft reset and an optional shift leak.
//! Layers update synchronously: spikes emitted at step `t` reach the next
//! layer at step `t + 1`. Probes are read after the last step completes,
//! i.e. after its threshold/reset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{LayerKind, Shape};
use crate::convert::{for_each_conv_target, SnnModel};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("number of time steps must be at least 1")]
    ZeroSteps,
    #[error("image has {found} pixels, model expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("membrane potential overflow in layer {layer}, neuron {neuron} at step {step}")]
    PotentialOverflow { layer: usize, neuron: usize, step: u32 },
    #[error("layer {0} does not exist")]
    NoSuchLayer(usize),
    #[error("layer {0} was not probed")]
    LayerNotProbed(usize),
    #[error("checkpoints must be strictly increasing and positive")]
    BadCheckpoints,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_time_steps: u32,
    /// `v -= v >> leak_shift` every step; 0 disables the leak.
    pub leak_shift: u32,
    /// Spiking-layer indices whose potentials and spike counts are recorded.
    pub probe_layers: Vec<usize>,
    pub record_raster: bool,
    #[serde(default)]
    pub initial_potential: InitialPotential,
}

/// Membrane potential of every neuron before the first step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPotential {
    #[default]
    Zero,
    /// `threshold / 2` (integer division): spike times are rounded to the
    /// nearest step instead of being delayed by up to a full period.
    HalfThreshold,
}

impl SimConfig {
    pub fn new(num_time_steps: u32) -> Self {
        Self {
            num_time_steps,
            leak_shift: 0,
            probe_layers: Vec::new(),
            record_raster: false,
            initial_potential: InitialPotential::Zero,
        }
    }

    pub fn probe(mut self, layers: &[usize]) -> Self {
        self.probe_layers = layers.to_vec();
        self
    }

    /// Probes the penultimate and output layers of `snn`.
    pub fn probe_readout(self, snn: &SnnModel) -> Self {
        let last = snn.num_spiking_layers() - 1;
        self.probe(&[last - 1, last])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    /// One per presynaptic spike per outgoing synapse.
    pub synaptic_events: u64,
    /// One per neuron per step.
    pub neuron_updates: u64,
}

impl std::ops::AddAssign for OpCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.synaptic_events += rhs.synaptic_events;
        self.neuron_updates += rhs.neuron_updates;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerProbe {
    pub layer: usize,
    pub potentials: Vec<i32>,
    pub spike_counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub steps: u32,
    pub probes: Vec<LayerProbe>,
    /// Total spikes per spiking layer.
    pub layer_spikes: Vec<u64>,
    pub ops: OpCounters,
    /// `raster[t][layer]` lists the neurons that fired at step `t + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raster: Option<Vec<Vec<Vec<u32>>>>,
}

impl ProbeRecord {
    pub fn layer(&self, layer: usize) -> Result<&LayerProbe, SimError> {
        self.probes
            .iter()
            .find(|p| p.layer == layer)
            .ok_or(SimError::LayerNotProbed(layer))
    }

    pub fn total_spikes(&self) -> u64 {
        self.layer_spikes.iter().sum()
    }
}

/// How an embedding is read from the penultimate layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Membrane potential at the last step.
    #[default]
    Potential,
    /// Potential plus `threshold · spike_count`: the input integrated over the
    /// whole run (exact when the leak is off).
    Integrated,
}

/// Constant input drive `int(pixel · W_MAX)`.
pub fn inject_input(image: &[f32], snn: &SnnModel) -> Result<Vec<i32>, SimError> {
    let expected = snn.arch.input.len();
    if image.len() != expected {
        return Err(SimError::ShapeMismatch {
            expected,
            found: image.len(),
        });
    }
    let w_max = snn.w_max() as f64;
    Ok(image.iter().map(|&p| (p as f64 * w_max) as i32).collect())
}

/// Mutable per-sample simulation state.
#[derive(Debug, Clone)]
pub struct SimState {
    pub step: u32,
    pub potentials: Vec<Vec<i32>>,
    /// Neurons that fired during the latest step, per layer.
    pub spikes: Vec<Vec<u32>>,
    pub spike_counts: Vec<Vec<u32>>,
    pub layer_spikes: Vec<u64>,
    pub ops: OpCounters,
    drive: Vec<i32>,
    current: Vec<i32>,
}

impl SimState {
    pub fn new(snn: &SnnModel, drive: Vec<i32>) -> Self {
        let shapes = snn.shapes();
        let n = shapes.len();
        let widest = shapes.iter().map(Shape::len).max().unwrap_or(0);
        Self {
            step: 0,
            potentials: shapes.iter().map(|s| vec![0; s.len()]).collect(),
            spikes: vec![Vec::new(); n],
            spike_counts: shapes.iter().map(|s| vec![0; s.len()]).collect(),
            layer_spikes: vec![0; n],
            ops: OpCounters::default(),
            drive,
            current: Vec::with_capacity(widest),
        }
    }
}

/// A model plus precomputed per-neuron out-degrees for event counting.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    snn: &'a SnnModel,
    shapes: Vec<Shape>,
    out_degree: Vec<Vec<u32>>,
}

impl<'a> Simulator<'a> {
    pub fn new(snn: &'a SnnModel) -> Self {
        let shapes = snn.shapes();
        let mut out_degree: Vec<Vec<u32>> = shapes.iter().map(|s| vec![0; s.len()]).collect();
        for (i, spec) in snn.arch.layers.iter().enumerate() {
            let (input, output) = (shapes[i], shapes[i + 1]);
            let deg = &mut out_degree[i];
            match spec.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    for iy in 0..input.height {
                        for ix in 0..input.width {
                            let mut taps = 0u32;
                            for_each_conv_target(iy, ix, kernel, stride, padding, output, |_, _, _, _| taps += 1);
                            for c in 0..input.channels {
                                deg[input.index(iy, ix, c)] = taps * out_channels as u32;
                            }
                        }
                    }
                }
                LayerKind::AvgPool { window, stride } => {
                    for oy in 0..output.height {
                        for ox in 0..output.width {
                            for wy in 0..window {
                                for wx in 0..window {
                                    for c in 0..input.channels {
                                        deg[input.index(oy * stride + wy, ox * stride + wx, c)] += 1;
                                    }
                                }
                            }
                        }
                    }
                }
                LayerKind::Dense { units } => deg.iter_mut().for_each(|d| *d = units as u32),
            }
        }
        Self {
            snn,
            shapes,
            out_degree,
        }
    }

    pub fn model(&self) -> &SnnModel {
        self.snn
    }

    pub fn start(&self, image: &[f32]) -> Result<SimState, SimError> {
        self.start_from(image, InitialPotential::Zero)
    }

    pub fn start_from(&self, image: &[f32], init: InitialPotential) -> Result<SimState, SimError> {
        let mut state = SimState::new(self.snn, inject_input(image, self.snn)?);
        if init == InitialPotential::HalfThreshold {
            for (l, v) in state.potentials.iter_mut().enumerate() {
                v.fill(self.snn.threshold(l) / 2);
            }
        }
        Ok(state)
    }

    /// Advances `state` by one time step.
    pub fn step(&self, state: &mut SimState, leak_shift: u32) -> Result<(), SimError> {
        let step = state.step + 1;
        let n_layers = self.shapes.len();
        // Deepest layer first, so every layer consumes the spikes its source
        // emitted during the previous step.
        for l in (0..n_layers).rev() {
            let len = self.shapes[l].len();
            state.current.clear();
            if l == 0 {
                state.current.extend_from_slice(&state.drive);
            } else {
                state.current.resize(len, 0);
                self.scatter(l, &state.spikes[l - 1], &mut state.current);
                let degree = &self.out_degree[l - 1];
                state.ops.synaptic_events += state.spikes[l - 1]
                    .iter()
                    .map(|&s| degree[s as usize] as u64)
                    .sum::<u64>();
                let layer = &self.snn.layers[l - 1];
                if !layer.bias.is_empty() {
                    let nb = layer.bias.len();
                    for (i, c) in state.current.iter_mut().enumerate() {
                        *c += layer.bias[i % nb];
                    }
                }
            }
            let threshold = self.snn.threshold(l);
            let v = &mut state.potentials[l];
            let fired = &mut state.spikes[l];
            let counts = &mut state.spike_counts[l];
            fired.clear();
            for (n, (vn, &c)) in v.iter_mut().zip(&state.current).enumerate() {
                let mut x = vn.checked_add(c).ok_or(SimError::PotentialOverflow { layer: l, neuron: n, step })?;
                if leak_shift > 0 {
                    x -= x >> leak_shift;
                }
                if x >= threshold {
                    x -= threshold;
                    fired.push(n as u32);
                    counts[n] += 1;
                }
                *vn = x;
            }
            state.layer_spikes[l] += fired.len() as u64;
            state.ops.neuron_updates += len as u64;
        }
        state.step = step;
        Ok(())
    }

    /// Adds the synaptic input of layer `l` caused by `spikes` of layer `l - 1`.
    fn scatter(&self, l: usize, spikes: &[u32], current: &mut [i32]) {
        let spec = &self.snn.arch.layers[l - 1];
        let weight = &self.snn.layers[l - 1].weight;
        let (input, output) = (self.shapes[l - 1], self.shapes[l]);
        match spec.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let cin = input.channels;
                for &s in spikes {
                    let s = s as usize;
                    let (pix, ci) = (s / cin, s % cin);
                    let (iy, ix) = (pix / input.width, pix % input.width);
                    for_each_conv_target(iy, ix, kernel, stride, padding, output, |oy, ox, ky, kx| {
                        let w = &weight[((ky * kernel + kx) * cin + ci) * out_channels..][..out_channels];
                        let o = &mut current[output.index(oy, ox, 0)..][..out_channels];
                        for (acc, &wq) in o.iter_mut().zip(w) {
                            *acc += wq;
                        }
                    });
                }
            }
            LayerKind::AvgPool { window, stride } => {
                let c = input.channels;
                for &s in spikes {
                    let s = s as usize;
                    let (pix, ch) = (s / c, s % c);
                    let (iy, ix) = (pix / input.width, pix % input.width);
                    let (oy, ox) = (iy / stride, ix / stride);
                    let (wy, wx) = (iy - oy * stride, ix - ox * stride);
                    if oy < output.height && ox < output.width && wy < window && wx < window {
                        current[output.index(oy, ox, ch)] += weight[wy * window + wx];
                    }
                }
            }
            LayerKind::Dense { units } => {
                for &s in spikes {
                    let w = &weight[s as usize * units..][..units];
                    for (acc, &wq) in current.iter_mut().zip(w) {
                        *acc += wq;
                    }
                }
            }
        }
    }

    fn snapshot(&self, state: &SimState, cfg: &SimConfig, raster: &Option<Vec<Vec<Vec<u32>>>>) -> ProbeRecord {
        ProbeRecord {
            steps: state.step,
            probes: cfg
                .probe_layers
                .iter()
                .map(|&l| LayerProbe {
                    layer: l,
                    potentials: state.potentials[l].clone(),
                    spike_counts: state.spike_counts[l].clone(),
                })
                .collect(),
            layer_spikes: state.layer_spikes.clone(),
            ops: state.ops,
            raster: raster.clone(),
        }
    }

    /// Runs once and snapshots the probes after each step listed in `checkpoints`.
    ///
    /// Because the dynamics are causal and deterministic, the snapshot at
    /// step `T` equals the result of a separate `T`-step run.
    pub fn run_checkpoints(&self, image: &[f32], cfg: &SimConfig, checkpoints: &[u32]) -> Result<Vec<ProbeRecord>, SimError> {
        if checkpoints.is_empty() || checkpoints[0] == 0 || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::BadCheckpoints);
        }
        if let Some(&bad) = cfg.probe_layers.iter().find(|&&l| l >= self.shapes.len()) {
            return Err(SimError::NoSuchLayer(bad));
        }
        let mut state = self.start_from(image, cfg.initial_potential)?;
        let mut raster = cfg.record_raster.then(Vec::new);
        let mut out = Vec::with_capacity(checkpoints.len());
        for &target in checkpoints {
            while state.step < target {
                self.step(&mut state, cfg.leak_shift)?;
                if let Some(r) = raster.as_mut() {
                    r.push(state.spikes.clone());
                }
            }
            out.push(self.snapshot(&state, cfg, &raster));
        }
        Ok(out)
    }

    pub fn run(&self, image: &[f32], cfg: &SimConfig) -> Result<ProbeRecord, SimError> {
        if cfg.num_time_steps == 0 {
            return Err(SimError::ZeroSteps);
        }
        Ok(self.run_checkpoints(image, cfg, &[cfg.num_time_steps])?.remove(0))
    }
}

/// Single-shot convenience wrapper around [`Simulator::run`].
pub fn run(snn: &SnnModel, image: &[f32], cfg: &SimConfig) -> Result<ProbeRecord, SimError> {
    Simulator::new(snn).run(image, cfg)
}

/// Argmax of output spike counts; ties go to the higher residual potential,
/// then to the lower index.
pub fn classify(probe: &ProbeRecord, output_layer: usize) -> Result<usize, SimError> {
    let p = probe.layer(output_layer)?;
    let mut best = 0;
    for i in 1..p.spike_counts.len() {
        let key = (p.spike_counts[i], p.potentials[i]);
        if key > (p.spike_counts[best], p.potentials[best]) {
            best = i;
        }
    }
    Ok(best)
}

/// Flattened channel-last embedding of a probed layer.
pub fn embed(probe: &ProbeRecord, layer: usize, threshold: i32, readout: Readout) -> Result<Vec<f32>, SimError> {
    let p = probe.layer(layer)?;
    Ok(match readout {
        Readout::Potential => p.potentials.iter().map(|&v| v as f32).collect(),
        Readout::Integrated => p
            .potentials
            .iter()
            .zip(&p.spike_counts)
            .map(|(&v, &c)| (v as i64 + threshold as i64 * c as i64) as f32)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{Activation, Architecture, LayerSpec};
    use crate::convert::{BitConfig, InputEncoding, SnnLayer};
    use proptest::prelude::*;

    /// One input pixel feeding one neuron with weight 0 and bias `d`.
    fn constant_drive(d: i32, threshold: i32) -> SnnModel {
        SnnModel {
            arch: Architecture {
                name: "1".into(),
                input: Shape::new(1, 1, 1),
                layers: vec![LayerSpec::dense(1, Activation::Relu)],
            },
            bits: BitConfig::default(),
            input: InputEncoding {
                param_scale: 255.0,
                threshold: 255,
            },
            layers: vec![SnnLayer {
                weight: vec![0],
                bias: vec![d],
                threshold,
                param_scale: 1.0,
            }],
            final_slope: 1.0,
        }
    }

    fn spike_steps(snn: &SnnModel, image: &[f32], layer: usize, steps: u32) -> Vec<u32> {
        let sim = Simulator::new(snn);
        let mut state = sim.start(image).unwrap();
        let mut out = Vec::new();
        for _ in 0..steps {
            sim.step(&mut state, 0).unwrap();
            if !state.spikes[layer].is_empty() {
                out.push(state.step);
            }
        }
        out
    }

    #[test]
    fn soft_reset_spike_times() {
        let snn = constant_drive(4, 10);
        assert_eq!(spike_steps(&snn, &[0.0], 1, 13), vec![3, 5, 8, 10, 13]);
    }

    #[test]
    fn drive_equal_to_threshold_fires_every_step() {
        let snn = constant_drive(7, 7);
        let sim = Simulator::new(&snn);
        let mut state = sim.start(&[0.0]).unwrap();
        for _ in 0..20 {
            sim.step(&mut state, 0).unwrap();
            assert_eq!(state.spikes[1], vec![0]);
            assert_eq!(state.potentials[1][0], 0);
        }
    }

    #[test]
    fn input_encoding() {
        let snn = constant_drive(0, 1);
        assert_eq!(inject_input(&[1.0], &snn).unwrap(), vec![255]);
        assert_eq!(inject_input(&[0.5], &snn).unwrap(), vec![127]);
        assert_eq!(spike_steps(&snn, &[1.0], 0, 5), vec![1, 2, 3, 4, 5]);
        assert!(spike_steps(&snn, &[0.0], 0, 50).is_empty());
        let n = spike_steps(&snn, &[0.5], 0, 1000).len();
        assert_eq!(n, 1000 * 127 / 255);
        assert!(matches!(inject_input(&[0.0; 2], &snn), Err(SimError::ShapeMismatch { .. })));
    }

    #[test]
    fn spikes_arrive_one_step_later() {
        // input pixel 1.0 fires every step; dense weight equals threshold
        let mut snn = constant_drive(0, 5);
        snn.layers[0].weight = vec![5];
        assert_eq!(spike_steps(&snn, &[1.0], 1, 4), vec![2, 3, 4]);
    }

    #[test]
    fn overflow_is_reported() {
        let snn = constant_drive(i32::MAX / 2 + 1, i32::MAX);
        let sim = Simulator::new(&snn);
        let mut state = sim.start(&[0.0]).unwrap();
        sim.step(&mut state, 0).unwrap();
        assert_eq!(
            sim.step(&mut state, 0),
            Err(SimError::PotentialOverflow { layer: 1, neuron: 0, step: 2 })
        );
    }

    #[test]
    fn leak_decays_toward_zero() {
        let snn = constant_drive(8, 1000);
        let sim = Simulator::new(&snn);
        let mut state = sim.start(&[0.0]).unwrap();
        for _ in 0..200 {
            sim.step(&mut state, 2).unwrap();
        }
        // fixed point of v = (v + 8) - (v + 8) / 4
        assert!(state.potentials[1][0] <= 24);
        assert_eq!(state.spike_counts[1][0], 0);
    }

    fn probe(counts: Vec<u32>, potentials: Vec<i32>) -> ProbeRecord {
        ProbeRecord {
            steps: 1,
            probes: vec![LayerProbe {
                layer: 3,
                potentials,
                spike_counts: counts,
            }],
            layer_spikes: vec![],
            ops: OpCounters::default(),
            raster: None,
        }
    }

    #[test]
    fn classify_tie_breaks() {
        let mut counts = vec![0; 10];
        counts[2] = 5;
        assert_eq!(classify(&probe(counts, vec![0; 10]), 3), Ok(2));
        assert_eq!(classify(&probe(vec![3, 3], vec![7, 2]), 3), Ok(0));
        assert_eq!(classify(&probe(vec![3, 3], vec![2, 7]), 3), Ok(1));
        assert_eq!(classify(&probe(vec![3, 3], vec![2, 2]), 3), Ok(0));
        assert_eq!(classify(&probe(vec![1], vec![0]), 2), Err(SimError::LayerNotProbed(2)));
    }

    #[test]
    fn readouts() {
        let p = probe(vec![2, 0], vec![3, -1]);
        assert_eq!(embed(&p, 3, 10, Readout::Potential).unwrap(), vec![3.0, -1.0]);
        assert_eq!(embed(&p, 3, 10, Readout::Integrated).unwrap(), vec![23.0, -1.0]);
    }

    #[test]
    fn checkpoints_match_separate_runs() {
        let mut snn = constant_drive(3, 7);
        snn.layers[0].weight = vec![2];
        let sim = Simulator::new(&snn);
        let cfg = SimConfig::new(1).probe(&[0, 1]);
        let all = sim.run_checkpoints(&[0.6], &cfg, &[1, 4, 9]).unwrap();
        for (rec, t) in all.iter().zip([1, 4, 9]) {
            let single = sim.run(&[0.6], &SimConfig { num_time_steps: t, ..cfg.clone() }).unwrap();
            assert_eq!(rec, &single);
        }
        assert_eq!(sim.run_checkpoints(&[0.6], &cfg, &[4, 4]), Err(SimError::BadCheckpoints));
        assert_eq!(sim.run(&[0.6], &SimConfig::new(0)), Err(SimError::ZeroSteps));
        assert_eq!(
            sim.run(&[0.6], &SimConfig::new(2).probe(&[5])),
            Err(SimError::NoSuchLayer(5))
        );
    }

    #[test]
    fn half_threshold_start_rounds_spike_times() {
        let snn = constant_drive(4, 10);
        let sim = Simulator::new(&snn);
        for t in 1..60u32 {
            let cfg = SimConfig {
                initial_potential: InitialPotential::HalfThreshold,
                ..SimConfig::new(t).probe(&[1])
            };
            let rec = sim.run(&[0.0], &cfg).unwrap();
            assert_eq!(rec.probes[0].spike_counts[0], (5 + 4 * t) / 10);
            assert_eq!(rec.probes[0].potentials[0] as u32, (5 + 4 * t) % 10);
        }
    }

    #[test]
    fn raster_records_every_step() {
        let snn = constant_drive(4, 10);
        let cfg = SimConfig {
            record_raster: true,
            ..SimConfig::new(5).probe(&[1])
        };
        let rec = run(&snn, &[1.0], &cfg).unwrap();
        let raster = rec.raster.unwrap();
        assert_eq!(raster.len(), 5);
        let fired: Vec<usize> = (0..5).filter(|&t| !raster[t][1].is_empty()).collect();
        assert_eq!(fired, vec![2, 4]);
    }

    proptest! {
        #[test]
        fn conservation_and_rate_law(d in 0i32..200, theta in 1i32..200, steps in 1u32..300) {
            let snn = constant_drive(d, theta);
            let sim = Simulator::new(&snn);
            let mut state = sim.start(&[0.0]).unwrap();
            for _ in 0..steps {
                sim.step(&mut state, 0).unwrap();
            }
            let v = state.potentials[1][0] as i64;
            let count = state.spike_counts[1][0] as i64;
            prop_assert_eq!(v, d as i64 * steps as i64 - theta as i64 * count);
            prop_assert!(v >= 0 && v < theta as i64 || d > theta);
            if d <= theta {
                let expected = d as i64 * steps as i64 / theta as i64;
                prop_assert!((count - expected).abs() <= 1);
            }
        }

        #[test]
        fn spike_counts_monotone_in_time(pixel in 0.0f32..1.0, w in -20i32..20, b in -5i32..5, theta in 1i32..40) {
            let mut snn = constant_drive(b, theta);
            snn.layers[0].weight = vec![w];
            let cfg = SimConfig::new(1).probe(&[1]);
            let recs = Simulator::new(&snn).run_checkpoints(&[pixel], &cfg, &[4, 8, 16, 32, 64]).unwrap();
            for pair in recs.windows(2) {
                prop_assert!(pair[0].probes[0].spike_counts[0] <= pair[1].probes[0].spike_counts[0]);
            }
        }
    }
}
