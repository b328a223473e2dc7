//! Resource model of a neuromorphic chip and greedy layer-to-core placement.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{Architecture, LayerKind};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum DeploymentError {
    #[error("layer {layer}: fan-in {fan_in} exceeds the limit of {limit}")]
    FanInExceeded { layer: usize, fan_in: usize, limit: usize },
    #[error("layer {layer}: one neuron needs {bytes} bytes, a core holds {limit}")]
    NeuronExceedsCoreMemory { layer: usize, bytes: usize, limit: usize },
    #[error("placement needs {needed} cores, the chip has {available}")]
    OutOfCores { needed: usize, available: usize },
    #[error("invalid chip model: {0}")]
    InvalidChip(String),
}

/// How convolution synapses are charged against core memory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynapseAccounting {
    /// One synapse per physical connection.
    #[default]
    PerConnection,
    /// One copy of the layer's unique weights per occupied core.
    SharedKernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChipModel {
    pub cores_per_chip: usize,
    pub grid_columns: usize,
    pub grid_rows: usize,
    pub fan_in_limit: usize,
    pub synaptic_mem_bytes: usize,
    pub bytes_per_synapse: usize,
    pub max_neurons_per_core: usize,
    pub accounting: SynapseAccounting,
}

impl Default for ChipModel {
    fn default() -> Self {
        Self {
            cores_per_chip: 128,
            grid_columns: 16,
            grid_rows: 8,
            fan_in_limit: 4096,
            synaptic_mem_bytes: 131_072,
            bytes_per_synapse: 2,
            max_neurons_per_core: 1024,
            accounting: SynapseAccounting::PerConnection,
        }
    }
}

impl ChipModel {
    pub fn validate(&self) -> Result<(), DeploymentError> {
        let fields = [
            ("cores_per_chip", self.cores_per_chip),
            ("grid_columns", self.grid_columns),
            ("grid_rows", self.grid_rows),
            ("fan_in_limit", self.fan_in_limit),
            ("synaptic_mem_bytes", self.synaptic_mem_bytes),
            ("bytes_per_synapse", self.bytes_per_synapse),
            ("max_neurons_per_core", self.max_neurons_per_core),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(DeploymentError::InvalidChip(format!("{name} must be positive")));
        }
        if self.grid_columns * self.grid_rows != self.cores_per_chip {
            return Err(DeploymentError::InvalidChip(format!(
                "grid {}x{} does not hold {} cores",
                self.grid_columns, self.grid_rows, self.cores_per_chip
            )));
        }
        Ok(())
    }
}

/// Resource demand of one spiking layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerResources {
    pub layer: usize,
    pub neuron_count: usize,
    pub fan_in_per_neuron: usize,
    pub synapse_count: usize,
    /// Synapses stored once per occupied core (shared-kernel accounting).
    pub shared_synapses: usize,
    pub bytes: usize,
}

impl LayerResources {
    /// A layer of identical neurons with per-connection synapses.
    pub fn uniform(layer: usize, neuron_count: usize, fan_in: usize, chip: &ChipModel) -> Self {
        Self {
            layer,
            neuron_count,
            fan_in_per_neuron: fan_in,
            synapse_count: neuron_count * fan_in,
            shared_synapses: 0,
            bytes: neuron_count * fan_in * chip.bytes_per_synapse,
        }
    }

    fn bytes_per_neuron(&self, chip: &ChipModel) -> usize {
        if self.shared_synapses > 0 {
            0
        } else {
            self.fan_in_per_neuron * chip.bytes_per_synapse
        }
    }
}

/// Resources of every spiking layer of `arch`, input encoding layer first.
pub fn layer_resources(arch: &Architecture, chip: &ChipModel) -> Vec<LayerResources> {
    let shapes = arch.shapes();
    let mut out = vec![LayerResources::uniform(0, arch.input.len(), 0, chip)];
    for (i, spec) in arch.layers.iter().enumerate() {
        let (input, output) = (shapes[i], shapes[i + 1]);
        let mut r = LayerResources::uniform(i + 1, output.len(), spec.fan_in(input), chip);
        if chip.accounting == SynapseAccounting::SharedKernel {
            let unique = match spec.kind {
                LayerKind::Conv { .. } | LayerKind::AvgPool { .. } => spec.weight_len(input),
                LayerKind::Dense { .. } => 0,
            };
            if unique > 0 {
                r.shared_synapses = unique;
                r.synapse_count = unique;
                r.bytes = unique * chip.bytes_per_synapse;
            }
        }
        out.push(r);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreAssignment {
    pub core: usize,
    pub layer: usize,
    /// Neurons `neuron_start..neuron_end` of `layer`.
    pub neuron_start: usize,
    pub neuron_end: usize,
    pub synapses: usize,
    pub bytes: usize,
}

impl CoreAssignment {
    pub fn neurons(&self) -> usize {
        self.neuron_end - self.neuron_start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub chip: ChipModel,
    pub cores: Vec<CoreAssignment>,
    /// Cores occupied per spiking layer.
    pub layer_cores: Vec<usize>,
    pub resources: Vec<LayerResources>,
}

impl Placement {
    pub fn cores_used(&self) -> usize {
        self.cores.len()
    }

    pub fn cores_free(&self) -> usize {
        self.chip.cores_per_chip - self.cores.len()
    }
}

/// Largest number of neurons of `r` one core can hold.
fn neurons_per_core(r: &LayerResources, chip: &ChipModel) -> Result<usize, DeploymentError> {
    if r.fan_in_per_neuron > chip.fan_in_limit {
        return Err(DeploymentError::FanInExceeded {
            layer: r.layer,
            fan_in: r.fan_in_per_neuron,
            limit: chip.fan_in_limit,
        });
    }
    let fixed = r.shared_synapses * chip.bytes_per_synapse;
    let per = r.bytes_per_neuron(chip);
    if fixed + per > chip.synaptic_mem_bytes {
        return Err(DeploymentError::NeuronExceedsCoreMemory {
            layer: r.layer,
            bytes: fixed + per,
            limit: chip.synaptic_mem_bytes,
        });
    }
    let by_memory = if per == 0 { usize::MAX } else { (chip.synaptic_mem_bytes - fixed) / per };
    Ok(by_memory.min(chip.max_neurons_per_core))
}

/// Greedy first-fit in layer order; a core only ever hosts one layer.
pub fn assign_layers(resources: &[LayerResources], chip: &ChipModel) -> Result<Placement, DeploymentError> {
    chip.validate()?;
    let mut cores = Vec::new();
    let mut layer_cores = Vec::with_capacity(resources.len());
    for r in resources {
        let cap = neurons_per_core(r, chip)?;
        let mut start = 0;
        let before = cores.len();
        while start < r.neuron_count {
            let end = (start + cap).min(r.neuron_count);
            let n = end - start;
            let synapses = r.shared_synapses + n * r.fan_in_per_neuron * (r.shared_synapses == 0) as usize;
            cores.push(CoreAssignment {
                core: cores.len(),
                layer: r.layer,
                neuron_start: start,
                neuron_end: end,
                synapses,
                bytes: synapses * chip.bytes_per_synapse,
            });
            start = end;
        }
        layer_cores.push(cores.len() - before);
    }
    if cores.len() > chip.cores_per_chip {
        return Err(DeploymentError::OutOfCores {
            needed: cores.len(),
            available: chip.cores_per_chip,
        });
    }
    Ok(Placement {
        chip: *chip,
        cores,
        layer_cores,
        resources: resources.to_vec(),
    })
}

pub fn assign_cores(arch: &Architecture, chip: &ChipModel) -> Result<Placement, DeploymentError> {
    assign_layers(&layer_resources(arch, chip), chip)
}

/// `grid_rows` lines of `grid_columns` comma-separated cells; each cell is
/// the spiking-layer id occupying that core or `-`.
pub fn render_floorplan(p: &Placement) -> String {
    let chip = &p.chip;
    let mut cells = vec![String::from("-"); chip.cores_per_chip];
    for c in &p.cores {
        if c.core < cells.len() {
            cells[c.core] = c.layer.to_string();
        }
    }
    let mut out = String::new();
    for row in cells.chunks(chip.grid_columns) {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One CSV row per occupied core.
pub fn placement_csv(p: &Placement) -> String {
    let mut out = String::from("core,row,column,layer,neuron_start,neuron_end,synapses,bytes\n");
    for c in &p.cores {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.core,
            c.core / p.chip.grid_columns,
            c.core % p.chip.grid_columns,
            c.layer,
            c.neuron_start,
            c.neuron_end,
            c.synapses,
            c.bytes
        );
    }
    out
}
