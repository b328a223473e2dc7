pub mod ann;
pub mod arch;
pub mod convert;
pub mod dataset;
pub mod format;
mod linalg;
pub mod mapper;
pub mod retrieval;
pub mod snn;
pub mod sweep;

pub use ann::{AnnError, AnnModel, TrainConfig};
pub use arch::{Activation, Architecture, LayerKind, LayerSpec, Shape};
pub use convert::{convert, BitConfig, ConvertConfig, ConvertError, Rounding, SnnModel};
pub use dataset::{LabeledImages, RawImageSet, SplitSpec};
pub use mapper::{assign_cores, ChipModel, DeploymentError, Placement};
pub use retrieval::{EmbeddingSet, Index, SearchConfig, SearchMetrics};
pub use snn::{classify, embed, InitialPotential, ProbeRecord, Readout, SimConfig, SimError, Simulator};
pub use sweep::{sweep_time_steps, Dynamics, OpCountReport, SweepConfig, SweepResult};
