//! Poisson flow joint model: perturbation kernels in an augmented space, an
//! exact field oracle, a preconditioned conditional denoiser, a Heun sampler
//! with condition refinement, image-quality metrics and the experiment
//! harness that ties them together.

pub mod augment;
pub mod data;
pub mod error;
pub mod fingerprint;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod real;
pub mod sampler;
pub mod volume;

pub use augment::{AugmentationParams, NoiseDraw};
pub use data::{Archive, DatasetSpec, PairedVolume, PhantomSpec, Tensor};
pub use error::{ArchiveError, Error, Result};
pub use fingerprint::fingerprint;
pub use metrics::{EvalOptions, EvalReport};
pub use model::{Checkpoint, DenoiserModel, TrainConfig};
pub use nn::{Architecture, DataLayout};
pub use oracle::ChargeSet;
pub use real::Real;
pub use sampler::{Denoise, InitMode, SamplerConfig, SamplerSchedule};
pub use volume::{Image, JointVolume, Phase, Role, PHASES};
