//! Training-tuple synthesis from one-light-at-a-time captures.

pub mod capture;
pub mod config;
pub mod environment;
pub mod olat;
pub mod sample;
pub mod soft;
pub mod target;

pub use capture::{regions, OlatCapture, Parsing, FULL_FLASH_COUNT};
pub use config::{HfMaskParams, KindMix, SynthConfig};
pub use environment::{composite_environment, tint_gains, EnvironmentParams, SourceKind};
pub use olat::{build_olat_set, detect_speculars, remove_ambient, OlatSet};
pub use sample::{assemble_sample, synthesize, SampleMeta, SynthesisContext, TrainingSample};
pub use soft::{build_hf_mask, synth_soft_shadow};
pub use target::build_delit_target;
