use alloc::boxed::Box;
use alloc::string::String;

/// Errors raised by the delighting core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("size mismatch: {what} expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("inpainting hole covers the whole image")]
    NoBoundary,
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("non-finite loss on sample `{sample}` ({detail})")]
    NonFinite { sample: String, detail: String },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
