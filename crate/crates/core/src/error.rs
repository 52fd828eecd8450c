use alloc::string::String;

/// Errors produced by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("non-finite value in `{segment}` (index {index})")]
    NonFinite { segment: String, index: usize },

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("direction is not unit length (norm {0})")]
    NonUnitDirection(f64),

    #[error("image height {height} is not divisible by thickness factor {factor}")]
    IndivisibleHeight { height: usize, factor: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),

    #[error("direction {0} is held out and cannot enter the training loss")]
    HeldOutDirection(usize),

    #[error("direction index {0} is out of range")]
    MissingDirection(usize),

    #[error("matrix is not symmetric")]
    Asymmetric,

    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall { width: usize, height: usize, window: usize },

    #[error("reference has zero energy inside the mask")]
    ZeroReference,

    #[error("mask selects no pixels")]
    EmptyMask,

    #[error("fewer than {required} usable directions ({available})")]
    TooFewDirections { required: usize, available: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
