use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("sensitive group {group} has {size} member(s); at least 2 are required")]
    SingletonGroup { group: usize, size: usize },

    #[error("blend weight {0} is outside [0, 1]")]
    LambdaOutOfRange(f64),

    #[error("propensity e[{row}][{treatment}] is zero for the observed treatment")]
    ZeroPropensity { row: usize, treatment: usize },

    #[error("non-finite value in feature {feature} at row {row}")]
    NonFiniteFeature { feature: String, row: usize },

    #[error("tree depth {0} is not supported (maximum is 3)")]
    DepthTooLarge(usize),

    #[error("invalid input: {0}")]
    Invalid(String),
}
