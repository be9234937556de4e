use thiserror::Error;

/// Errors produced anywhere in the prediction pipeline.
#[derive(Debug, Error)]
pub enum LmcError {
    /// A configuration field failed validation.
    #[error("config error: field `{field}`: {message}")]
    Config { field: String, message: String },

    /// An operation was called with inputs violating its contract.
    #[error("contract violation in {op}: {message}")]
    Contract { op: &'static str, message: String },

    /// A source sequence is too short to cut a training pair from.
    #[error("sequence too short for sampling: length {actual}, required at least {required}")]
    Sampling { required: usize, actual: usize },

    /// A dataset or report file is malformed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A checkpoint file is malformed or incompatible with the model.
    #[error("checkpoint error in {component}: {message}")]
    Checkpoint { component: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A loss or parameter became non-finite during training.
    #[error("numerical failure: {context}")]
    NonFinite { context: String },
}

impl LmcError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        LmcError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn contract(op: &'static str, message: impl Into<String>) -> Self {
        LmcError::Contract {
            op,
            message: message.into(),
        }
    }

    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        LmcError::Format {
            offset,
            message: message.into(),
        }
    }

    pub fn checkpoint(component: impl Into<String>, message: impl Into<String>) -> Self {
        LmcError::Checkpoint {
            component: component.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 config/usage, 3 i/o, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            LmcError::Config { .. }
            | LmcError::Contract { .. }
            | LmcError::Sampling { .. }
            | LmcError::Checkpoint { .. } => 2,
            LmcError::Format { .. } | LmcError::Io(_) => 3,
            LmcError::NonFinite { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, LmcError>;
