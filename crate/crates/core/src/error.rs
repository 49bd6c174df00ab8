use thiserror::Error;

/// A fault raised inside a setup routine or kernel thread.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Fault {
    #[error("log of non-positive value {0}")]
    Domain(f32),
    #[error("hypothesis score is not finite")]
    NonFiniteScore,
    #[error("token {token} outside score vector of length {len}")]
    TokenOutOfRange { token: u32, len: usize },
    #[error("model blob {0} is not resident in model memory")]
    WeightsNotResident(u32),
    #[error("input item {0} is not live in its buffer")]
    InputNotLive(u64),
    #[error("buffer {0} is not bound in shared memory")]
    UnknownBuffer(u32),
    #[error("{0}")]
    Capacity(String),
    #[error("{0}")]
    Logic(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("accelerator is busy executing a decoding step")]
    Busy,
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("kernel {kernel_index}{}: {fault}", thread_id.map(|t| format!(" thread {t}")).unwrap_or_default())]
    Kernel {
        kernel_index: usize,
        thread_id: Option<u32>,
        fault: Fault,
    },
    #[error("simulation error: {0}")]
    Simulation(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Classification used for process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::Busy => ErrorCategory::Config,
            Error::Input(_) | Error::Io(_) => ErrorCategory::Input,
            Error::Step { source, .. } => source.category(),
            Error::Capacity(_) | Error::Kernel { .. } | Error::Simulation(_) => {
                ErrorCategory::Simulation
            }
        }
    }

    /// Maps a fault raised by a setup thread or kernel thread into an error
    /// tagged with its location. Capacity faults keep their own category.
    pub fn kernel(kernel_index: usize, thread_id: Option<u32>, fault: Fault) -> Self {
        match fault {
            Fault::Capacity(msg) => {
                Error::Capacity(format!("kernel {kernel_index}: {msg}"))
            }
            fault => Error::Kernel {
                kernel_index,
                thread_id,
                fault,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Config,
    Simulation,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
