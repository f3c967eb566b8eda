//! Crate-wide error type.

use thiserror::Error;

use crate::data::DataError;
use crate::engine::EngineError;
use crate::net::NetError;
use crate::ops::OpsError;
use crate::optim::OptimError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes used by the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

impl Error {
    /// Usage errors are bad parameters, data errors are unreadable or
    /// inconsistent inputs, numeric failures are diverged or wrong numbers.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Engine(EngineError::DivergedLoss { .. }) => exit::NUMERIC,
            Error::Engine(EngineError::InvalidRun(_)) => exit::USAGE,
            Error::Engine(EngineError::Net(e)) | Error::Net(e) => net_code(e),
            Error::Engine(EngineError::Optim(OptimError::Net(e))) | Error::Optim(OptimError::Net(e)) => net_code(e),
            Error::Ops(OpsError::NonFiniteLogit(_)) => exit::NUMERIC,
            Error::Tensor(_) | Error::Ops(_) => exit::NUMERIC,
            _ => exit::DATA,
        }
    }
}

fn net_code(e: &NetError) -> i32 {
    match e {
        NetError::InvalidConfig(_) => exit::USAGE,
        NetError::Ops(OpsError::NonFiniteLogit(_)) => exit::NUMERIC,
        _ => exit::DATA,
    }
}
