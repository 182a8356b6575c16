//! Error phases mapped to process exit codes: configuration problems exit
//! 2, data problems 3, runtime failures 4.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Config,
    Data,
    Run,
}

impl Phase {
    pub fn exit_code(&self) -> i32 {
        match self {
            Phase::Config => 2,
            Phase::Data => 3,
            Phase::Run => 4,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Phase::Config => "config error",
            Phase::Data => "data error",
            Phase::Run => "runtime error",
        }
    }
}

#[derive(Debug)]
pub struct PhasedError {
    pub phase: Phase,
    pub error: anyhow::Error,
}

impl fmt::Display for PhasedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:#}", self.phase.label(), self.error)
    }
}

pub type CliResult<T> = Result<T, PhasedError>;

/// Attach a phase to any error as it crosses into the CLI layer.
pub trait PhasedExt<T> {
    fn phase(self, phase: Phase) -> CliResult<T>;
}

impl<T, E> PhasedExt<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn phase(self, phase: Phase) -> CliResult<T> {
        self.map_err(|e| PhasedError {
            phase,
            error: e.into(),
        })
    }
}
