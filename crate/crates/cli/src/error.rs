use tempered_hermite::kernels::KernelError;
use tempered_hermite::moments::MomentsError;
use tempered_hermite::regress::RegressError;
use tempered_hermite::simulate::SimulateError;
use tempered_hermite::specfun::SpecfunError;
use tempered_hermite::verify::VerifyError;
use thiserror::Error;

/// Failures of a subcommand, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("verification failed: {0}")]
    VerifyFailed(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    NonConvergence(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerifyFailed(_) => 1,
            CliError::Invalid(_) | CliError::Io(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<SpecfunError> for CliError {
    fn from(e: SpecfunError) -> Self {
        match e {
            SpecfunError::Domain(_) => CliError::Invalid(e.to_string()),
            SpecfunError::Overflow(_) => CliError::NonConvergence(e.to_string()),
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::NotConverged { .. } => CliError::NonConvergence(e.to_string()),
            KernelError::Specfun(s) => s.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<MomentsError> for CliError {
    fn from(e: MomentsError) -> Self {
        match e {
            MomentsError::NotConverged { .. } => CliError::NonConvergence(e.to_string()),
            MomentsError::Kernel(k) => k.into(),
            MomentsError::Specfun(s) => s.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        match e {
            SimulateError::TailBound { .. } | SimulateError::FitDegenerate(_) => {
                CliError::NonConvergence(e.to_string())
            }
            SimulateError::Kernel(k) => k.into(),
            SimulateError::Moments(m) => m.into(),
            SimulateError::Specfun(s) => s.into(),
            SimulateError::Io(io) => CliError::Io(io),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<RegressError> for CliError {
    fn from(e: RegressError) -> Self {
        match e {
            RegressError::Simulate(s) => s.into(),
            RegressError::Kernel(k) => k.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::UnknownSuite(_) => CliError::Invalid(e.to_string()),
            VerifyError::Specfun(s) => s.into(),
            VerifyError::Kernel(k) => k.into(),
            VerifyError::Moments(m) => m.into(),
            VerifyError::Simulate(s) => s.into(),
            VerifyError::Regress(r) => r.into(),
        }
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        CliError::Invalid(format!("configuration: {e}"))
    }
}

impl From<toml::ser::Error> for CliError {
    fn from(e: toml::ser::Error) -> Self {
        CliError::Invalid(format!("cannot serialize configuration: {e}"))
    }
}
