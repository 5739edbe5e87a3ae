use std::fmt;
use std::process::ExitCode;

use contexp_core::Error;

/// Process exit codes, one per error class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Code {
    Internal = 1,
    /// Bad flags; clap uses the same code for parse errors.
    Usage = 2,
    /// Inputs that are readable but unusable: knob ranges, odd or
    /// indivisible image sizes, invalid configuration.
    InvalidInput = 3,
    Io = 4,
    /// A dataset, raw or checkpoint file that does not parse.
    Malformed = 5,
    Training = 6,
    MissingCheckpoint = 7,
}

#[derive(Debug)]
pub struct CliError {
    pub code: Code,
    pub message: String,
    pub hint: Option<String>,
}

impl CliError {
    pub fn usage(message: impl Into<String>, hint: impl Into<String>) -> Self {
        Self { code: Code::Usage, message: message.into(), hint: Some(hint.into()) }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code as u8)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error: {}", self.message)?;
        if let Some(h) = &self.hint {
            write!(f, "\nhint: {h}")?;
        }
        Ok(())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (code, hint) = match &e {
            Error::Knob(_) => (
                Code::InvalidInput,
                Some("alpha1 must lie in [1, 100]; alpha2 in [0, 1], or [-0.5, 1.5] with --extrapolate".into()),
            ),
            Error::Indivisible { .. } => {
                (Code::InvalidInput, Some("crop or pad the raw so its packed size is a multiple of 2^depth".into()))
            }
            Error::Raw(_) => (Code::InvalidInput, Some("raw mosaics must have positive, even dimensions".into())),
            Error::Config(_) => (Code::InvalidInput, Some("check the flag values; see --help".into())),
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                (Code::Io, Some("check that the path exists".into()))
            }
            Error::Io { .. } => (Code::Io, Some("check permissions and free space".into())),
            Error::Format { .. } => (
                Code::Malformed,
                Some(
                    "the file is corrupt or from another format version; regenerate it (synth --force, or retrain)"
                        .into(),
                ),
            ),
            Error::Diverged { .. } => {
                (Code::Training, Some("lower the learning rates (--lr-high, --lr-low) or check the dataset".into()))
            }
            Error::FrozenParamChanged(_) => (Code::Training, Some("this is a bug; please report it".into())),
            Error::MissingCheckpoint { .. } => {
                (Code::MissingCheckpoint, Some("run the command above, or pass --train-missing to train it now".into()))
            }
            Error::Model(_) => (
                Code::InvalidInput,
                Some(
                    "the checkpoint does not fit this command (for example fine-tuning an already modulated model)"
                        .into(),
                ),
            ),
            Error::Tensor(_) | Error::Metric(_) => (Code::Internal, None),
        };
        Self { code, message, hint }
    }
}
