//! Exit-code classification.

use backboot::Error;

pub const CONFIG: u8 = 2;
pub const IO: u8 = 3;
pub const NUMERICAL: u8 = 4;

/// Invalid configuration or command-line values.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn classify_lib(e: &Error) -> u8 {
    match e.root() {
        Error::InvalidInput(_)
        | Error::UnknownFeature(_)
        | Error::InvalidTau(_)
        | Error::Infeasible(_)
        | Error::EmptyPlan(_) => CONFIG,
        Error::Io { .. }
        | Error::Csv(_)
        | Error::Json(_)
        | Error::Schema(_)
        | Error::Parse { .. }
        | Error::DuplicateKey { .. }
        | Error::Gap { .. } => IO,
        _ => NUMERICAL,
    }
}

/// Maps an error chain to a process exit code.
pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return classify_lib(e);
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return IO;
        }
    }
    NUMERICAL
}
