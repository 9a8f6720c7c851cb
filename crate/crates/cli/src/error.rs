use stefan_core::StefanError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("cannot write output: {0}")]
    Output(String),

    #[error(transparent)]
    Core(#[from] StefanError),

    #[error("run aborted at t = {t}: {source}")]
    Aborted { t: f64, source: StefanError },

    #[error("{0} invariant check(s) failed")]
    Invariant(usize),
}

impl CliError {
    /// 0 ok, 1 invariant failure, 2 config, 3 numerical, 4 aborted run.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invariant(_) => 1,
            CliError::Io { .. } | CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                StefanError::InvalidConfig(_) | StefanError::InvalidGrid(_) | StefanError::CutoffExceeded { .. } => 2,
                _ => 3,
            },
            CliError::Output(_) => 3,
            CliError::Aborted { .. } => 4,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Invariant(2).exit_code(), 1);
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(StefanError::InvalidConfig("r".into())).exit_code(), 2);
        assert_eq!(CliError::Core(StefanError::WindowEmpty).exit_code(), 3);
        assert_eq!(
            CliError::Aborted {
                t: 0.5,
                source: StefanError::WindowEmpty
            }
            .exit_code(),
            4
        );
    }
}
