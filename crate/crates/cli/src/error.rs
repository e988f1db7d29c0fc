use thiserror::Error;

/// Failure classes mapped to process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Validation,
    Numerical,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Validation => 2,
            FailureKind::Numerical => 3,
        }
    }
}

#[derive(Debug, Error)]
#[error("{}{message}", stage.map(|s| format!("[{s}] ")).unwrap_or_default())]
pub struct CliError {
    pub kind: FailureKind,
    pub stage: Option<&'static str>,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { kind: FailureKind::Validation, stage: None, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { kind: FailureKind::Numerical, stage: None, message: message.into() }
    }

    pub fn at(mut self, stage: &'static str) -> Self {
        self.stage.get_or_insert(stage);
        self
    }
}

impl From<shapecov::Error> for CliError {
    fn from(e: shapecov::Error) -> Self {
        let kind = if e.is_validation() { FailureKind::Validation } else { FailureKind::Numerical };
        Self { kind, stage: None, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::validation(e.to_string())
    }
}

/// Tags errors with the pipeline stage that produced them.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T, E: Into<CliError>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|e| e.into().at(stage))
    }
}
