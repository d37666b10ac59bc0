use std::fmt;
use std::path::Path;

use rewardlab::LabError;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config = 2,
    MissingInput = 3,
    Numeric = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: ExitKind,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn config(message: impl Into<String>) -> anyhow::Error {
    Failure {
        kind: ExitKind::Config,
        message: message.into(),
    }
    .into()
}

pub fn numeric(message: impl Into<String>) -> anyhow::Error {
    Failure {
        kind: ExitKind::Numeric,
        message: message.into(),
    }
    .into()
}

pub fn require_file(path: &Path) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure {
            kind: ExitKind::MissingInput,
            message: format!("missing input file {}", path.display()),
        }
        .into())
    }
}

pub fn ensure_finite(what: &str, values: impl IntoIterator<Item = f64>) -> anyhow::Result<()> {
    match values.into_iter().find(|v| !v.is_finite()) {
        Some(v) => Err(numeric(format!("non-finite value {v} in {what}"))),
        None => Ok(()),
    }
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.kind as i32;
        }
        if let Some(e) = cause.downcast_ref::<LabError>() {
            return match e {
                LabError::Config { .. } => ExitKind::Config as i32,
                LabError::Numeric(_) => ExitKind::Numeric as i32,
                _ => 1,
            };
        }
    }
    1
}
