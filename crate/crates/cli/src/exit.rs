//! Process exit codes and the mapping from errors to them.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// A deterministic verification check failed.
    VerifyFailed,
    /// Configuration could not be parsed or is invalid.
    Config,
    /// Numeric or other runtime failure.
    Numeric,
    /// Chain file missing, empty or unusable.
    Data,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::VerifyFailed => 1,
            ExitKind::Config => 2,
            ExitKind::Numeric => 3,
            ExitKind::Data => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn library_kind(e: &hedgelab::Error) -> ExitKind {
    use hedgelab::Error::*;
    match e {
        Validation(_) => ExitKind::Config,
        Data(_) | EmptySlice(_) | Csv(_) => ExitKind::Data,
        Domain(_) | Numeric(_) | Undefined(_) | Io(_) | Json(_) => ExitKind::Numeric,
    }
}

/// Exit code for an error: the outermost [`CliError`] in the chain wins,
/// then the first library error.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    // Context values are only reachable through anyhow's own downcast.
    if let Some(c) = err.downcast_ref::<CliError>() {
        return c.kind.code();
    }
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return c.kind.code();
        }
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<hedgelab::Error>() {
            return library_kind(e).code();
        }
    }
    ExitKind::Numeric.code()
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes() {
        let e = anyhow::Error::new(hedgelab::Error::Numeric("nan".into())).context("training");
        assert_eq!(exit_code(&e), 3);
        let e = anyhow::Error::new(hedgelab::Error::Validation("bad".into()));
        assert_eq!(exit_code(&e), 2);
        let e: anyhow::Error = Err::<(), _>(hedgelab::Error::Numeric("x".into()))
            .context(CliError::new(ExitKind::Data, "chain"))
            .unwrap_err();
        assert_eq!(exit_code(&e), 4);
        assert_eq!(exit_code(&anyhow::anyhow!("plain")), 3);
    }
}
