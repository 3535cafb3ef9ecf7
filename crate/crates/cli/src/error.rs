use std::fmt;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<grokxor::Error> for CliError {
    fn from(e: grokxor::Error) -> Self {
        use grokxor::Error as E;
        let msg = e.to_string();
        match e {
            E::MissingKey(_)
            | E::UnknownKey(_)
            | E::DuplicateKey(_)
            | E::BadValue { .. }
            | E::Invalid { .. }
            | E::Syntax { .. } => CliError::Config(msg),
            E::Dimension { .. } | E::ZeroNorm(_) | E::NonFinite { .. } => CliError::Numeric(msg),
            E::Format(_) | E::Io(_) | E::Json(_) => CliError::Io(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_exit_codes() {
        let cases = [
            (grokxor::Error::UnknownKey("lr".into()), EXIT_CONFIG),
            (grokxor::Error::MissingKey("eta".into()), EXIT_CONFIG),
            (grokxor::Error::NonFinite { step: 3, neuron: 1 }, EXIT_NUMERIC),
            (grokxor::Error::Dimension { expected: 2, got: 3 }, EXIT_NUMERIC),
            (grokxor::Error::Format("bad header".into()), EXIT_IO),
        ];
        for (e, code) in cases {
            assert_eq!(CliError::from(e).code(), code);
        }
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(CliError::from(io).code(), EXIT_IO);
    }
}
