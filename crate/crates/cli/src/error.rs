use std::fmt;

use serde::Serialize;

/// Exit 2: the inputs are wrong. Exit 3: the inputs were fine but the numerics failed.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            message: &'a str,
            exit_code: i32,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        let (kind, message) = match self {
            CliError::Config(m) => ("config", m.as_str()),
            CliError::Numerical(m) => ("numerical", m.as_str()),
        };
        serde_json::to_string(&Wrapper {
            error: Body {
                kind,
                message,
                exit_code: self.exit_code(),
            },
        })
        .unwrap_or_else(|_| format!("{{\"error\":{{\"kind\":\"{kind}\"}}}}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<odmr_core::Error> for CliError {
    fn from(e: odmr_core::Error) -> Self {
        use odmr_core::Error as E;
        match e {
            // bad parameters or data coming from the user's files
            E::InvalidParameter(_) | E::InvalidData(_) | E::InvalidSequence(_) | E::DimensionMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            E::Curve { ref source, .. } if matches!(**source, E::InvalidParameter(_) | E::InvalidData(_)) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Numerical(format!("serializing output: {e}"))
    }
}
