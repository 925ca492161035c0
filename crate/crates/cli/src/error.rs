use std::fmt;

use serde::Serialize;

/// Exit status for bad input, flags or config.
pub const EXIT_INPUT: i32 = 1;
/// Exit status for failures inside the model backend.
pub const EXIT_BACKEND: i32 = 2;

#[derive(Debug, Serialize)]
pub struct CliError {
    #[serde(rename = "error")]
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn input(kind: &str, message: impl Into<String>) -> Self {
        CliError {
            kind: kind.to_string(),
            message: message.into(),
            exit_code: EXIT_INPUT,
        }
    }

    pub fn backend(message: impl Into<String>) -> Self {
        CliError {
            kind: "BackendError".to_string(),
            message: message.into(),
            exit_code: EXIT_BACKEND,
        }
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error record serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<pllbench_core::Error> for CliError {
    fn from(e: pllbench_core::Error) -> Self {
        CliError {
            kind: e.kind().to_string(),
            message: e.to_string(),
            exit_code: if e.is_backend() { EXIT_BACKEND } else { EXIT_INPUT },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        pllbench_core::Error::from(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        pllbench_core::Error::from(e).into()
    }
}

pub type CliResult<T> = Result<T, CliError>;
