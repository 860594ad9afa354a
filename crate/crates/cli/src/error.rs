use std::fmt;
use std::path::Path;

use pointlift_core::edit::EditError;
use pointlift_core::pipeline::{FailureClass, PipelineError};
use pointlift_core::render::RenderError;
use pointlift_core::scene::SceneError;
use serde_json::json;

/// A failed subcommand: its exit class plus a stable error code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub class: FailureClass,
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn validation(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            class: FailureClass::Validation,
            code,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            class: FailureClass::Io,
            code: "io_error",
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class {
            FailureClass::Validation => 1,
            FailureClass::Io => 2,
            FailureClass::Backend => 3,
        }
    }

    /// Single-line JSON for standard error.
    pub fn to_json_line(&self) -> String {
        json!({ "error": self.code, "message": self.message }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        Self {
            class: e.class(),
            code: e.code(),
            message: e.to_string(),
        }
    }
}

macro_rules! via_pipeline {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                PipelineError::from(e).into()
            }
        }
    )*};
}

via_pipeline!(SceneError, RenderError, EditError);
