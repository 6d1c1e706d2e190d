use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure carries the module that raised it, so a pipeline error can
/// be traced back to the stage that produced it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("[{module}] configuration error: {message}")]
    Config { module: &'static str, message: String },

    #[error("[{module}] data error: {message}")]
    Data { module: &'static str, message: String },

    #[error("[{module}] numerical non-convergence: {message}")]
    NonConvergence { module: &'static str, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn config(module: &'static str, message: impl Into<String>) -> Self {
        Error::Config {
            module,
            message: message.into(),
        }
    }

    pub fn data(module: &'static str, message: impl Into<String>) -> Self {
        Error::Data {
            module,
            message: message.into(),
        }
    }

    pub fn non_convergence(module: &'static str, message: impl Into<String>) -> Self {
        Error::NonConvergence {
            module,
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Data { .. } | Error::Io { .. } | Error::Json { .. } => 3,
            Error::NonConvergence { .. } => 4,
        }
    }

    /// A short remediation hint for the user.
    pub fn hint(&self) -> &'static str {
        match self {
            Error::Config { module: "bootstrap-design", .. } => {
                "widen the control-limit bounds, lower the block length, or check that the residual source is not degenerate"
            }
            Error::Config { module: "svm-engine", .. } => {
                "check the SVM settings (lambda > 0, epsilon >= 0, gamma > 0, m >= 2) and delta_min"
            }
            Error::Config { .. } => "check the configuration keys and values against the documented schema",
            Error::Data { module: "panel-core", .. } => {
                "check the panel CSV: header `time,<id>,...`, constant time step, numeric or empty cells"
            }
            Error::Data { .. } => "the input data do not support this step; inspect pool sizes and missing-value rates",
            Error::NonConvergence { .. } => {
                "raise the iteration limit or the replication count, or relax the accuracy target"
            }
            Error::Io { .. } => "check that the path exists and is writable",
            Error::Json { .. } => "the file is not a valid artifact for this version; re-run the producing command",
        }
    }
}
