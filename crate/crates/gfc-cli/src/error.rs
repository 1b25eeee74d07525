use std::fmt;

pub const OK: i32 = 0;
pub const CONFIG: i32 = 2;
pub const ESTIMATION: i32 = 3;
pub const OVERLAP: i32 = 4;
pub const VALIDATION: i32 = 5;

#[derive(Debug)]
pub enum CliError {
    Core(gfc_core::Error),
    Config(String),
    Validation(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Core(gfc_core::Error::OverlapRefused { .. }) => OVERLAP,
            CliError::Core(e) if e.is_config() => CONFIG,
            CliError::Core(_) => ESTIMATION,
            CliError::Config(_) => CONFIG,
            CliError::Validation(_) => VALIDATION,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => {
                let module = match e {
                    gfc_core::Error::OverlapRefused { .. } | gfc_core::Error::Scenario(_) => "forecast",
                    gfc_core::Error::Policy(_) => "exposure",
                    gfc_core::Error::Unestimable { .. } | gfc_core::Error::Estimation(_) => "estimate",
                    gfc_core::Error::Oracle(_) | gfc_core::Error::Dgp(_) => "simulator",
                    _ => "panel",
                };
                write!(f, "{module}: {e}")
            }
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Validation(m) => write!(f, "validation: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<gfc_core::Error> for CliError {
    fn from(e: gfc_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}
