//! Flat TOML job files merged under command-line flags.

use serde::de::DeserializeOwned;
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Failures the driver reports, grouped by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed configuration (exit 2).
    Config { line: usize, msg: String },
    Core(dprc::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config { line: 0, msg: msg.into() }
    }

    pub fn exit_code(&self) -> i32 {
        use dprc::Error::*;
        match self {
            CliError::Config { .. } | CliError::Core(Parse { .. }) => 2,
            CliError::Core(Numerical(_) | SupportExhausted { .. } | BracketExhausted(_)) => 3,
            CliError::Core(Domain(_) | Dimension(_)) => 4,
        }
    }

    /// Single line: `error kind=<kind> [line=<n>] msg=<json string>`.
    pub fn line(&self) -> String {
        let (kind, line, msg) = match self {
            CliError::Config { line, msg } => ("config", *line, msg.clone()),
            CliError::Core(e) => {
                let kind = match e {
                    dprc::Error::Domain(_) => "domain",
                    dprc::Error::Dimension(_) => "dimension",
                    dprc::Error::Parse { .. } => "parse",
                    dprc::Error::Numerical(_) => "numerical",
                    dprc::Error::SupportExhausted { .. } => "support_exhausted",
                    dprc::Error::BracketExhausted(_) => "bracket_exhausted",
                };
                let line = if let dprc::Error::Parse { line, .. } = e { *line } else { 0 };
                (kind, line, e.to_string())
            }
        };
        let msg = serde_json::to_string(&msg.replace('\n', " ")).unwrap_or_default();
        if line > 0 {
            format!("error kind={kind} line={line} msg={msg}")
        } else {
            format!("error kind={kind} msg={msg}")
        }
    }
}

impl From<dprc::Error> for CliError {
    fn from(e: dprc::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Keys accepted in every job file next to the subcommand's own.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct GlobalKeys {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
}

/// Reads `path` twice: once for the global keys, once strictly for the job keys.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>, globals: &[&str]) -> CliResult<(T, GlobalKeys)> {
    let Some(path) = path else {
        return Ok((T::default(), GlobalKeys::default()));
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| toml_error(&text, &e))?;
    let mut global_table = toml::Table::new();
    for key in globals {
        if let Some(v) = table.remove(*key) {
            global_table.insert((*key).to_string(), v);
        }
    }
    let g: GlobalKeys = global_table.try_into().map_err(|e: toml::de::Error| keyed_error(&text, &e))?;
    let job: T = table.try_into().map_err(|e: toml::de::Error| keyed_error(&text, &e))?;
    Ok((job, g))
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn toml_error(text: &str, e: &toml::de::Error) -> CliError {
    let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
    CliError::Config { line, msg: e.message().to_string() }
}

/// Errors from re-deserializing a table carry no span; locate the offending key by name.
fn keyed_error(text: &str, e: &toml::de::Error) -> CliError {
    let msg = e.message().to_string();
    let key = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .or_else(|| msg.split("for key `").nth(1).and_then(|s| s.split('`').next()).map(str::to_string));
    let line = key
        .and_then(|k| {
            text.lines().position(|l| {
                let l = l.trim_start();
                l.strip_prefix(k.as_str()).is_some_and(|rest| rest.trim_start().starts_with('='))
            })
        })
        .map(|i| i + 1)
        .unwrap_or(0);
    CliError::Config { line, msg }
}

/// Per-subcommand argument struct usable both as clap flags and as a job file.
/// Every field is optional; `merge` lets flags override file values.
#[macro_export]
macro_rules! job_args {
    ($(#[$sm:meta])* $name:ident { $( $(#[$m:meta])* $field:ident : $ty:ty ),* $(,)? }) => {
        $(#[$sm])*
        #[derive(Debug, Clone, Default, clap::Args, serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $( $(#[$m])* #[arg(long)] pub $field: Option<$ty>, )*
        }

        impl $name {
            pub fn merge(self, file: Self) -> Self {
                Self { $( $field: self.$field.or(file.$field), )* }
            }
        }
    };
}
