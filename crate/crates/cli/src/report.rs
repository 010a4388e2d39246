use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use decmdp::io::parse_model;
use decmdp::model::{FactoredDecMDP, Model};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::{Common, EXIT_BUDGET, EXIT_USAGE, EXIT_VALIDATION};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] decmdp::Error),

    #[error("{0}")]
    Usage(String),

    #[error("model failed validation with {0} violation(s)")]
    Invalid(usize),

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(e) if e.is_budget() => EXIT_BUDGET,
            CliError::Model(decmdp::Error::JointTooLarge { .. }) => EXIT_BUDGET,
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_VALIDATION,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// A parsed and validated model with the digest of its file.
pub struct Loaded {
    pub model: Model,
    pub digest: String,
}

pub fn load_model(common: &Common) -> CliResult<Loaded> {
    let path = common
        .model
        .as_deref()
        .ok_or_else(|| CliError::Usage("--model is required".into()))?;
    let text = read_file(path)?;
    let model = parse_model(&text)?;
    let report = model.validate();
    if !report.is_valid() {
        for v in &report.violations {
            eprintln!("violation: {:?} at {} (residual {:e})", v.kind, v.location, v.residual);
        }
        return Err(CliError::Invalid(report.violations.len()));
    }
    Ok(Loaded {
        model,
        digest: digest(&text),
    })
}

pub fn load_factored(common: &Common) -> CliResult<(FactoredDecMDP, String)> {
    let loaded = load_model(common)?;
    match loaded.model {
        Model::Factored(f) => Ok((f, loaded.digest)),
        Model::Joint(_) => Err(CliError::Model(decmdp::Error::InvalidArgument(
            "this command needs a factored model".into(),
        ))),
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: Vec<String>,
    pub model_digest: Option<String>,
    pub seed: u64,
    pub result: Value,
    pub wall_clock_ms: f64,
}

/// Times a command body and emits its report on stdout and at `--out`.
pub struct Run {
    started: Instant,
    seed: u64,
    out: Option<PathBuf>,
}

impl Run {
    pub fn start(common: &Common) -> CliResult<Run> {
        if let Some(n) = common.threads {
            if n == 0 {
                return Err(CliError::Usage("--threads must be positive".into()));
            }
            // A second initialization only happens in-process and is harmless.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        if !(common.tol >= 0.0) {
            return Err(CliError::Usage("--tol must be nonnegative".into()));
        }
        Ok(Run {
            started: Instant::now(),
            seed: common.seed,
            out: common.out.clone(),
        })
    }

    pub fn finish(self, digest: Option<String>, result: Value) -> CliResult<()> {
        self.finish_to(digest, result, self.out.clone())
    }

    pub fn finish_to(&self, digest: Option<String>, result: Value, out: Option<PathBuf>) -> CliResult<()> {
        let report = RunReport {
            command: std::env::args().skip(1).collect(),
            model_digest: digest,
            seed: self.seed,
            result,
            wall_clock_ms: self.started.elapsed().as_secs_f64() * 1e3,
        };
        let text = serde_json::to_string_pretty(&report).expect("reports serialize");
        if let Some(path) = out {
            write_file(&path, &text)?;
        }
        let mut stdout = std::io::stdout().lock();
        // A closed pipe (e.g. `| head`) is not an error for the run.
        let _ = writeln!(stdout, "{text}");
        Ok(())
    }
}
