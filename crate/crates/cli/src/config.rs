//! Flat `key = value` experiment configuration.
//!
//! Keys are the `ExperimentConfig` field names. Blank lines and lines starting
//! with `#` are ignored.

use std::path::Path;

use adaptive_sgp::stream::ExperimentConfig;

use crate::CliError;

/// Applies one `key = value` pair to `cfg`.
pub fn apply(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), CliError> {
    let bad = |what: &str| CliError::Input(format!("config key '{key}': cannot parse '{value}' as {what}"));
    let v = value.trim();
    match key.trim() {
        "model_kind" => cfg.model_kind = v.parse().map_err(|e| CliError::Input(format!("{e}")))?,
        "window_t" => cfg.window_t = v.parse().map_err(|_| bad("an integer"))?,
        "capacity_m" => cfg.capacity_m = v.parse().map_err(|_| bad("an integer"))?,
        "lambda" => cfg.lambda = v.parse().map_err(|e| CliError::Input(format!("{e}")))?,
        "r_th" => cfg.r_th = v.parse().map_err(|_| bad("a number"))?,
        "init_iters" => cfg.init_iters = v.parse().map_err(|_| bad("an integer"))?,
        "inner_iters" => cfg.inner_iters = v.parse().map_err(|_| bad("an integer"))?,
        "lr" => cfg.lr = v.parse().map_err(|_| bad("a number"))?,
        "seed" => cfg.seed = v.parse().map_err(|_| bad("an integer"))?,
        "jitter" => cfg.jitter = v.parse().map_err(|_| bad("a number"))?,
        "ci_rule" => cfg.ci_rule = v.parse().map_err(|e| CliError::Input(format!("{e}")))?,
        other => return Err(CliError::Input(format!("unknown config key '{other}'"))),
    }
    Ok(())
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("config line {}: expected key = value", n + 1)))?;
        apply(&mut cfg, k, v)?;
    }
    Ok(cfg)
}

/// Defaults when no file is given.
pub fn load(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", p.display())))?;
            parse(&text)
        }
    }
}
