//! Plain-text configuration files and shared flag parsing.
//!
//! The file format is one `key=value` per line with `#` comments. Keys match
//! the transfer configuration fields; command-line flags override whatever
//! the file set.

use crate::error::{Error, Result};
use crate::pipeline::{EngineKind, SeedSet, StyleTransferConfig};

/// Parses an injection-block list. Accepts `5`, `5-6`, `5,6` and the
/// bracketed form `[5,6]`; indices refer to upsampling blocks.
pub fn parse_blocks(text: &str) -> Result<Vec<usize>> {
    let trimmed = text.trim().trim_start_matches('[').trim_end_matches(']');
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for part in trimmed.split(|c: char| c == ',' || c == '-' || c.is_whitespace()) {
        if part.is_empty() {
            continue;
        }
        let idx: usize = part
            .parse()
            .map_err(|_| Error::Parameter(format!("invalid block index '{part}' in '{text}'")))?;
        out.push(idx);
    }
    if out.is_empty() {
        return Err(Error::Parameter(format!("no block indices in '{text}'")));
    }
    Ok(out)
}

/// Parses the engine selector.
pub fn parse_engine(text: &str) -> Result<EngineKind> {
    match text.trim().to_ascii_lowercase().as_str() {
        "toy" => Ok(EngineKind::Toy),
        "linear" => Ok(EngineKind::Linear),
        other => Err(Error::Parameter(format!(
            "unknown engine '{other}', expected 'toy' or 'linear'"
        ))),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(Error::Parameter(format!(
            "invalid boolean '{other}' for {key}"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Parameter(format!("invalid value '{value}' for {key}")))
}

/// Applies `key=value` lines to a configuration in place. Unknown keys are
/// rejected so typos surface instead of silently using defaults.
pub fn apply_config_text(cfg: &mut StyleTransferConfig, text: &str) -> Result<()> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parameter(format!("config line {} has no '=': '{raw}'", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "steps" => cfg.steps = parse_num(key, value)?,
            "spi_n" => cfg.spi_resample = parse_num(key, value)?,
            "alpha_c" => {
                cfg.alpha_c = parse_num(key, value)?;
                cfg.alpha_s = 1.0 - cfg.alpha_c;
            }
            "alpha_s" => {
                cfg.alpha_s = parse_num(key, value)?;
                cfg.alpha_c = 1.0 - cfg.alpha_s;
            }
            "blocks" => cfg.injection_up_blocks = parse_blocks(value)?,
            "guidance" | "guidance_scale" => cfg.guidance_scale = parse_num(key, value)?,
            "prompt_content" => cfg.prompt_content = value.to_string(),
            "prompt_style" => cfg.prompt_style = value.to_string(),
            "seed" => cfg.seeds = SeedSet::from_master(parse_num(key, value)?),
            "seed_weights" => cfg.seeds.weights = parse_num(key, value)?,
            "seed_codec" => cfg.seeds.codec = parse_num(key, value)?,
            "seed_embedder" => cfg.seeds.embedder = parse_num(key, value)?,
            "sgsa" => cfg.ablation.sgsa = parse_bool(key, value)?,
            "spi" => cfg.ablation.spi = parse_bool(key, value)?,
            "ca_adain" => cfg.ablation.ca_adain = parse_bool(key, value)?,
            "dfca" => cfg.ablation.dfca = parse_bool(key, value)?,
            "engine" => cfg.engine = parse_engine(value)?,
            other => {
                return Err(Error::Parameter(format!(
                    "unknown config key '{other}' on line {}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(())
}
