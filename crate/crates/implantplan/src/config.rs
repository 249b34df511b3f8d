//! Experiment configuration as a flat `key=value` text format.
//!
//! One file drives the whole pipeline: network topology, training
//! hyperparameters, masking and loss settings. [`PipelineConfig::to_text`]
//! renders a canonical form — fixed key order, `Display` number formatting —
//! which checkpoints embed as their compatibility fingerprint, so "same
//! text" means "same experiment".
//!
//! Parsing starts from the defaults and applies overrides; unknown or
//! duplicated keys are errors rather than silent typo sinks.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::trainer::TrainConfig;

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        if self.network.use_spb && self.train.crop_size != self.network.input_size {
            return Err(Error::Config(format!(
                "use_spb requires crop_size {:?} == input_size {:?}, otherwise the \
                 slope branch never trains",
                self.train.crop_size, self.network.input_size
            )));
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text(c)) == c` for any valid config.
    pub fn to_text(&self) -> String {
        let n = &self.network;
        let t = &self.train;
        let mut s = String::new();
        let csv =
            |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        writeln!(s, "# network").unwrap();
        writeln!(s, "stem_channels={}", csv(&n.stem_channels)).unwrap();
        writeln!(s, "input_size={}", csv(&n.input_size)).unwrap();
        writeln!(s, "use_ndp={}", n.use_ndp).unwrap();
        writeln!(s, "use_spb={}", n.use_spb).unwrap();
        writeln!(s, "dilation_rates={}", csv(&n.ndp.dilation_rates)).unwrap();
        writeln!(s, "branch_channels={}", n.ndp.branch_channels).unwrap();
        writeln!(s, "node_grid={}", csv(&n.ndp.node_grid)).unwrap();
        writeln!(s, "gcn_hidden={}", n.ndp.gcn_hidden).unwrap();
        writeln!(s, "spb_hidden={}", n.spb_hidden).unwrap();
        writeln!(s, "spb_dropout={}", n.spb_dropout).unwrap();
        writeln!(s, "# train").unwrap();
        writeln!(s, "batch_size={}", t.batch_size).unwrap();
        writeln!(s, "base_lr={}", t.base_lr).unwrap();
        writeln!(s, "weight_decay={}", t.weight_decay).unwrap();
        writeln!(s, "warmup_steps={}", t.warmup_steps).unwrap();
        writeln!(s, "total_steps={}", t.total_steps).unwrap();
        writeln!(s, "crop_size={}", csv(&t.crop_size)).unwrap();
        writeln!(s, "seed={}", t.seed).unwrap();
        writeln!(s, "fg_oversample={}", t.fg_oversample).unwrap();
        writeln!(s, "eval_every={}", t.eval_every).unwrap();
        writeln!(s, "target_dice={}", t.target_dice).unwrap();
        writeln!(s, "target_slope_mae={}", t.target_slope_mae).unwrap();
        writeln!(s, "# masking").unwrap();
        writeln!(s, "radius={}", t.masking.radius).unwrap();
        writeln!(s, "fill_value={}", t.masking.fill_value).unwrap();
        writeln!(s, "max_offset={}", t.masking.max_offset).unwrap();
        writeln!(s, "mask_seed={}", t.masking.rng_seed).unwrap();
        writeln!(s, "# loss").unwrap();
        writeln!(s, "ce_normalize={}", t.loss.ce_normalize).unwrap();
        writeln!(s, "slope_weight={}", t.loss.slope_weight).unwrap();
        s
    }

    /// Parse overrides on top of the defaults and validate the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = PipelineConfig::default();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key '{key}'")));
            }
            c.apply(key, value)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::format(path, format!("cannot read config: {e}")))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::format(path, msg),
            other => other,
        })
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let n = &mut self.network;
        let t = &mut self.train;
        match key {
            "stem_channels" => n.stem_channels = parse_array::<4>(key, value)?,
            "input_size" => n.input_size = parse_array::<3>(key, value)?,
            "use_ndp" => n.use_ndp = parse_scalar(key, value)?,
            "use_spb" => n.use_spb = parse_scalar(key, value)?,
            "dilation_rates" => n.ndp.dilation_rates = parse_array::<3>(key, value)?,
            "branch_channels" => n.ndp.branch_channels = parse_scalar(key, value)?,
            "node_grid" => n.ndp.node_grid = parse_array::<3>(key, value)?,
            "gcn_hidden" => n.ndp.gcn_hidden = parse_scalar(key, value)?,
            "spb_hidden" => n.spb_hidden = parse_scalar(key, value)?,
            "spb_dropout" => n.spb_dropout = parse_scalar(key, value)?,
            "batch_size" => t.batch_size = parse_scalar(key, value)?,
            "base_lr" => t.base_lr = parse_scalar(key, value)?,
            "weight_decay" => t.weight_decay = parse_scalar(key, value)?,
            "warmup_steps" => t.warmup_steps = parse_scalar(key, value)?,
            "total_steps" => t.total_steps = parse_scalar(key, value)?,
            "crop_size" => t.crop_size = parse_array::<3>(key, value)?,
            "seed" => t.seed = parse_scalar(key, value)?,
            "fg_oversample" => t.fg_oversample = parse_scalar(key, value)?,
            "eval_every" => t.eval_every = parse_scalar(key, value)?,
            "target_dice" => t.target_dice = parse_scalar(key, value)?,
            "target_slope_mae" => t.target_slope_mae = parse_scalar(key, value)?,
            "radius" => t.masking.radius = parse_scalar(key, value)?,
            "fill_value" => t.masking.fill_value = parse_scalar(key, value)?,
            "max_offset" => t.masking.max_offset = parse_scalar(key, value)?,
            "mask_seed" => t.masking.rng_seed = parse_scalar(key, value)?,
            "ce_normalize" => t.loss.ce_normalize = parse_scalar(key, value)?,
            "slope_weight" => t.loss.slope_weight = parse_scalar(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_array<const N: usize>(key: &str, value: &str) -> Result<[usize; N]> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| parse_scalar(key, p.trim()))
        .collect::<Result<_>>()?;
    parts.try_into().map_err(|v: Vec<usize>| {
        Error::Config(format!(
            "key '{key}' needs {N} comma-separated values, got {}",
            v.len()
        ))
    })
}
