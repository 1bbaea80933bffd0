//! Pipeline configuration: a TOML document whose dotted keys map one-to-one
//! onto command-line overrides of the form `--section.key=value`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use stenunet::evalkit::{EvalConfig, EvalMode, DEFAULT_BUDGET_SECONDS};
use stenunet::prefilter::{FilterMode, PreConfig};
use stenunet::postseg::{Connectivity, PostConfig};
use stenunet::stenunet::{ArchConfig, AugmentConfig, LossWeights, TrainConfig};
use toml::Value;

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IoConfig {
    pub images: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    /// 0 uses every available core.
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub prefilter: PreConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub loss: LossWeights,
    pub post: PostConfig,
    pub eval: EvalConfig,
    pub budget_seconds: f64,
    pub io: IoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            prefilter: PreConfig::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            loss: LossWeights::default(),
            post: PostConfig::default(),
            eval: EvalConfig::default(),
            budget_seconds: DEFAULT_BUDGET_SECONDS,
            io: IoConfig::default(),
        }
    }
}

fn type_err(key: &str, want: &str, v: &Value) -> CliError {
    CliError::Config(format!("{key}: expected {want}, got {v}"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64, CliError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(type_err(key, "a number", v)),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64, CliError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(type_err(key, "a non-negative integer", v)),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize, CliError> {
    as_u64(key, v).map(|u| u as usize)
}

fn as_bool(key: &str, v: &Value) -> Result<bool, CliError> {
    v.as_bool().ok_or_else(|| type_err(key, "true or false", v))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str, CliError> {
    v.as_str().ok_or_else(|| type_err(key, "a string", v))
}

fn as_path(key: &str, v: &Value) -> Result<Option<PathBuf>, CliError> {
    let s = as_str(key, v)?;
    Ok((!s.is_empty()).then(|| PathBuf::from(s)))
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl PipelineConfig {
    /// Applies one dotted key.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<(), CliError> {
        match key {
            "prefilter.enabled" => self.prefilter.enabled = as_bool(key, v)?,
            "prefilter.d0" => self.prefilter.filter.d0 = as_f64(key, v)?,
            "prefilter.order" => self.prefilter.filter.order = as_u64(key, v)? as u32,
            "prefilter.mode" => {
                self.prefilter.filter.mode = match as_str(key, v)? {
                    "highpass" => FilterMode::Highpass,
                    "lowpass" => FilterMode::Lowpass,
                    other => return Err(CliError::Config(format!("{key}: unknown mode {other:?}"))),
                }
            }
            "prefilter.exponentiate" => self.prefilter.exponentiate = as_bool(key, v)?,
            "prefilter.m0" => self.prefilter.normalization.m0 = as_f64(key, v)?,
            "prefilter.var0" => self.prefilter.normalization.var0 = as_f64(key, v)?,

            "arch.stages" => self.arch.stages = as_usize(key, v)?,
            "arch.channels" => {
                let arr = v.as_array().ok_or_else(|| type_err(key, "an array of integers", v))?;
                self.arch.channels = arr.iter().map(|c| as_usize(key, c)).collect::<Result<_, _>>()?;
            }
            "arch.convs_per_stage" => self.arch.convs_per_stage = as_usize(key, v)?,
            "arch.in_channels" => self.arch.in_channels = as_usize(key, v)?,
            "arch.out_channels" => self.arch.out_channels = as_usize(key, v)?,
            "arch.leaky_slope" => self.arch.leaky_slope = as_f64(key, v)?,
            "arch.instance_norm" => self.arch.use_instance_norm = as_bool(key, v)?,

            "train.epochs" => self.train.epochs = as_usize(key, v)?,
            "train.batch_size" => self.train.batch_size = as_usize(key, v)?,
            "train.lr0" => self.train.lr0 = as_f64(key, v)?,
            "train.poly_exponent" => self.train.poly_exponent = as_f64(key, v)?,
            "train.momentum" => self.train.momentum = as_f64(key, v)?,
            "train.nesterov" => self.train.nesterov = as_bool(key, v)?,
            "train.weight_decay" => self.train.weight_decay = as_f64(key, v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = as_usize(key, v)?,

            "augment.p_scale" => self.augment.p_scale = as_f64(key, v)?,
            "augment.p_rotate" => self.augment.p_rotate = as_f64(key, v)?,
            "augment.scale_min" => self.augment.scale_range.0 = as_f64(key, v)?,
            "augment.scale_max" => self.augment.scale_range.1 = as_f64(key, v)?,
            "augment.rotation_min" => self.augment.rotation_range.0 = as_f64(key, v)?,
            "augment.rotation_max" => self.augment.rotation_range.1 = as_f64(key, v)?,
            "augment.p_noise" => self.augment.p_noise = as_f64(key, v)?,
            "augment.noise_var_min" => self.augment.noise_variance_range.0 = as_f64(key, v)?,
            "augment.noise_var_max" => self.augment.noise_variance_range.1 = as_f64(key, v)?,
            "augment.p_blur" => self.augment.p_blur = as_f64(key, v)?,
            "augment.blur_sigma_min" => self.augment.blur_sigma_range.0 = as_f64(key, v)?,
            "augment.blur_sigma_max" => self.augment.blur_sigma_range.1 = as_f64(key, v)?,

            "loss.w_bce" => self.loss.w_bce = as_f64(key, v)?,
            "loss.w_dice" => self.loss.w_dice = as_f64(key, v)?,

            "post.enabled" => self.post.enabled = as_bool(key, v)?,
            "post.threshold" => self.post.threshold = as_f64(key, v)?,
            "post.connectivity" => {
                self.post.connectivity = Connectivity::try_from(as_u64(key, v)? as u32)
                    .map_err(|e| CliError::Config(format!("{key}: {e}")))?
            }
            "post.min_area" => self.post.min_area = as_f64(key, v)?,

            "eval.mode" => {
                self.eval.mode = as_str(key, v)?
                    .parse::<EvalMode>()
                    .map_err(|e| CliError::Config(format!("{key}: {e}")))?
            }
            "eval.iou_threshold" => self.eval.iou_threshold = as_f64(key, v)?,
            "eval.budget_seconds" => self.budget_seconds = as_f64(key, v)?,

            "io.images" => self.io.images = as_path(key, v)?,
            "io.annotations" => self.io.annotations = as_path(key, v)?,
            "io.out" => self.io.out = as_path(key, v)?,
            "io.checkpoint" => self.io.checkpoint = as_path(key, v)?,
            "io.seed" => self.io.seed = as_u64(key, v)?,
            "io.threads" => self.io.threads = as_usize(key, v)?,

            _ => return Err(CliError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value rendered as a TOML literal.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let f = |v: f64| Value::Float(v).to_string();
        let b = |v: bool| v.to_string();
        let s = |v: &str| Value::String(v.to_string()).to_string();
        let p = &self.prefilter;
        let a = &self.arch;
        let t = &self.train;
        let g = &self.augment;
        let channels = format!(
            "[{}]",
            a.channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
        );
        let pairs: Vec<(&str, String)> = vec![
            ("prefilter.enabled", b(p.enabled)),
            ("prefilter.d0", f(p.filter.d0)),
            ("prefilter.order", p.filter.order.to_string()),
            (
                "prefilter.mode",
                s(match p.filter.mode {
                    FilterMode::Highpass => "highpass",
                    FilterMode::Lowpass => "lowpass",
                }),
            ),
            ("prefilter.exponentiate", b(p.exponentiate)),
            ("prefilter.m0", f(p.normalization.m0)),
            ("prefilter.var0", f(p.normalization.var0)),
            ("arch.stages", a.stages.to_string()),
            ("arch.channels", channels),
            ("arch.convs_per_stage", a.convs_per_stage.to_string()),
            ("arch.in_channels", a.in_channels.to_string()),
            ("arch.out_channels", a.out_channels.to_string()),
            ("arch.leaky_slope", f(a.leaky_slope)),
            ("arch.instance_norm", b(a.use_instance_norm)),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr0", f(t.lr0)),
            ("train.poly_exponent", f(t.poly_exponent)),
            ("train.momentum", f(t.momentum)),
            ("train.nesterov", b(t.nesterov)),
            ("train.weight_decay", f(t.weight_decay)),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("augment.p_scale", f(g.p_scale)),
            ("augment.p_rotate", f(g.p_rotate)),
            ("augment.scale_min", f(g.scale_range.0)),
            ("augment.scale_max", f(g.scale_range.1)),
            ("augment.rotation_min", f(g.rotation_range.0)),
            ("augment.rotation_max", f(g.rotation_range.1)),
            ("augment.p_noise", f(g.p_noise)),
            ("augment.noise_var_min", f(g.noise_variance_range.0)),
            ("augment.noise_var_max", f(g.noise_variance_range.1)),
            ("augment.p_blur", f(g.p_blur)),
            ("augment.blur_sigma_min", f(g.blur_sigma_range.0)),
            ("augment.blur_sigma_max", f(g.blur_sigma_range.1)),
            ("loss.w_bce", f(self.loss.w_bce)),
            ("loss.w_dice", f(self.loss.w_dice)),
            ("post.enabled", b(self.post.enabled)),
            ("post.threshold", f(self.post.threshold)),
            ("post.connectivity", self.post.connectivity.as_u32().to_string()),
            ("post.min_area", f(self.post.min_area)),
            ("eval.mode", s(&self.eval.mode.to_string())),
            ("eval.iou_threshold", f(self.eval.iou_threshold)),
            ("eval.budget_seconds", f(self.budget_seconds)),
            ("io.images", s(&path_str(&self.io.images))),
            ("io.annotations", s(&path_str(&self.io.annotations))),
            ("io.out", s(&path_str(&self.io.out))),
            ("io.checkpoint", s(&path_str(&self.io.checkpoint))),
            ("io.seed", self.io.seed.to_string()),
            ("io.threads", self.io.threads.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// The resolved configuration as a TOML document that parses back to
    /// the same values.
    pub fn echo(&self) -> String {
        let mut by_section: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        for (k, v) in self.entries() {
            let (section, name) = k.split_once('.').expect("dotted key");
            by_section.entry(section.to_string()).or_default().push((name.to_string(), v));
        }
        let mut out = String::new();
        for (section, rows) in by_section {
            let _ = writeln!(out, "[{section}]");
            for (k, v) in rows {
                let _ = writeln!(out, "{k} = {v}");
            }
            out.push('\n');
        }
        out
    }

    /// SHA-256 over the sorted `key = value` lines, leaving out `io.out` so
    /// that the same run written to two places has one fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k == "io.out" {
                continue;
            }
            h.update(format!("{k} = {v}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Cross-field checks done by the library types.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: String| CliError::Config(e);
        self.prefilter.filter.validate().map_err(|e| cfg(format!("prefilter: {e}")))?;
        if !(self.prefilter.normalization.var0.is_finite() && self.prefilter.normalization.var0 > 0.0) {
            return Err(cfg(format!("prefilter.var0 must be positive, got {}", self.prefilter.normalization.var0)));
        }
        self.arch.validate().map_err(|e| cfg(format!("arch: {e}")))?;
        self.train.validate().map_err(|e| cfg(format!("train: {e}")))?;
        self.augment.validate().map_err(|e| cfg(e.to_string()))?;
        self.loss.validate().map_err(|e| cfg(format!("loss: {e}")))?;
        self.post.validate().map_err(|e| cfg(e.to_string()))?;
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold <= 1.0) {
            return Err(cfg(format!("eval.iou_threshold must be in (0, 1], got {}", self.eval.iou_threshold)));
        }
        Ok(())
    }
}

/// Flattens nested tables into dotted keys.
fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// Parses an override value as a TOML literal, falling back to a bare string
/// (so `--io.out=/tmp/run` needs no quoting).
pub fn parse_override(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Defaults, then the file (if any), then the overrides in order.
pub fn parse_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<PipelineConfig, CliError> {
    let mut pairs = Vec::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let table: toml::Table = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        flatten("", &table, &mut pairs);
    }
    pairs.extend(overrides.iter().map(|(k, raw)| (k.clone(), parse_override(raw))));

    let mut cfg = PipelineConfig::default();
    for (k, v) in &pairs {
        cfg.set(k, v)?;
    }
    if pairs.iter().all(|(k, _)| k != "arch.stages") {
        // a channel list alone implies its stage count
        cfg.arch.stages = cfg.arch.channels.len();
    }
    cfg.train.seed = cfg.io.seed;
    cfg.eval.connectivity = cfg.post.connectivity;
    cfg.validate()?;
    Ok(cfg)
}
