//! Run configuration as flat `key = value` text.

use std::collections::BTreeMap;
use std::path::PathBuf;

use refinegan_core::losses::LossWeights;
use refinegan_core::pbn::DEFAULT_IMAGES_PER_BATCH;
use refinegan_core::AcquisitionPlane;

use crate::error::{Result, TrainError};
use crate::optim::{OptimizerKind, OptimizerSpec};

pub const MAX_EPOCHS: usize = 100;

/// Every accepted key with a one-line description, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed for initialization, shuffling and noise"),
    ("epochs", "cGAN training epochs, 0..=100 (0 writes the initial checkpoint)"),
    ("max_steps", "stop cGAN training after this many batches (0 = no cap)"),
    ("refine_epochs", "refinement training epochs, 0..=100"),
    ("refine_max_steps", "stop refinement training after this many batches (0 = no cap)"),
    ("images_per_batch", "images per batch; a batch holds images_per_batch / channels slices"),
    ("plane", "slicing plane: axial, coronal or sagittal"),
    ("lambda_l1", "weight of the L1 term in the generator objective"),
    ("depth", "encoder levels of generator and refinement; conv blocks of the discriminator"),
    ("base_filters", "filters of the first level, doubled per level"),
    ("recurrent", "bidirectional LSTM in generator and discriminator (true/false)"),
    ("noise_input", "append a Gaussian noise channel to the generator input (true/false)"),
    ("d_steps", "discriminator steps per generator step"),
    ("g_optimizer", "generator optimizer: rmsprop or adadelta (default adadelta, rmsprop if recurrent)"),
    ("g_lr", "generator learning rate"),
    ("g_rho", "generator optimizer decay (default 0.9 rmsprop, 0.95 adadelta)"),
    ("g_eps", "generator optimizer epsilon (default 1e-8 rmsprop, 1e-6 adadelta)"),
    ("d_optimizer", "discriminator optimizer (defaults as generator)"),
    ("d_lr", "discriminator learning rate"),
    ("d_rho", "discriminator optimizer decay"),
    ("d_eps", "discriminator optimizer epsilon"),
    ("r_optimizer", "refinement optimizer (default rmsprop)"),
    ("r_lr", "refinement learning rate"),
    ("r_rho", "refinement optimizer decay"),
    ("r_eps", "refinement optimizer epsilon"),
    ("data", "dataset directory containing manifest.txt"),
    ("out", "output directory"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub max_steps: usize,
    pub refine_epochs: usize,
    pub refine_max_steps: usize,
    pub images_per_batch: usize,
    pub plane: AcquisitionPlane,
    pub weights: LossWeights,
    pub depth: usize,
    pub base_filters: usize,
    pub recurrent: bool,
    pub noise_input: bool,
    pub d_steps: usize,
    pub generator_opt: OptimizerSpec,
    pub discriminator_opt: OptimizerSpec,
    pub refinement_opt: OptimizerSpec,
    pub data: PathBuf,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_pairs(&[]).expect("defaults are valid")
    }
}

fn bad(msg: String) -> TrainError {
    TrainError::Config(msg)
}

fn parse_value<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse().map_err(|_| bad(format!("bad value for `{key}`: `{v}`")))
}

impl RunConfig {
    /// Splits config text into `(key, value)` pairs. `#` starts a comment.
    pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected `key = value`", no + 1)))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&Self::parse_pairs(text)?)
    }

    /// Builds a config from defaults overridden by `pairs`; later pairs win.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            if !KEYS.iter().any(|(key, _)| key == k) {
                return Err(bad(format!("unknown key `{k}`")));
            }
            map.insert(k.as_str(), v.as_str());
        }
        fn get<V: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str, default: V) -> Result<V> {
            map.get(key).map_or(Ok(default), |v| parse_value(key, v))
        }
        let recurrent = get(&map, "recurrent", false)?;
        let auto = if recurrent { OptimizerKind::RmsProp } else { OptimizerKind::Adadelta };
        let opt = |prefix: &str, default_kind: OptimizerKind| -> Result<OptimizerSpec> {
            let kind = get(&map, &format!("{prefix}_optimizer"), default_kind)?;
            let lr = get(&map, &format!("{prefix}_lr"), OptimizerSpec::DEFAULT_LR)?;
            let base = OptimizerSpec::of_kind(kind, lr);
            let spec = OptimizerSpec {
                rho: get(&map, &format!("{prefix}_rho"), base.rho)?,
                eps: get(&map, &format!("{prefix}_eps"), base.eps)?,
                ..base
            };
            spec.validate()?;
            Ok(spec)
        };
        let cfg = Self {
            seed: get(&map, "seed", 1)?,
            epochs: get(&map, "epochs", MAX_EPOCHS)?,
            max_steps: get(&map, "max_steps", 0)?,
            refine_epochs: get(&map, "refine_epochs", MAX_EPOCHS)?,
            refine_max_steps: get(&map, "refine_max_steps", 0)?,
            images_per_batch: get(&map, "images_per_batch", DEFAULT_IMAGES_PER_BATCH)?,
            plane: get(&map, "plane", AcquisitionPlane::Axial)?,
            weights: LossWeights { lambda_l1: get(&map, "lambda_l1", 1.0)? },
            depth: get(&map, "depth", 3)?,
            base_filters: get(&map, "base_filters", 8)?,
            recurrent,
            noise_input: get(&map, "noise_input", false)?,
            d_steps: get(&map, "d_steps", 1)?,
            generator_opt: opt("g", auto)?,
            discriminator_opt: opt("d", auto)?,
            refinement_opt: opt("r", OptimizerKind::RmsProp)?,
            data: get(&map, "data", PathBuf::from("data"))?,
            out: get(&map, "out", PathBuf::from("out"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs > MAX_EPOCHS || self.refine_epochs > MAX_EPOCHS {
            return Err(bad(format!("epochs may not exceed {MAX_EPOCHS}")));
        }
        if self.images_per_batch == 0 {
            return Err(bad("images_per_batch must be positive".into()));
        }
        if self.d_steps == 0 {
            return Err(bad("d_steps must be positive".into()));
        }
        self.weights.validate()?;
        for spec in [&self.generator_opt, &self.discriminator_opt, &self.refinement_opt] {
            spec.validate()?;
        }
        Ok(())
    }

    /// Resolved config in `key = value` form; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let opt = |prefix: &str, s: &OptimizerSpec| {
            format!(
                "{prefix}_optimizer = {}\n{prefix}_lr = {:?}\n{prefix}_rho = {:?}\n{prefix}_eps = {:?}\n",
                s.kind, s.lr, s.rho, s.eps
            )
        };
        let mut s = String::new();
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("epochs = {}\n", self.epochs));
        s.push_str(&format!("max_steps = {}\n", self.max_steps));
        s.push_str(&format!("refine_epochs = {}\n", self.refine_epochs));
        s.push_str(&format!("refine_max_steps = {}\n", self.refine_max_steps));
        s.push_str(&format!("images_per_batch = {}\n", self.images_per_batch));
        s.push_str(&format!("plane = {}\n", self.plane));
        s.push_str(&format!("lambda_l1 = {:?}\n", self.weights.lambda_l1));
        s.push_str(&format!("depth = {}\n", self.depth));
        s.push_str(&format!("base_filters = {}\n", self.base_filters));
        s.push_str(&format!("recurrent = {}\n", self.recurrent));
        s.push_str(&format!("noise_input = {}\n", self.noise_input));
        s.push_str(&format!("d_steps = {}\n", self.d_steps));
        s.push_str(&opt("g", &self.generator_opt));
        s.push_str(&opt("d", &self.discriminator_opt));
        s.push_str(&opt("r", &self.refinement_opt));
        s.push_str(&format!("data = {}\n", self.data.display()));
        s.push_str(&format!("out = {}\n", self.out.display()));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_network_variant() {
        let plain = RunConfig::default();
        assert_eq!(plain.generator_opt.kind, OptimizerKind::Adadelta);
        assert_eq!(plain.discriminator_opt.kind, OptimizerKind::Adadelta);
        assert_eq!(plain.refinement_opt.kind, OptimizerKind::RmsProp);
        assert_eq!(plain.generator_opt.rho, 0.95);
        assert_eq!(plain.epochs, 100);
        let rec = RunConfig::parse("recurrent = true").unwrap();
        assert_eq!(rec.generator_opt.kind, OptimizerKind::RmsProp);
        assert_eq!(rec.generator_opt.eps, 1e-8);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::parse(
            "seed = 9 # comment\nepochs = 3\nplane = sagittal\ng_optimizer = rmsprop\ng_lr = 0.0005\nd_rho = 0.8\nlambda_l1 = 10\nout = /tmp/x y",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.out, PathBuf::from("/tmp/x y"));
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn errors() {
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("epochs = 101").is_err());
        assert!(RunConfig::parse("g_lr = 0").is_err());
        assert!(RunConfig::parse("g_rho = 1").is_err());
        assert!(RunConfig::parse("seed").is_err());
        assert!(RunConfig::parse("depth = x").is_err());
        assert!(RunConfig::parse("lambda_l1 = -1").is_err());
    }
}
