//! INI-style run configuration with `section.key=value` overrides.
//!
//! ```text
//! [model]
//! hidden_dim = 32
//! [train]
//! epochs = 100
//! ```
//!
//! Blank lines and lines starting with `#` or `;` are ignored. Unknown
//! sections or keys are errors.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use crate::error::{Error, Result};
use crate::masking::MaskConfig;
use crate::model::{ClDenominator, LossWeights, ModelConfig};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectConfig {
    /// Seed of the inference-time mask plans.
    pub score_seed: u64,
    /// Flag the `k` highest scores instead of using the knee threshold.
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub detect: DetectConfig,
    /// Z-score every feature column before training and scoring.
    pub standardize: bool,
}

fn parse<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{section}.{key}: cannot parse {value:?}")))
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{section}.{key}: expected true or false, got {value:?}"
        ))),
    }
}

impl RunConfig {
    /// Assigns one value; `section` and `key` are matched exactly.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        let l = &mut self.loss;
        match (section, key) {
            ("model", "hidden_dim") => m.hidden_dim = parse(section, key, v)?,
            ("model", "enc_layers") => m.enc_layers = parse(section, key, v)?,
            ("model", "dec_layers") => m.dec_layers = parse(section, key, v)?,
            ("model", "eta") => m.eta = parse(section, key, v)?,
            ("model", "cl_denominator") => m.cl_denominator = ClDenominator::parse(v)?,
            ("model", "standardize") => self.standardize = parse_bool(section, key, v)?,
            ("mask", "mask_ratio") => m.mask.mask_ratio = parse(section, key, v)?,
            ("mask", "repeats") => m.mask.repeats = parse(section, key, v)?,
            ("mask", "n_neg") => m.mask.n_neg = parse(section, key, v)?,
            ("rwr", "restart_prob") => m.rwr.restart_prob = parse(section, key, v)?,
            ("rwr", "subgraph_size") => m.rwr.subgraph_size = parse(section, key, v)?,
            ("rwr", "max_steps") => m.rwr.max_steps = parse(section, key, v)?,
            ("train", "epochs") => t.epochs = parse(section, key, v)?,
            ("train", "lr") => t.lr = parse(section, key, v)?,
            ("train", "weight_decay") => t.weight_decay = parse(section, key, v)?,
            ("train", "dropout") => t.dropout = parse(section, key, v)?,
            ("train", "seed") => t.seed = parse(section, key, v)?,
            ("train", "replan_every") => t.replan_every = parse(section, key, v)?,
            ("train", "no_mask") => t.ablation.no_mask = parse_bool(section, key, v)?,
            ("train", "no_original") => t.ablation.no_original = parse_bool(section, key, v)?,
            ("train", "no_attr_aug") => t.ablation.no_attr_aug = parse_bool(section, key, v)?,
            ("train", "no_sub_aug") => t.ablation.no_sub_aug = parse_bool(section, key, v)?,
            ("train", "no_dcl") => t.ablation.no_dcl = parse_bool(section, key, v)?,
            ("loss", "alpha") => l.alpha = parse(section, key, v)?,
            ("loss", "beta") => l.beta = parse(section, key, v)?,
            ("loss", "lambda") => l.lambda = parse(section, key, v)?,
            ("loss", "mu") => l.mu = parse(section, key, v)?,
            ("loss", "theta") => l.theta = parse(section, key, v)?,
            ("detect", "epsilon") => l.epsilon = parse(section, key, v)?,
            ("detect", "score_seed") => self.detect.score_seed = parse(section, key, v)?,
            ("detect", "top_k") => {
                self.detect.top_k = match v {
                    "none" | "" => None,
                    _ => Some(parse(section, key, v)?),
                }
            }
            _ => return Err(Error::Config(format!("unknown key {section}.{key}"))),
        }
        Ok(())
    }

    /// Applies an override of the form `section.key=value`.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {spec:?} is not section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override {spec:?} is not section.key=value")))?;
        self.set(section, key, value)
    }

    pub fn parse_ini(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_ini(text, origin)?;
        Ok(cfg)
    }

    pub fn merge_ini(&mut self, text: &str, origin: &Path) -> Result<()> {
        let ini =
            Ini::load_from_str_noescape(text).map_err(|e| Error::parse(origin, e.line, e.msg))?;
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                let Some(section) = section else {
                    return Err(Error::Config(format!(
                        "{}: key {key} outside of a section",
                        origin.display()
                    )));
                };
                self.set(section, key, value).map_err(|e| match e {
                    Error::Config(msg) => Error::Config(format!("{}: {msg}", origin.display())),
                    other => other,
                })?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_ini(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()
    }

    /// Every setting in a form [`RunConfig::parse_ini`] reads back unchanged.
    pub fn render(&self) -> String {
        let (m, t, l, d) = (&self.model, &self.train, &self.loss, &self.detect);
        let MaskConfig {
            mask_ratio,
            repeats,
            n_neg,
        } = m.mask;
        let a = t.ablation;
        let mut out = String::new();
        let _ = writeln!(out, "[model]");
        let _ = writeln!(out, "hidden_dim = {}", m.hidden_dim);
        let _ = writeln!(out, "enc_layers = {}", m.enc_layers);
        let _ = writeln!(out, "dec_layers = {}", m.dec_layers);
        let _ = writeln!(out, "eta = {}", m.eta);
        let _ = writeln!(out, "cl_denominator = {}", m.cl_denominator.as_str());
        let _ = writeln!(out, "standardize = {}", self.standardize);
        let _ = writeln!(out, "\n[mask]");
        let _ = writeln!(out, "mask_ratio = {mask_ratio}");
        let _ = writeln!(out, "repeats = {repeats}");
        let _ = writeln!(out, "n_neg = {n_neg}");
        let _ = writeln!(out, "\n[rwr]");
        let _ = writeln!(out, "restart_prob = {}", m.rwr.restart_prob);
        let _ = writeln!(out, "subgraph_size = {}", m.rwr.subgraph_size);
        let _ = writeln!(out, "max_steps = {}", m.rwr.max_steps);
        let _ = writeln!(out, "\n[train]");
        let _ = writeln!(out, "epochs = {}", t.epochs);
        let _ = writeln!(out, "lr = {}", t.lr);
        let _ = writeln!(out, "weight_decay = {}", t.weight_decay);
        let _ = writeln!(out, "dropout = {}", t.dropout);
        let _ = writeln!(out, "seed = {}", t.seed);
        let _ = writeln!(out, "replan_every = {}", t.replan_every);
        let _ = writeln!(out, "no_mask = {}", a.no_mask);
        let _ = writeln!(out, "no_original = {}", a.no_original);
        let _ = writeln!(out, "no_attr_aug = {}", a.no_attr_aug);
        let _ = writeln!(out, "no_sub_aug = {}", a.no_sub_aug);
        let _ = writeln!(out, "no_dcl = {}", a.no_dcl);
        let _ = writeln!(out, "\n[loss]");
        let _ = writeln!(out, "alpha = {}", l.alpha);
        let _ = writeln!(out, "beta = {}", l.beta);
        let _ = writeln!(out, "lambda = {}", l.lambda);
        let _ = writeln!(out, "mu = {}", l.mu);
        let _ = writeln!(out, "theta = {}", l.theta);
        let _ = writeln!(out, "\n[detect]");
        let _ = writeln!(out, "epsilon = {}", l.epsilon);
        let _ = writeln!(out, "score_seed = {}", d.score_seed);
        let _ = writeln!(
            out,
            "top_k = {}",
            d.top_k
                .map_or_else(|| "none".to_string(), |k| k.to_string())
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_render_and_parse_back() {
        let cfg = RunConfig::default();
        let text = cfg.render();
        for line in [
            "epochs = 100",
            "dropout = 0.1",
            "weight_decay = 0.01",
            "hidden_dim = 32",
            "repeats = 10",
        ] {
            assert!(text.contains(line), "missing {line}");
        }
        assert_eq!(
            RunConfig::parse_ini(&text, Path::new("x.ini")).unwrap(),
            cfg
        );
    }

    #[test]
    fn overrides_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("train.epochs=7").unwrap();
        cfg.apply_override("loss.theta = 0.25").unwrap();
        cfg.apply_override("detect.top_k=12").unwrap();
        cfg.apply_override("model.standardize=true").unwrap();
        cfg.apply_override("model.cl_denominator=infonce").unwrap();
        let back = RunConfig::parse_ini(&cfg.render(), Path::new("x.ini")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.train.epochs, 7);
        assert_eq!(back.loss.theta, 0.25);
        assert_eq!(back.detect.top_k, Some(12));
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut cfg = RunConfig::default();
        assert!(matches!(
            cfg.apply_override("train.epoch=7"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            cfg.apply_override("nonsense"),
            Err(Error::Config(_))
        ));
        let err = RunConfig::parse_ini("[train]\nbogus = 1\n", Path::new("c.ini")).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("train.bogus")));
        assert!(matches!(
            RunConfig::parse_ini("[train\n", Path::new("c.ini")),
            Err(Error::Parse { .. })
        ));
        assert!(RunConfig::parse_ini("epochs = 1\n", Path::new("c.ini")).is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = RunConfig::parse_ini(
            "# run\n\n[train]\n; quick\nepochs = 3\n",
            Path::new("c.ini"),
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
    }
}
