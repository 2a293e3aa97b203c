//! Run configuration: built-in profiles, a flat `key = value` file format
//! and flag overrides, resolved into one [`RunConfig`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::moea::SearchConfig;
use crate::rwe::EvalConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full 40K/10K split.
    #[default]
    Default,
    /// 4,000 / 1,000 stratified subsample.
    Tiny,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Profile::Default),
            "tiny" => Ok(Profile::Tiny),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (expected default or tiny)"
            ))),
        }
    }
}

/// Everything a run depends on. Serialized into every output artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub search: SearchConfig,
    pub eval: EvalConfig,
    pub split: SplitSpec,
    pub data_root: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let split = SplitSpec {
            subsample: match profile {
                Profile::Default => None,
                Profile::Tiny => Some((4000, 1000)),
            },
            ..SplitSpec::default()
        };
        let mut cfg = RunConfig {
            profile,
            seed: 0,
            search: SearchConfig::default(),
            eval: EvalConfig::default(),
            split,
            data_root: None,
            out_dir: PathBuf::from("."),
        };
        cfg.set_seed(0);
        cfg
    }

    /// One seed drives the split, the search and every evaluation.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.search.seed = seed;
        self.eval.seed = seed;
        self.split.seed = seed;
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "profile" => {
                let p: Profile = v.parse()?;
                if p != self.profile {
                    let seed = self.seed;
                    let (data, out) = (self.data_root.take(), self.out_dir.clone());
                    *self = RunConfig::for_profile(p);
                    self.set_seed(seed);
                    self.data_root = data;
                    self.out_dir = out;
                }
            }
            "seed" => self.set_seed(num(key, v)?),
            "data" => self.data_root = Some(PathBuf::from(v)),
            "out" => self.out_dir = PathBuf::from(v),
            "pop_size" => self.search.pop_size = num(key, v)?,
            "generations" => self.search.generations = num(key, v)?,
            "crossover_prob" => self.search.crossover_prob = num(key, v)?,
            "mutation_prob" => self.search.mutation_prob = num(key, v)?,
            "eta_m" => self.search.eta_m = num(key, v)?,
            "classifiers" => self.eval.num_classifiers = num(key, v)?,
            "epochs" => self.eval.train.epochs = num(key, v)?,
            "batch_size" => self.eval.train.batch_size = num(key, v)?,
            "lr0" => self.eval.train.lr0 = num(key, v)?,
            "momentum" => self.eval.train.momentum = num(key, v)?,
            "standardize" => self.eval.train.standardize = num(key, v)?,
            "infer_batch" => self.eval.infer_batch = num(key, v)?,
            "layers" => self.eval.macro_cfg.num_layers = num(key, v)?,
            "channels" => self.eval.macro_cfg.init_channels = num(key, v)?,
            "reductions" => {
                self.eval.macro_cfg.reduction_positions = if v.is_empty() || v == "none" {
                    Vec::new()
                } else {
                    v.split(',').map(|p| num(key, p.trim())).collect::<Result<_>>()?
                }
            }
            "train_fraction" => self.split.train_fraction = num(key, v)?,
            "subsample" => {
                self.split.subsample = if v == "none" {
                    None
                } else {
                    let (a, b) = v.split_once(',').ok_or_else(|| {
                        Error::Config(format!("subsample must be `n_train,n_val` or none, got {v:?}"))
                    })?;
                    Some((num(key, a.trim())?, num(key, b.trim())?))
                }
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        self.eval.validate()?;
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.split.train_fraction
            )));
        }
        Ok(())
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("cannot parse value {v:?} for key {key:?}")))
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// later keys win.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Defaults → profile → config file → `overrides` (in order).
pub fn resolve(
    profile: Option<Profile>,
    config_file: Option<&Path>,
    overrides: &[(&str, String)],
) -> Result<RunConfig> {
    let file = match config_file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            parse_config_text(&text)?
        }
        None => BTreeMap::new(),
    };
    let profile = match (profile, file.get("profile")) {
        (Some(p), _) => p,
        (None, Some(p)) => p.parse()?,
        (None, None) => Profile::Default,
    };
    let mut cfg = RunConfig::for_profile(profile);
    // seed first so that it is not reset by later keys
    if let Some(s) = file.get("seed") {
        cfg.set("seed", s)?;
    }
    for (k, v) in file.iter().filter(|(k, _)| *k != "profile" && *k != "seed") {
        cfg.set(k, v)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
