use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::elastic::ParticleSpec;
use crate::error::{Error, Result};
use crate::inverse::SolverConfig;
use crate::render::{ImageSpec, PreprocessSpec};
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }
}

/// A split, optionally one of several size tiers (`train-64`, `val-16`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Split {
    pub kind: SplitKind,
    pub tier: Option<u32>,
}

impl Split {
    pub fn new(kind: SplitKind, tier: Option<u32>) -> Self {
        Split { kind, tier }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tier {
            Some(t) => write!(f, "{}-{t}", self.kind.as_str()),
            None => f.write_str(self.kind.as_str()),
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (kind, tier) = match s.split_once('-') {
            Some((k, t)) => (k, Some(t.parse::<u32>().map_err(|_| format!("bad split tier in {s:?}"))?)),
            None => (s, None),
        };
        let kind = match kind {
            "train" => SplitKind::Train,
            "val" => SplitKind::Val,
            "test" => SplitKind::Test,
            _ => return Err(format!("unknown split {s:?}")),
        };
        Ok(Split { kind, tier })
    }
}

impl Serialize for Split {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Split {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Number of base samples per force count going to one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub kind: SplitKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<u32>,
    pub size: usize,
}

impl SplitSpec {
    pub fn split(&self) -> Split {
        Split::new(self.kind, self.tier)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Base force lists generated for every force count in `sampler.m_range`.
    pub per_m_count: usize,
    /// Rotated variants per base sample, angles drawn from U(0, 2π).
    pub augmentation_count: usize,
    pub particle: ParticleSpec,
    #[serde(default)]
    pub image: ImageSpec,
    #[serde(default)]
    pub preprocess: PreprocessSpec,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub splits: Vec<SplitSpec>,
    /// Inverse-solver settings, used by reconstruction only.
    #[serde(default)]
    pub solver: SolverConfig,
}

impl DatasetConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sampler settings with the dataset seed applied.
    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig { seed: self.seed, ..self.sampler.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.particle.validate()?;
        self.image.validate()?;
        self.sampler.validate()?;
        self.solver.validate()?;
        if self.preprocess.target_side == 0 || !(self.preprocess.blur_sigma > 0.0) {
            return Err(Error::Config("preprocess needs target_side ≥ 1 and blur_sigma > 0".into()));
        }
        if self.per_m_count >= 1 << 40 {
            return Err(Error::Config("per_m_count too large".into()));
        }
        let total: usize = self.splits.iter().map(|s| s.size).sum();
        if total != self.per_m_count {
            return Err(Error::Config(format!(
                "split sizes sum to {total}, expected per_m_count = {}",
                self.per_m_count
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.splits {
            if !seen.insert(s.split()) {
                return Err(Error::Config(format!("split {} listed twice", s.split())));
            }
        }
        Ok(())
    }

    /// Number of distinct base force lists.
    pub fn base_count(&self) -> usize {
        self.per_m_count * self.sampler.force_counts().count()
    }
}
