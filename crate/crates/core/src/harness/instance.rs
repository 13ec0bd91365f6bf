//! Versioned oracle instances.
//!
//! Each instance is a TOML file under `instances/` holding the full dataset,
//! the weights, a baseline mask and one or more logits settings, so exact
//! results can be compared bit for bit across versions.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::mask::{NMMask, SparsityPattern};
use crate::sampling::GroupLogits;
use crate::tasks::{LossKind, ToyTask};

const UNBIASEDNESS: &str = include_str!("../../instances/unbiasedness.toml");
const CONFINED: &str = include_str!("../../instances/confined.toml");

/// Names accepted by [`OracleInstance::builtin`].
pub const BUILTIN_INSTANCES: [&str; 2] = ["unbiasedness", "confined"];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    name: String,
    pattern: SparsityPattern,
    loss: LossKind,
    batch_size: usize,
    baseline: String,
    planted: String,
    weights: Vec<f64>,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    logits: Vec<RawLogits>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLogits {
    name: String,
    values: Vec<f64>,
}

/// A grouped-linear task with its baseline, planted mask and logits settings.
#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub name: String,
    pub task: ToyTask,
    pub baseline: NMMask,
    pub planted: NMMask,
    pub logits: Vec<(String, GroupLogits)>,
}

impl OracleInstance {
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "unbiasedness" => Self::parse(UNBIASEDNESS),
            "confined" => Self::parse(CONFINED),
            other => Err(Error::Config(format!(
                "unknown instance `{other}` (expected one of {})",
                BUILTIN_INSTANCES.join(", ")
            ))),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawInstance = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let pattern = raw.pattern;
        let d = raw.weights.len();
        let task = ToyTask::grouped(raw.weights, pattern, raw.inputs, raw.targets, raw.batch_size, raw.loss)?;
        let logits = raw
            .logits
            .into_iter()
            .map(|l| Ok((l.name, GroupLogits::new(l.values, pattern)?)))
            .collect::<Result<Vec<_>>>()?;
        if logits.iter().any(|(_, l)| l.len() != d) {
            return Err(Error::dim(format!("instance `{}`: logits length differs from weights", raw.name)));
        }
        Ok(Self {
            baseline: mask_from_groups(&raw.baseline, pattern, d)?,
            planted: mask_from_groups(&raw.planted, pattern, d)?,
            name: raw.name,
            task,
            logits,
        })
    }
}

/// Parses space-separated groups of `0`/`1` characters.
pub fn mask_from_groups(text: &str, pattern: SparsityPattern, d: usize) -> Result<NMMask> {
    let bits = text
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Parse(format!("unexpected mask character `{other}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if bits.len() != d {
        return Err(Error::dim(format!("mask has {} bits, expected {d}", bits.len())));
    }
    NMMask::new(bits, pattern)
}
