//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Every key is optional and
//! unknown keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Category, CorpusConfig};
use crate::error::{Error, Result};
use crate::genmodel::{ModelConfig, Objective, Schedule, TrainConfig};
use crate::motion::{MotionConfig, NormalizeScope};
use crate::rng;
use crate::selection::ThresholdScope;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub pool_per_category: usize,
    pub variable_length: bool,
    pub query_category: Category,
    pub query_count: usize,
    pub objective: Objective,
    pub schedule: String,
    pub schedule_steps: u32,
    pub train_steps: usize,
    pub train_lr: f64,
    pub train_momentum: f64,
    pub train_batch: usize,
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    pub flow_block: usize,
    pub flow_radius: usize,
    pub flow_scope: NormalizeScope,
    pub t_hat: u32,
    pub sketch_dim: usize,
    pub tau: f64,
    pub k_frac: f64,
    pub global_tau: bool,
    pub eval_draws: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("run"),
            pool_per_category: 10,
            variable_length: false,
            query_category: Category::Slide,
            query_count: 4,
            objective: Objective::FlowMatching,
            schedule: "linear".into(),
            schedule_steps: 1000,
            train_steps: 200,
            train_lr: 0.5,
            train_momentum: 0.9,
            train_batch: 8,
            finetune_steps: 60,
            finetune_lr: 0.5,
            flow_block: 5,
            flow_radius: 4,
            flow_scope: NormalizeScope::Global,
            t_hat: 751,
            sketch_dim: 512,
            tau: 90.0,
            k_frac: 0.10,
            global_tau: false,
            eval_draws: 10,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "corpus.per_category" => self.pool_per_category = parse_num(key, v)?,
            "corpus.variable_length" => self.variable_length = parse_bool(key, v)?,
            "query.category" => {
                self.query_category =
                    Category::parse(v).ok_or_else(|| Error::Config(format!("unknown category `{v}`")))?
            }
            "query.count" => self.query_count = parse_num(key, v)?,
            "model.objective" => {
                self.objective = match v {
                    "flow_matching" => Objective::FlowMatching,
                    "diffusion" => Objective::Diffusion,
                    _ => return Err(Error::Config(format!("unknown objective `{v}`"))),
                }
            }
            "model.schedule" => self.schedule = v.into(),
            "model.schedule_steps" => self.schedule_steps = parse_num(key, v)?,
            "train.steps" => self.train_steps = parse_num(key, v)?,
            "train.lr" => self.train_lr = parse_num(key, v)?,
            "train.momentum" => self.train_momentum = parse_num(key, v)?,
            "train.batch_size" => self.train_batch = parse_num(key, v)?,
            "finetune.steps" => self.finetune_steps = parse_num(key, v)?,
            "finetune.lr" => self.finetune_lr = parse_num(key, v)?,
            "flow.block" => self.flow_block = parse_num(key, v)?,
            "flow.radius" => self.flow_radius = parse_num(key, v)?,
            "flow.scope" => {
                self.flow_scope = match v {
                    "global" => NormalizeScope::Global,
                    "per_frame" => NormalizeScope::PerFrame,
                    _ => return Err(Error::Config(format!("unknown normalize scope `{v}`"))),
                }
            }
            "attr.t_hat" => self.t_hat = parse_num(key, v)?,
            "attr.sketch_dim" => self.sketch_dim = parse_num(key, v)?,
            "select.tau" => self.tau = parse_num(key, v)?,
            "select.k_frac" => self.k_frac = parse_num(key, v)?,
            "select.global_tau" => self.global_tau = parse_bool(key, v)?,
            "eval.draws" => self.eval_draws = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.pool_per_category == 0 || self.query_count == 0 {
            return fail("corpus and query counts must be positive".into());
        }
        if !matches!(self.schedule.as_str(), "linear" | "cosine") {
            return fail(format!("unknown schedule `{}`", self.schedule));
        }
        if self.schedule_steps == 0 || self.t_hat > self.schedule_steps {
            return fail(format!("t_hat {} must lie in [0, {}]", self.t_hat, self.schedule_steps));
        }
        if self.train_batch == 0 || self.eval_draws == 0 {
            return fail("batch size and eval draws must be positive".into());
        }
        if !(self.train_lr > 0.0 && self.finetune_lr > 0.0) || !(0.0..1.0).contains(&self.train_momentum) {
            return fail("learning rates must be positive and momentum in [0, 1)".into());
        }
        if self.flow_block.is_multiple_of(2) || self.flow_radius == 0 {
            return fail("flow.block must be odd and flow.radius positive".into());
        }
        if !(self.tau > 0.0 && self.tau < 100.0) {
            return fail(format!("select.tau {} outside (0, 100)", self.tau));
        }
        if !(self.k_frac > 0.0 && self.k_frac <= 1.0) {
            return fail(format!("select.k_frac {} outside (0, 1]", self.k_frac));
        }
        if self.sketch_dim == 0 {
            return fail("attr.sketch_dim must be positive".into());
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields the same config.
    pub fn to_text(&self) -> String {
        let scope = match self.flow_scope {
            NormalizeScope::Global => "global",
            NormalizeScope::PerFrame => "per_frame",
        };
        let objective = match self.objective {
            Objective::FlowMatching => "flow_matching",
            Objective::Diffusion => "diffusion",
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("corpus.per_category", self.pool_per_category.to_string());
        kv("corpus.variable_length", self.variable_length.to_string());
        kv("query.category", self.query_category.name().into());
        kv("query.count", self.query_count.to_string());
        kv("model.objective", objective.into());
        kv("model.schedule", self.schedule.clone());
        kv("model.schedule_steps", self.schedule_steps.to_string());
        kv("train.steps", self.train_steps.to_string());
        kv("train.lr", self.train_lr.to_string());
        kv("train.momentum", self.train_momentum.to_string());
        kv("train.batch_size", self.train_batch.to_string());
        kv("finetune.steps", self.finetune_steps.to_string());
        kv("finetune.lr", self.finetune_lr.to_string());
        kv("flow.block", self.flow_block.to_string());
        kv("flow.radius", self.flow_radius.to_string());
        kv("flow.scope", scope.into());
        kv("attr.t_hat", self.t_hat.to_string());
        kv("attr.sketch_dim", self.sketch_dim.to_string());
        kv("select.tau", self.tau.to_string());
        kv("select.k_frac", self.k_frac.to_string());
        kv("select.global_tau", self.global_tau.to_string());
        kv("eval.draws", self.eval_draws.to_string());
        s
    }

    pub fn pool_config(&self) -> CorpusConfig {
        let counts: Vec<_> = Category::ALL.iter().map(|&c| (c, self.pool_per_category)).collect();
        CorpusConfig {
            variable_length: self.variable_length,
            ..CorpusConfig::with_counts(&counts, rng::derive(self.seed, "pool"))
        }
    }

    pub fn query_config(&self) -> CorpusConfig {
        CorpusConfig {
            first_id: (self.pool_per_category * Category::ALL.len()) as u64,
            ..CorpusConfig::with_counts(&[(self.query_category, self.query_count)], rng::derive(self.seed, "queries"))
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let schedule = match self.schedule.as_str() {
            "cosine" => Schedule::Cosine {
                total: self.schedule_steps,
            },
            _ => Schedule::Linear {
                total: self.schedule_steps,
            },
        };
        ModelConfig {
            objective: self.objective,
            schedule,
            ..ModelConfig::default()
        }
    }

    pub fn base_training(&self) -> TrainConfig {
        TrainConfig {
            steps: self.train_steps,
            lr: self.train_lr,
            momentum: self.train_momentum,
            batch_size: self.train_batch,
            seed: rng::derive(self.seed, "base-train"),
        }
    }

    pub fn finetuning(&self) -> TrainConfig {
        TrainConfig {
            steps: self.finetune_steps,
            lr: self.finetune_lr,
            momentum: self.train_momentum,
            batch_size: self.train_batch,
            seed: rng::derive(self.seed, "finetune"),
        }
    }

    pub fn motion(&self) -> MotionConfig {
        MotionConfig {
            block: self.flow_block,
            radius: self.flow_radius,
            scope: self.flow_scope,
            ..MotionConfig::default()
        }
    }

    pub fn threshold_scope(&self) -> ThresholdScope {
        if self.global_tau {
            ThresholdScope::Global
        } else {
            ThresholdScope::PerQuery
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::parse("seed = 5 # master\n\nselect.tau = 80\nquery.category = bounce\n").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.tau, 80.0);
        assert_eq!(cfg.query_category, Category::Bounce);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(RunConfig::parse("colour = red"), Err(Error::Config(_))));
        assert!(RunConfig::parse("select.tau = 100").is_err());
        assert!(RunConfig::parse("attr.t_hat = 2000").is_err());
        assert!(RunConfig::parse("seed").is_err());
        assert!(RunConfig::parse("flow.block = 4").is_err());
    }
}
