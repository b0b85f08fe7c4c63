//! Experiment configuration and its `key = value` file format.
//!
//! Keys match the `experiment` command's flags. Lists are comma separated,
//! `#` starts a comment, blank lines are ignored.

use super::suite::ZKP_TIERS;
use super::HarnessError;
use crate::attack::{AttackConfig, LossKind};
use crate::chain::NetConfig;
use crate::defense::{TransformSpec, DEFAULT_THRESHOLD};
use crate::proof::{SecurityParam, DEFAULT_LAMBDA_SEC};
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub image_size: usize,
    pub losses: Vec<LossKind>,
    pub iterations: usize,
    pub eta: f64,
    pub lambda: f64,
    pub scale: f64,
    pub threshold: f64,
    pub lambda_sec: u32,
    pub proof_seed: u64,
    /// Repetitions per ZKP timing cell.
    pub zkp_reps: usize,
    /// Image side per payload tier, in [`ZKP_TIERS`] order.
    pub zkp_sides: [usize; 3],
    pub nodes: Vec<usize>,
    pub payload_kb: Vec<usize>,
    pub latency_base_ms: f64,
    pub latency_per_kb_ms: f64,
    pub chain_seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        Self {
            seeds: (0..10).collect(),
            image_size: 32,
            losses: LossKind::ALL.to_vec(),
            iterations: 100,
            eta: 0.01,
            lambda: 0.0,
            scale: 0.5,
            threshold: DEFAULT_THRESHOLD,
            lambda_sec: DEFAULT_LAMBDA_SEC,
            proof_seed: 1,
            zkp_reps: 5,
            zkp_sides: ZKP_TIERS.map(|(_, side)| side),
            nodes: vec![5, 50],
            payload_kb: vec![10, 275, 467],
            latency_base_ms: net.latency_base_ms,
            latency_per_kb_ms: net.latency_per_kb_ms,
            chain_seed: net.seed,
            out_dir: PathBuf::from("results"),
        }
    }
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| scalar(key, s))
        .collect()
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("{key}: cannot parse {value:?}")))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 18] = [
        "seeds",
        "image-size",
        "losses",
        "iters",
        "lr",
        "lambda",
        "scale",
        "threshold",
        "lambda-sec",
        "proof-seed",
        "zkp-reps",
        "zkp-sides",
        "nodes",
        "payload-kb",
        "latency-base-ms",
        "latency-per-kb-ms",
        "chain-seed",
        "out",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key {
            "seeds" => self.seeds = list(key, value)?,
            "image-size" => self.image_size = scalar(key, value)?,
            "losses" => self.losses = list(key, value)?,
            "iters" => self.iterations = scalar(key, value)?,
            "lr" => self.eta = scalar(key, value)?,
            "lambda" => self.lambda = scalar(key, value)?,
            "scale" => self.scale = scalar(key, value)?,
            "threshold" => self.threshold = scalar(key, value)?,
            "lambda-sec" => self.lambda_sec = scalar(key, value)?,
            "proof-seed" => self.proof_seed = scalar(key, value)?,
            "zkp-reps" => self.zkp_reps = scalar(key, value)?,
            "zkp-sides" => {
                let sides: Vec<usize> = list(key, value)?;
                self.zkp_sides = sides.try_into().map_err(|_| {
                    HarnessError::Config(format!("{key}: expected {} sides", ZKP_TIERS.len()))
                })?;
            }
            "nodes" => self.nodes = list(key, value)?,
            "payload-kb" => self.payload_kb = list(key, value)?,
            "latency-base-ms" => self.latency_base_ms = scalar(key, value)?,
            "latency-per-kb-ms" => self.latency_per_kb_ms = scalar(key, value)?,
            "chain-seed" => self.chain_seed = scalar(key, value)?,
            "out" => self.out_dir = PathBuf::from(value.trim()),
            _ => return Err(HarnessError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v)
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in [
            ("seeds", join(&self.seeds)),
            ("image-size", self.image_size.to_string()),
            ("losses", join(&self.losses)),
            ("iters", self.iterations.to_string()),
            ("lr", self.eta.to_string()),
            ("lambda", self.lambda.to_string()),
            ("scale", self.scale.to_string()),
            ("threshold", self.threshold.to_string()),
            ("lambda-sec", self.lambda_sec.to_string()),
            ("proof-seed", self.proof_seed.to_string()),
            ("zkp-reps", self.zkp_reps.to_string()),
            ("zkp-sides", join(&self.zkp_sides)),
            ("nodes", join(&self.nodes)),
            ("payload-kb", join(&self.payload_kb)),
            ("latency-base-ms", self.latency_base_ms.to_string()),
            ("latency-per-kb-ms", self.latency_per_kb_ms.to_string()),
            ("chain-seed", self.chain_seed.to_string()),
            ("out", self.out_dir.display().to_string()),
        ] {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty");
        }
        if self.losses.is_empty() {
            return bad("losses must be non-empty");
        }
        if self.image_size < 8 {
            return bad("image-size must be at least 8");
        }
        if self.nodes.is_empty() || self.nodes.contains(&0) {
            return bad("nodes must be non-empty and positive");
        }
        if self.payload_kb.is_empty() || self.payload_kb.contains(&0) {
            return bad("payload-kb must be non-empty and positive");
        }
        if self.zkp_reps == 0 {
            return bad("zkp-reps must be positive");
        }
        if self.zkp_sides.contains(&0) {
            return bad("zkp-sides must be positive");
        }
        self.attack_config(LossKind::Global).validate()?;
        self.transform_spec()?;
        SecurityParam::new(self.lambda_sec)?;
        self.net_config(4).validate()?;
        Ok(())
    }

    pub fn attack_config(&self, loss: LossKind) -> AttackConfig {
        AttackConfig {
            iterations: self.iterations,
            eta: self.eta,
            lambda: self.lambda,
            ..AttackConfig::with_loss(loss)
        }
    }

    pub fn transform_spec(&self) -> Result<TransformSpec, HarnessError> {
        Ok(TransformSpec::new(self.scale)?)
    }

    pub fn net_config(&self, n: usize) -> NetConfig {
        NetConfig {
            latency_base_ms: self.latency_base_ms,
            latency_per_kb_ms: self.latency_per_kb_ms,
            seed: self.chain_seed,
            ..NetConfig::with_nodes(n)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut cfg = ExperimentConfig::default();
        cfg.seeds = vec![3, 4];
        cfg.losses = vec![LossKind::Hist];
        cfg.eta = 0.02;
        let back = ExperimentConfig::parse(&cfg.to_kv_string()).unwrap();
        assert_eq!(back, cfg);
        for key in ExperimentConfig::KEYS {
            assert!(cfg.to_kv_string().contains(&format!("{key} = ")), "{key}");
        }
    }

    #[test]
    fn comments_and_errors() {
        let cfg = ExperimentConfig::parse("# demo\nseeds = 1, 2 # two\n\niters=5\n").unwrap();
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.iterations, 5);
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
        assert!(ExperimentConfig::parse("seeds").is_err());
        assert!(ExperimentConfig::parse("seeds = ").is_err());
        assert!(ExperimentConfig::parse("scale = 0.3").is_err());
        assert!(ExperimentConfig::parse("losses = global, fancy").is_err());
        assert!(ExperimentConfig::parse("zkp-sides = 2,3").is_err());
        assert_eq!(
            ExperimentConfig::parse("zkp-sides = 2,3,4").unwrap().zkp_sides,
            [2, 3, 4]
        );
    }
}
