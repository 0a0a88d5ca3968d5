use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::net::NetworkConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    L1,
    Mse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Directory of HR images, or of a prepared `LR/` + `HR/` pair layout.
    pub dataset: Option<PathBuf>,
    pub network: NetworkConfig,
    pub batch_size: usize,
    /// LR patch side; HR patches are `scale` times larger.
    pub patch_size: usize,
    pub iterations: u64,
    pub lr: f64,
    pub decay_factor: f64,
    /// Iterations between learning-rate decays; 0 disables decay.
    pub decay_interval: u64,
    pub seed: u64,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    pub checkpoint: Option<PathBuf>,
    pub log_interval: u64,
    pub loss: LossKind,
    /// Random flips, quarter turns and crops.
    pub augment: bool,
    /// Optional HR rescaling range drawn per patch before degradation.
    pub scale_jitter: Option<(f64, f64)>,
}

impl TrainConfig {
    /// Desk-scale defaults around a network configuration.
    pub fn new(network: NetworkConfig) -> Self {
        TrainConfig {
            dataset: None,
            network,
            batch_size: 16,
            patch_size: 40,
            iterations: 2000,
            lr: 1e-4,
            decay_factor: 10.0,
            decay_interval: 2000,
            seed: 0,
            checkpoint_interval: 0,
            checkpoint: None,
            log_interval: 100,
            loss: LossKind::L1,
            augment: true,
            scale_jitter: None,
        }
    }

    pub fn scale(&self) -> usize {
        self.network.scale
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.patch_size == 0 {
            return bad("batch size and patch size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.decay_factor >= 1.0) {
            return bad(format!(
                "need lr > 0 and decay factor >= 1, got {} and {}",
                self.lr, self.decay_factor
            ));
        }
        if self.decay_interval > self.iterations && self.iterations > 0 {
            return bad(format!(
                "decay interval {} exceeds the {} training iterations (use 0 to disable decay)",
                self.decay_interval, self.iterations
            ));
        }
        if self.log_interval == 0 {
            return bad("log interval must be positive".into());
        }
        if let Some((lo, hi)) = self.scale_jitter {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("invalid scale jitter range {lo}..{hi}"));
            }
        }
        Ok(())
    }

    /// Build from `key=value` pairs; later pairs override earlier ones, so
    /// command-line flags appended after a config file win. Network keys
    /// (`preset`, `scale` and the fields of [`NetworkConfig`]) are routed to
    /// the network configuration.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut merged: Vec<(String, String)> = Vec::new();
        for (k, v) in pairs {
            merged.retain(|(key, _)| key != k);
            merged.push((k.clone(), v.clone()));
        }
        let mut net_text = String::new();
        let mut rest = Vec::new();
        let mut probe = crate::net::preset("DBPN-S", 2)?;
        for (k, v) in &merged {
            if k == "preset" || k == "scale" || probe.set(k, v).unwrap_or(true) {
                let _ = writeln!(net_text, "{k}={v}");
            } else {
                rest.push((k, v));
            }
        }
        let mut cfg = TrainConfig::new(NetworkConfig::from_kv(&net_text)?);
        for (k, v) in rest {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a `key=value` file body (blank lines and `#` comments allowed).
    pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| Error::Config(format!("expected key=value, got {l:?}")))
            })
            .collect()
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let num = |v: &str| -> Result<u64> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}")))
        };
        let real = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
        };
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            "batch" | "batch_size" => self.batch_size = num(v)? as usize,
            "patch" | "patch_size" => self.patch_size = num(v)? as usize,
            "iterations" | "iters" => self.iterations = num(v)?,
            "lr" => self.lr = real(v)?,
            "decay_factor" => self.decay_factor = real(v)?,
            "decay_interval" => self.decay_interval = num(v)?,
            "seed" => self.seed = num(v)?,
            "checkpoint_interval" => self.checkpoint_interval = num(v)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "log_interval" => self.log_interval = num(v)?,
            "loss" => {
                self.loss = match v.to_ascii_lowercase().as_str() {
                    "l1" => LossKind::L1,
                    "mse" | "l2" => LossKind::Mse,
                    _ => {
                        return Err(Error::Config(format!(
                            "loss: expected l1 or mse, got {v:?}"
                        )))
                    }
                }
            }
            "augment" => {
                self.augment = match v {
                    "true" | "yes" | "1" | "on" => true,
                    "false" | "no" | "0" | "off" => false,
                    _ => {
                        return Err(Error::Config(format!(
                            "augment: expected a boolean, got {v:?}"
                        )))
                    }
                }
            }
            "scale_jitter" => {
                self.scale_jitter = if v == "off" || v.is_empty() {
                    None
                } else {
                    let (lo, hi) = v.split_once(',').ok_or_else(|| {
                        Error::Config(format!("scale_jitter: expected lo,hi or off, got {v:?}"))
                    })?;
                    Some((real(lo.trim())?, real(hi.trim())?))
                }
            }
            _ => return Err(Error::Config(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }

    /// Training fields as `key=value` lines (the network is stored separately
    /// in checkpoints).
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        if let Some(d) = &self.dataset {
            let _ = writeln!(s, "dataset={}", d.display());
        }
        let _ = writeln!(s, "batch={}", self.batch_size);
        let _ = writeln!(s, "patch={}", self.patch_size);
        let _ = writeln!(s, "iterations={}", self.iterations);
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "decay_factor={}", self.decay_factor);
        let _ = writeln!(s, "decay_interval={}", self.decay_interval);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "log_interval={}", self.log_interval);
        let loss = match self.loss {
            LossKind::L1 => "l1",
            LossKind::Mse => "mse",
        };
        let _ = writeln!(s, "loss={loss}");
        let _ = writeln!(s, "augment={}", self.augment);
        if let Some((lo, hi)) = self.scale_jitter {
            let _ = writeln!(s, "scale_jitter={lo},{hi}");
        }
        s
    }
}

/// Step-decay learning rate: `lr * decay_factor^-(iteration / decay_interval)`.
pub fn lr_schedule(iteration: u64, config: &TrainConfig) -> f64 {
    if config.decay_interval == 0 {
        return config.lr;
    }
    let decays = (iteration / config.decay_interval) as i32;
    config.lr * config.decay_factor.powi(-decays)
}
