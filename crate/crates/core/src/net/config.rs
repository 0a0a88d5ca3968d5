use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::imaging::ColorSpace;
use crate::projection::{PreluMode, ScalePreset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RecurrentMode {
    /// Feed-forward stages, each with its own parameters.
    None,
    /// One up and one down unit reused for every iteration.
    Shared,
    /// A dense block of `stages` units repeated; the final down unit of one
    /// iteration seeds the next.
    Transition,
}

impl RecurrentMode {
    fn as_str(self) -> &'static str {
        match self {
            RecurrentMode::None => "none",
            RecurrentMode::Shared => "shared",
            RecurrentMode::Transition => "transition",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Free-form label, the preset name for presets.
    pub name: String,
    pub scale: usize,
    /// Channels of the 3x3 feature layer.
    pub n0: usize,
    /// Channels inside the projection units.
    pub n_r: usize,
    /// Number of up-projection units per block.
    pub stages: usize,
    pub color: ColorSpace,
    pub dense: bool,
    pub error_feedback: bool,
    pub recurrent: RecurrentMode,
    /// Block repetitions for the recurrent modes (`recurrences` in key=value
    /// form); 1 otherwise.
    pub iterations: usize,
    /// Add the bicubic upscale of the input to the output.
    pub residual: bool,
    pub prelu: PreluMode,
    pub projection: ScalePreset,
    /// Reconstruction kernel size (odd; padded to keep the extent).
    pub recon_kernel: usize,
}

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &[
    "DBPN-SS",
    "DBPN-S",
    "DBPN-M",
    "DBPN-L",
    "D-DBPN-L",
    "D-DBPN",
    "DBPN",
    "DBPN-R64-10",
    "DBPN-R128-5",
    "DBPN-MR64-3",
    "DBPN-RES-MR64-3",
];

/// Published parameter count, in thousands, of a named network at scale
/// `s`. The recurrent variants are published for 4x only.
pub fn published_params_k(name: &str, s: usize) -> Option<usize> {
    let by_scale = |v: [usize; 3]| match s {
        2 => Some(v[0]),
        4 => Some(v[1]),
        8 => Some(v[2]),
        _ => None,
    };
    match (name, s) {
        ("DBPN-SS", _) => by_scale([106, 188, 421]),
        ("DBPN-S", _) => by_scale([337, 595, 1332]),
        ("DBPN-M", _) => by_scale([779, 1381, 3101]),
        ("DBPN-L", _) => by_scale([1221, 2168, 4871]),
        ("D-DBPN-L", _) => by_scale([1230, 2176, 4879]),
        ("D-DBPN", _) => by_scale([5819, 10426, 23205]),
        ("DBPN", _) => by_scale([8811, 15348, 34026]),
        ("DBPN-R64-10", 4) => Some(1614),
        ("DBPN-R128-5", 4) => Some(6349),
        ("DBPN-MR64-3" | "DBPN-RES-MR64-3", 4) => Some(10419),
        _ => None,
    }
}

/// Relative deviation of `count` from the published figure, if there is one.
pub fn published_deviation(name: &str, s: usize, count: usize) -> Option<f64> {
    published_params_k(name, s).map(|k| {
        let reference = (k * 1000) as f64;
        (count as f64 - reference).abs() / reference
    })
}

/// Published configuration of a named network at scale `s`.
pub fn preset(name: &str, s: usize) -> Result<NetworkConfig> {
    let projection = ScalePreset::for_scale(s)?;
    let base = NetworkConfig {
        name: name.to_string(),
        scale: s,
        n0: 128,
        n_r: 32,
        stages: 2,
        color: ColorSpace::Y,
        dense: false,
        error_feedback: true,
        recurrent: RecurrentMode::None,
        iterations: 1,
        residual: false,
        prelu: PreluMode::Shared,
        projection,
        recon_kernel: 1,
    };
    let rgb = |n0, n_r, stages| NetworkConfig {
        n0,
        n_r,
        stages,
        color: ColorSpace::Rgb,
        recon_kernel: 3,
        ..base.clone()
    };
    let cfg = match name {
        "DBPN-SS" => NetworkConfig {
            n0: 64,
            n_r: 18,
            ..base
        },
        "DBPN-S" => base,
        "DBPN-M" => NetworkConfig { stages: 4, ..base },
        "DBPN-L" => NetworkConfig { stages: 6, ..base },
        "D-DBPN-L" => NetworkConfig {
            stages: 6,
            dense: true,
            ..base
        },
        "D-DBPN" => NetworkConfig {
            dense: true,
            ..rgb(256, 64, 7)
        },
        "DBPN" => NetworkConfig {
            dense: true,
            ..rgb(256, 64, 10)
        },
        "DBPN-R64-10" => NetworkConfig {
            recurrent: RecurrentMode::Shared,
            iterations: 10,
            ..rgb(256, 64, 1)
        },
        "DBPN-R128-5" => NetworkConfig {
            recurrent: RecurrentMode::Shared,
            iterations: 5,
            ..rgb(256, 128, 1)
        },
        "DBPN-MR64-3" | "DBPN-RES-MR64-3" => NetworkConfig {
            dense: true,
            recurrent: RecurrentMode::Transition,
            iterations: 3,
            residual: name == "DBPN-RES-MR64-3",
            ..rgb(256, 64, 7)
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {v:?}"
        ))),
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {v:?}")))
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !matches!(self.scale, 2 | 4 | 8) {
            return bad(format!("scale must be 2, 4 or 8, got {}", self.scale));
        }
        let p = self.projection;
        if p.scale != self.scale || p.stride != self.scale || p.kernel != p.stride + 2 * p.padding {
            return bad(format!(
                "projection geometry ({}, {}, {}) does not scale by exactly {} (need stride = s and kernel = stride + 2 * padding)",
                p.kernel, p.stride, p.padding, self.scale
            ));
        }
        if self.stages == 0 || self.iterations == 0 {
            return bad("stages and recurrences must be at least 1".into());
        }
        if self.n_r == 0 || self.n0 < self.n_r {
            return bad(format!(
                "need n0 >= nR >= 1, got n0={} nR={}",
                self.n0, self.n_r
            ));
        }
        if self.recon_kernel.is_multiple_of(2) {
            return bad(format!(
                "reconstruction kernel must be odd, got {}",
                self.recon_kernel
            ));
        }
        match self.recurrent {
            RecurrentMode::None if self.iterations != 1 => {
                bad("recurrences > 1 needs a recurrent mode".into())
            }
            RecurrentMode::Shared if self.dense => {
                bad("the shared-unit recurrent network has no dense connections".into())
            }
            RecurrentMode::Transition if !self.dense || self.stages < 2 => {
                bad("the multi-iteration network needs a dense block of at least 2 stages".into())
            }
            _ => Ok(()),
        }
    }

    /// `key=value` lines, one per field; parsed back by [`from_kv`](Self::from_kv).
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let color = match self.color {
            ColorSpace::Y => "y",
            ColorSpace::Rgb => "rgb",
        };
        let prelu = match self.prelu {
            PreluMode::Shared => "shared",
            PreluMode::PerChannel => "per-channel",
        };
        let fields: [(&str, String); 15] = [
            ("name", self.name.clone()),
            ("scale", self.scale.to_string()),
            ("n0", self.n0.to_string()),
            ("nr", self.n_r.to_string()),
            ("stages", self.stages.to_string()),
            ("color", color.into()),
            ("dense", self.dense.to_string()),
            ("error_feedback", self.error_feedback.to_string()),
            ("recurrent", self.recurrent.as_str().into()),
            ("recurrences", self.iterations.to_string()),
            ("residual", self.residual.to_string()),
            ("prelu", prelu.into()),
            ("kernel", self.projection.kernel.to_string()),
            ("padding", self.projection.padding.to_string()),
            ("recon_kernel", self.recon_kernel.to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Set one field from its `key=value` spelling. Returns `false` for
    /// keys that are not network fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "name" => self.name = value.to_string(),
            // A scale change resets the projection geometry to its preset.
            "scale" => {
                self.scale = parse_usize(key, value)?;
                self.projection = ScalePreset::for_scale(self.scale)?;
            }
            "n0" => self.n0 = parse_usize(key, value)?,
            "nr" | "n_r" => self.n_r = parse_usize(key, value)?,
            "stages" => self.stages = parse_usize(key, value)?,
            "color" => {
                self.color = match value.to_ascii_lowercase().as_str() {
                    "y" | "luma" | "luminance" => ColorSpace::Y,
                    "rgb" => ColorSpace::Rgb,
                    _ => {
                        return Err(Error::Config(format!(
                            "color: expected y or rgb, got {value:?}"
                        )))
                    }
                }
            }
            "dense" => self.dense = parse_bool(key, value)?,
            "error_feedback" | "ef" => self.error_feedback = parse_bool(key, value)?,
            "recurrent" => {
                self.recurrent = match value {
                    "none" => RecurrentMode::None,
                    "shared" => RecurrentMode::Shared,
                    "transition" => RecurrentMode::Transition,
                    _ => {
                        return Err(Error::Config(format!(
                            "recurrent: expected none, shared or transition, got {value:?}"
                        )))
                    }
                }
            }
            "recurrences" => self.iterations = parse_usize(key, value)?,
            "residual" => self.residual = parse_bool(key, value)?,
            "prelu" => {
                self.prelu = match value {
                    "shared" => PreluMode::Shared,
                    "per-channel" | "per_channel" => PreluMode::PerChannel,
                    _ => {
                        return Err(Error::Config(format!(
                            "prelu: expected shared or per-channel, got {value:?}"
                        )))
                    }
                }
            }
            "kernel" => self.projection.kernel = parse_usize(key, value)?,
            "padding" => self.projection.padding = parse_usize(key, value)?,
            "recon_kernel" => self.recon_kernel = parse_usize(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parse `key=value` lines (blank lines and `#` comments ignored). A
    /// `preset` key selects the starting configuration (default `DBPN-S`);
    /// every other key overrides one field. Unknown keys are errors.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut order = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if map.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("duplicate key {k:?}")));
            }
            order.push(k);
        }
        let scale = match map.get("scale") {
            Some(v) => parse_usize("scale", v)?,
            None => return Err(Error::Config("missing key scale".into())),
        };
        let base = map.get("preset").map(String::as_str).unwrap_or("DBPN-S");
        let mut cfg = preset(base, scale)?;
        for k in &order {
            if k == "preset" || k == "scale" {
                continue;
            }
            if !cfg.set(k, &map[k])? {
                return Err(Error::Config(format!("unknown network key {k:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
