//! Classical single-image iterative back-projection.
//!
//! Starting from a bicubic upscale of the observation, each iteration
//! simulates the imaging model (Gaussian blur, then antialiased bicubic
//! downscale), measures the residual against the observed LR image and adds
//! the bicubically upscaled residual back onto the estimate.

pub mod resample;

use crate::error::{dim_err, Error, Result};
use crate::imaging::ImagePlane;

pub use resample::{bicubic_kernel, downscale, gaussian_blur, resize_bicubic, resize_to, upscale};

#[derive(Clone, Debug, PartialEq)]
pub struct IbpConfig {
    pub scale: usize,
    /// Standard deviation of the blur `g`; `0` disables the blur.
    pub sigma: f64,
    pub iterations: usize,
    /// Stop once the residual norm is at or below this value.
    pub tolerance: f64,
}

impl IbpConfig {
    /// Defaults for scale `s`: `sigma = s / 4`, 10 iterations, no early stop.
    pub fn new(scale: usize) -> Self {
        IbpConfig {
            scale,
            sigma: scale as f64 / 4.0,
            iterations: 10,
            tolerance: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.scale, 2 | 4 | 8) {
            return Err(Error::Config(format!(
                "IBP scale must be 2, 4 or 8, got {}",
                self.scale
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("IBP needs at least one iteration".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("invalid blur sigma {}", self.sigma)));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config(format!(
                "invalid tolerance {}",
                self.tolerance
            )));
        }
        Ok(())
    }

    /// The simulated imaging model: blur then downscale by `1/s`.
    pub fn project_down(&self, hr: &ImagePlane) -> Result<ImagePlane> {
        if self.sigma > 0.0 {
            downscale(&gaussian_blur(hr, self.sigma)?, self.scale)
        } else {
            downscale(hr, self.scale)
        }
    }
}

/// Running estimate of an IBP solve.
#[derive(Clone, Debug)]
pub struct IbpState {
    pub estimate: ImagePlane,
    /// LR residual from the most recent iteration.
    pub residual: ImagePlane,
    pub iteration: usize,
}

impl IbpState {
    pub fn new(lr: &ImagePlane, config: &IbpConfig) -> Result<Self> {
        config.validate()?;
        if lr.height() == 0 || lr.width() == 0 {
            return Err(dim_err!("empty LR image"));
        }
        Ok(IbpState {
            estimate: upscale(lr, config.scale)?,
            residual: ImagePlane::new(lr.height(), lr.width(), lr.color()),
            iteration: 0,
        })
    }

    /// Compute the residual of the current estimate and, unless it is
    /// within tolerance, back-project it. Returns the residual norm and
    /// whether the estimate changed.
    pub fn step(&mut self, lr: &ImagePlane, config: &IbpConfig) -> Result<(f64, bool)> {
        let simulated = config.project_down(&self.estimate)?;
        self.residual = lr.sub(&simulated)?;
        self.iteration += 1;
        let norm = self.residual.l2_norm();
        if norm <= config.tolerance {
            return Ok((norm, false));
        }
        self.estimate = self.estimate.add(&upscale(&self.residual, config.scale)?)?;
        Ok((norm, true))
    }
}

/// Run IBP on `lr`. Returns the final estimate and the residual L2 norm
/// measured at each iteration.
pub fn ibp_run(lr: &ImagePlane, config: &IbpConfig) -> Result<(ImagePlane, Vec<f64>)> {
    let mut state = IbpState::new(lr, config)?;
    let mut trace = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let (norm, moved) = state.step(lr, config)?;
        trace.push(norm);
        if !moved {
            break;
        }
    }
    Ok((state.estimate, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{degrade, ColorSpace};

    fn scene(h: usize, w: usize) -> ImagePlane {
        ImagePlane::from_fn(h, w, ColorSpace::Y, |_, y, x| {
            let (y, x) = (y as f64, x as f64);
            0.5 + 0.2 * (y * 0.35).sin() * (x * 0.21).cos()
                + if x > y * 0.7 + 5.0 { 0.2 } else { 0.0 }
        })
    }

    #[test]
    fn constant_input_stays_constant() {
        let lr = ImagePlane::filled(10, 12, ColorSpace::Rgb, 0.42);
        let (sr, trace) = ibp_run(&lr, &IbpConfig::new(4)).unwrap();
        assert_eq!(sr.dims(), (40, 48));
        assert!(sr.data().iter().all(|v| (v - 0.42).abs() < 1e-6));
        assert!(trace[0] < 1e-9);
    }

    #[test]
    fn fixed_point_stops_after_one_iteration() {
        let lr = ImagePlane::filled(8, 8, ColorSpace::Y, 0.25);
        let cfg = IbpConfig {
            sigma: 0.0,
            ..IbpConfig::new(2)
        };
        let (sr, trace) = ibp_run(&lr, &cfg).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0], 0.0);
        assert_eq!(sr, upscale(&lr, 2).unwrap());
    }

    #[test]
    fn never_worse_than_initialization() {
        let hr = scene(48, 48);
        for s in [2, 4] {
            let lr = degrade(&hr, s).unwrap();
            let cfg = IbpConfig::new(s);
            let (sr, trace) = ibp_run(&lr, &cfg).unwrap();
            let fit = lr.sub(&cfg.project_down(&sr).unwrap()).unwrap().l2_norm();
            assert!(fit <= trace[0], "s={s}: {fit} > {}", trace[0]);
        }
    }

    #[test]
    fn deterministic() {
        let lr = degrade(&scene(32, 32), 2).unwrap();
        let a = ibp_run(&lr, &IbpConfig::new(2)).unwrap();
        let b = ibp_run(&lr, &IbpConfig::new(2)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn invalid_configs() {
        let lr = ImagePlane::filled(4, 4, ColorSpace::Y, 0.5);
        assert!(ibp_run(&lr, &IbpConfig::new(3)).is_err());
        let zero = IbpConfig {
            iterations: 0,
            ..IbpConfig::new(2)
        };
        assert!(ibp_run(&lr, &zero).is_err());
    }
}
