//! Network assembly: initial feature extraction, back-projection stages and
//! reconstruction from the concatenated HR feature maps, for the
//! feed-forward, dense, recurrent (shared unit) and multi-iteration
//! (dense block repeated) variants.

mod checkpoint;
mod config;
mod summary;

use std::rc::Rc;

use crate::error::{dim_err, Error, Result};
use crate::ibp::resample::{upscale, upscale_tensor};
use crate::imaging::{replace_luma, rgb_to_ycbcr, ycbcr_to_rgb, ColorSpace, ImagePlane};
use crate::projection::{bind_params, ConvLayer, Direction, ProjectionUnit};
use crate::tensor::gradcheck::{random_tensor, GradCheck, GradReport};
use crate::tensor::{
    seeded_rng, Backend, ConvGeometry, Eager, Graph, ParamStore, Real, Tensor, Var,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{
    preset, published_deviation, published_params_k, NetworkConfig, RecurrentMode, PRESETS,
};
pub use summary::{LayerSummary, NetSummary};

/// A built network: its configuration, parameter storage and layer layout.
#[derive(Clone, Debug)]
pub struct DbpnNetwork<T = f32> {
    config: NetworkConfig,
    params: ParamStore<T>,
    feat0: ConvLayer,
    feat1: ConvLayer,
    /// Feed-forward and multi-iteration layouts: `up1, down1, ..., upT`.
    /// Shared-unit layout: `up, down`.
    units: Vec<ProjectionUnit>,
    recon: ConvLayer,
}

impl<T: Real> DbpnNetwork<T> {
    /// Allocate and He-initialize all parameters from `seed`.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let c = config.color.channels();
        let (n0, nr) = (config.n0, config.n_r);
        let prelu = Some(config.prelu);
        let feat0 = ConvLayer::new(
            &mut store,
            &mut rng,
            "feat0",
            c,
            n0,
            ConvGeometry::new(3, 1, 1),
            false,
            prelu,
        );
        let feat1 = ConvLayer::new(
            &mut store,
            &mut rng,
            "feat1",
            n0,
            nr,
            ConvGeometry::new(1, 1, 0),
            false,
            prelu,
        );
        let preset = config.projection;
        let ef = config.error_feedback;
        let mut unit = |store: &mut ParamStore<T>, name: String, dir, width| {
            ProjectionUnit::new(
                store,
                &mut rng,
                &name,
                dir,
                preset,
                width,
                nr,
                ef,
                config.prelu,
            )
        };
        let mut units = Vec::new();
        let collected = match config.recurrent {
            RecurrentMode::Shared => {
                units.push(unit(&mut store, "up".into(), Direction::Up, nr)?);
                units.push(unit(&mut store, "down".into(), Direction::Down, nr)?);
                config.iterations
            }
            RecurrentMode::None | RecurrentMode::Transition => {
                let t_max = config.stages;
                for t in 1..=t_max {
                    let width = if config.dense {
                        (t - 1).max(1) * nr
                    } else {
                        nr
                    };
                    units.push(unit(&mut store, format!("up{t}"), Direction::Up, width)?);
                    if t < t_max {
                        let width = if config.dense { t * nr } else { nr };
                        units.push(unit(
                            &mut store,
                            format!("down{t}"),
                            Direction::Down,
                            width,
                        )?);
                    }
                }
                match config.recurrent {
                    RecurrentMode::Transition => config.iterations,
                    _ => t_max,
                }
            }
        };
        let k = config.recon_kernel;
        let recon = ConvLayer::new(
            &mut store,
            &mut rng,
            "recon",
            collected * nr,
            c,
            ConvGeometry::new(k, 1, k / 2),
            false,
            None,
        );
        Ok(DbpnNetwork {
            config: config.clone(),
            params: store,
            feat0,
            feat1,
            units,
            recon,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn units(&self) -> &[ProjectionUnit] {
        &self.units
    }

    pub fn reconstruction(&self) -> &ConvLayer {
        &self.recon
    }

    /// Total trainable scalars (kernels, biases and PReLU slopes).
    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    /// Parameters held by the projection units (bottlenecks included).
    pub fn projection_params(&self) -> usize {
        self.units.iter().map(|u| u.param_count(&self.params)).sum()
    }

    /// Same layout with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> DbpnNetwork<U> {
        DbpnNetwork {
            config: self.config.clone(),
            params: self.params.cast(),
            feat0: self.feat0.clone(),
            feat1: self.feat1.clone(),
            units: self.units.clone(),
            recon: self.recon.clone(),
        }
    }

    fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let c = self.config.color.channels();
        if shape[1] != c || shape[2] == 0 || shape[3] == 0 {
            return Err(dim_err!(
                "network expects ({c}-channel, nonempty) input, got {:?}",
                shape
            ));
        }
        Ok(())
    }

    /// Run a dense or plain block of `units` (laid out `up1, down1, ...`)
    /// from LR features `l0`. Returns the up-unit outputs and, when asked
    /// for, the output of the final down unit.
    fn run_block<B: Backend<T>>(
        &self,
        b: &mut B,
        params: &[B::V],
        units: &[ProjectionUnit],
        l0: B::V,
        want_last_down: bool,
    ) -> Result<(Vec<B::V>, Option<B::V>)> {
        let dense = self.config.dense;
        let mut hs: Vec<B::V> = Vec::new();
        let mut ls: Vec<B::V> = Vec::new();
        let mut i = 0;
        while i < units.len() {
            let up_in = if ls.is_empty() {
                vec![l0.clone()]
            } else if dense {
                ls.clone()
            } else {
                vec![ls[ls.len() - 1].clone()]
            };
            hs.push(units[i].forward(b, params, &up_in)?);
            i += 1;
            if i < units.len() {
                let is_last_down = i + 1 == units.len();
                if !is_last_down || want_last_down {
                    let down_in = if dense {
                        hs.clone()
                    } else {
                        vec![hs[hs.len() - 1].clone()]
                    };
                    ls.push(units[i].forward(b, params, &down_in)?);
                }
                i += 1;
            }
        }
        let last_down = if want_last_down && units.len() > 1 {
            ls.pop()
        } else {
            None
        };
        Ok((hs, last_down))
    }

    /// Forward pass on any backend; `params` must come from
    /// [`bind_params`] over this network's store.
    pub fn forward<B: Backend<T>>(&self, b: &mut B, params: &[B::V], x: &B::V) -> Result<B::V> {
        let shape = b.value(x).shape();
        self.check_input(shape)?;
        let f0 = self.feat0.forward(b, params, x)?;
        let l0 = self.feat1.forward(b, params, &f0)?;
        let collected = match self.config.recurrent {
            RecurrentMode::None => self.run_block(b, params, &self.units, l0, false)?.0,
            RecurrentMode::Shared => {
                let (up, down) = (&self.units[0], &self.units[1]);
                let mut l = l0;
                let mut hs = Vec::with_capacity(self.config.iterations);
                for it in 0..self.config.iterations {
                    let h = up.forward(b, params, std::slice::from_ref(&l))?;
                    if it + 1 < self.config.iterations {
                        l = down.forward(b, params, std::slice::from_ref(&h))?;
                    }
                    hs.push(h);
                }
                hs
            }
            RecurrentMode::Transition => {
                let mut seed = l0;
                let mut outs = Vec::with_capacity(self.config.iterations);
                for it in 0..self.config.iterations {
                    let more = it + 1 < self.config.iterations;
                    let (mut hs, last_down) =
                        self.run_block(b, params, &self.units, seed.clone(), more)?;
                    outs.push(hs.pop().expect("block has at least one up unit"));
                    if let Some(l) = last_down {
                        seed = l;
                    }
                }
                outs
            }
        };
        let cat = if collected.len() == 1 {
            collected[0].clone()
        } else {
            b.concat_channels(&collected)?
        };
        let y = self.recon.forward(b, params, &cat)?;
        if self.config.residual {
            let skip = upscale_tensor(b.value(x), self.config.scale)?;
            let skip = b.constant(skip);
            b.add(&y, &skip)
        } else {
            Ok(y)
        }
    }

    /// Record a forward pass on `g`, binding every parameter as a leaf.
    pub fn forward_graph(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let params = bind_params(g, &self.params);
        self.forward(g, &params, &x)
    }

    /// Gradient-free inference.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut b = Eager;
        let params = bind_params(&mut b, &self.params);
        let y = self.forward(&mut b, &params, &Rc::new(x.clone()))?;
        Ok(Rc::try_unwrap(y).unwrap_or_else(|rc| (*rc).clone()))
    }

    /// Super-resolve one image, clamped to `[0, 1]`. A luma network given an
    /// RGB image works on the Y plane of its YCbCr form and upscales the
    /// chroma planes bicubically.
    pub fn upscale_image(&self, img: &ImagePlane) -> Result<ImagePlane> {
        let s = self.config.scale;
        match (self.config.color, img.color()) {
            (net, have) if net == have => {
                let y = self.infer(&img.to_tensor())?;
                Ok(ImagePlane::from_tensor(&y, 0, net)?.clamped())
            }
            (ColorSpace::Y, ColorSpace::Rgb) => {
                let ycc = rgb_to_ycbcr(img)?;
                let luma = ImagePlane::from_planar(
                    img.height(),
                    img.width(),
                    ColorSpace::Y,
                    ycc.plane(0).to_vec(),
                )?;
                let sr = self.upscale_image(&luma)?;
                let chroma = upscale(&ycc, s)?;
                Ok(ycbcr_to_rgb(&replace_luma(&chroma, &sr)?)?.clamped())
            }
            _ => Err(dim_err!("an RGB network cannot upscale a grayscale image")),
        }
    }

    /// Per-layer census of weighted layers.
    pub fn describe(&self) -> NetSummary {
        summary::describe(self)
    }

    /// Number of weighted layers in [`describe`](Self::describe).
    pub fn depth(&self) -> usize {
        self.describe().layers.len()
    }

    /// Replace every parameter from `other`, which must have the same names
    /// and shapes in the same order.
    pub fn load_params(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                other.len()
            )));
        }
        for id in self.params.ids().collect::<Vec<_>>() {
            if self.params.name(id) != other.name(id)
                || self.params.value(id).shape() != other.value(id).shape()
            {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    self.params.name(id),
                    self.params.value(id).shape(),
                    other.name(id),
                    other.value(id).shape()
                )));
            }
        }
        for id in self.params.ids().collect::<Vec<_>>() {
            self.params.set(id, other.value(id).clone())?;
        }
        Ok(())
    }
}

impl DbpnNetwork<f64> {
    /// Finite-difference check of the backward pass for the scalar
    /// `sum(weights * net(x))`, over every parameter and the input. With the
    /// residual skip on, the input is left out: the bicubic skip enters the
    /// graph as a constant, so no gradient reaches the input through it.
    pub fn check_gradients(
        &self,
        x: &Tensor<f64>,
        weights: &Tensor<f64>,
        checker: &GradCheck,
    ) -> Result<GradReport> {
        let store = &self.params;
        let mut named: Vec<(&str, Tensor<f64>)> = store
            .ids()
            .map(|id| (store.name(id), store.value(id).clone()))
            .collect();
        let with_input = !self.config.residual;
        if with_input {
            named.push(("input", x.clone()));
        }
        let n = store.len();
        checker.run(&named, |g, vars| {
            let x = if with_input {
                vars[n]
            } else {
                g.constant(x.clone())
            };
            let y = self.forward(g, &vars[..n], &x)?;
            g.weighted_sum(y, weights.clone())
        })
    }
}

/// Miniature configurations (n0 4, nR 2, three stages, 2x) covering the
/// feed-forward, dense, shared-unit and multi-iteration layouts with and
/// without the residual skip.
pub fn miniature_configs() -> Vec<NetworkConfig> {
    let tiny = |name: &str, recurrent, dense, color, residual| NetworkConfig {
        name: name.into(),
        scale: 2,
        n0: 4,
        n_r: 2,
        stages: if recurrent == RecurrentMode::Shared {
            1
        } else {
            3
        },
        color,
        dense,
        error_feedback: true,
        recurrent,
        iterations: if recurrent == RecurrentMode::None {
            1
        } else {
            2
        },
        residual,
        prelu: crate::projection::PreluMode::Shared,
        projection: crate::projection::ScalePreset::for_scale(2).expect("2x preset exists"),
        recon_kernel: 3,
    };
    use ColorSpace::{Rgb, Y};
    vec![
        tiny("tiny", RecurrentMode::None, false, Y, false),
        tiny("tiny-dense-rgb", RecurrentMode::None, true, Rgb, false),
        tiny("tiny-shared-res", RecurrentMode::Shared, false, Y, true),
        tiny("tiny-mr", RecurrentMode::Transition, true, Y, false),
        tiny(
            "tiny-mr-res-rgb",
            RecurrentMode::Transition,
            true,
            Rgb,
            true,
        ),
    ]
}

/// Whole-network gradient checks over [`miniature_configs`] on random 3x3
/// inputs.
pub fn network_gradcheck(seed: u64, checker: &GradCheck) -> Result<Vec<(String, GradReport)>> {
    let mut rng = seeded_rng(seed);
    miniature_configs()
        .into_iter()
        .map(|cfg| {
            let net = DbpnNetwork::<f64>::build(&cfg, seed)?;
            let c = cfg.color.channels();
            let x = random_tensor([1, c, 3, 3], 0.0, &mut rng).map(|v| 0.5 + 0.5 * v);
            let w = random_tensor([1, c, 6, 6], 0.0, &mut rng);
            Ok((cfg.name.clone(), net.check_gradients(&x, &w, checker)?))
        })
        .collect()
}
