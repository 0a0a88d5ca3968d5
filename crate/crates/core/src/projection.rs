//! Up- and down-projection units with error feedback, their densely
//! connected variant (1x1 bottleneck over concatenated inputs) and the
//! single-layer blocks used when error feedback is switched off.
//!
//! Layers hold [`ParamId`]s. Forward passes take the parameters already
//! bound on a backend, as a slice indexed by [`ParamId::index`], so the same
//! code runs on a recording [`Graph`](crate::tensor::Graph), on the eager
//! inference backend and inside gradient checks.

use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::tensor::gradcheck::{random_tensor, GradCheck, GradReport, KINK_MARGIN};
use crate::tensor::{
    he_init, seeded_rng, Backend, ConvGeometry, ParamId, ParamStore, Real, Tensor,
};

/// Initial PReLU slope.
pub const PRELU_INIT: f64 = 0.25;

/// Kernel size, stride and padding of the projection layers for a scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalePreset {
    pub scale: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ScalePreset {
    pub fn for_scale(scale: usize) -> Result<Self> {
        let (kernel, stride, padding) = match scale {
            2 => (6, 2, 2),
            4 => (8, 4, 2),
            8 => (12, 8, 2),
            _ => {
                return Err(Error::Config(format!(
                    "scale must be 2, 4 or 8, got {scale}"
                )))
            }
        };
        Ok(ScalePreset {
            scale,
            kernel,
            stride,
            padding,
        })
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry::new(self.kernel, self.stride, self.padding)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PreluMode {
    /// One slope per layer.
    Shared,
    /// One slope per output channel.
    PerChannel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Down,
}

/// Convolution or transposed convolution with bias and optional PReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub kernel: ParamId,
    pub bias: ParamId,
    pub slope: Option<ParamId>,
    pub geometry: ConvGeometry,
    pub transposed: bool,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvLayer {
    /// Allocate and He-initialize a layer in `store`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        transposed: bool,
        prelu: Option<PreluMode>,
    ) -> Self {
        let f = geometry.kernel;
        let shape = if transposed {
            [in_channels, out_channels, f, f]
        } else {
            [out_channels, in_channels, f, f]
        };
        let mut k = Tensor::zeros(shape);
        let mut b = Tensor::zeros([1, out_channels, 1, 1]);
        he_init(&mut k, Some(&mut b), out_channels, rng);
        let kernel = store.add(format!("{name}.weight"), k);
        let bias = store.add(format!("{name}.bias"), b);
        let slope = prelu.map(|mode| {
            let c = match mode {
                PreluMode::Shared => 1,
                PreluMode::PerChannel => out_channels,
            };
            store.add(
                format!("{name}.prelu"),
                Tensor::full([1, c, 1, 1], T::from_f64(PRELU_INIT)),
            )
        });
        ConvLayer {
            name: name.to_string(),
            kernel,
            bias,
            slope,
            geometry,
            transposed,
            in_channels,
            out_channels,
        }
    }

    pub fn forward<T: Real, B: Backend<T>>(
        &self,
        b: &mut B,
        params: &[B::V],
        x: &B::V,
    ) -> Result<B::V> {
        let (w, bias) = (&params[self.kernel.index()], &params[self.bias.index()]);
        let y = if self.transposed {
            b.conv_transpose2d(x, w, Some(bias), self.geometry)?
        } else {
            b.conv2d(x, w, Some(bias), self.geometry)?
        };
        match self.slope {
            Some(s) => b.prelu(&y, &params[s.index()]),
            None => Ok(y),
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.kernel, self.bias];
        ids.extend(self.slope);
        ids
    }

    pub fn param_count<T: Real>(&self, store: &ParamStore<T>) -> usize {
        self.ids().iter().map(|&id| store.value(id).len()).sum()
    }

    /// Output spatial extent for an input extent `n`.
    pub fn out_extent(&self, n: usize) -> Result<usize> {
        if self.transposed {
            self.geometry.deconv_out(n)
        } else {
            self.geometry.conv_out(n)
        }
    }
}

/// One back-projection unit.
///
/// With error feedback the body holds three layers (up: deconv, conv,
/// deconv; down: conv, deconv, conv); without it, a single sampling layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionUnit {
    pub direction: Direction,
    pub preset: ScalePreset,
    /// 1x1 convolution reducing concatenated inputs to `n_r` channels.
    pub bottleneck: Option<ConvLayer>,
    pub layers: Vec<ConvLayer>,
}

impl ProjectionUnit {
    /// Build a unit reading `in_channels` (the concatenated width of its
    /// inputs) and producing `n_r` channels. A bottleneck is added when
    /// `in_channels > n_r`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        direction: Direction,
        preset: ScalePreset,
        in_channels: usize,
        n_r: usize,
        error_feedback: bool,
        prelu: PreluMode,
    ) -> Result<Self> {
        if in_channels < n_r || n_r == 0 {
            return Err(Error::Config(format!(
                "unit {name}: input width {in_channels} is below nR = {n_r}"
            )));
        }
        let bottleneck = (in_channels > n_r).then(|| {
            ConvLayer::new(
                store,
                rng,
                &format!("{name}.bottleneck"),
                in_channels,
                n_r,
                ConvGeometry::new(1, 1, 0),
                false,
                Some(prelu),
            )
        });
        let g = preset.geometry();
        let pattern: &[bool] = match (direction, error_feedback) {
            (Direction::Up, true) => &[true, false, true],
            (Direction::Down, true) => &[false, true, false],
            (Direction::Up, false) => &[true],
            (Direction::Down, false) => &[false],
        };
        let layers = pattern
            .iter()
            .enumerate()
            .map(|(i, &transposed)| {
                ConvLayer::new(
                    store,
                    rng,
                    &format!("{name}.{}", i + 1),
                    n_r,
                    n_r,
                    g,
                    transposed,
                    Some(prelu),
                )
            })
            .collect();
        Ok(ProjectionUnit {
            direction,
            preset,
            bottleneck,
            layers,
        })
    }

    pub fn error_feedback(&self) -> bool {
        self.layers.len() == 3
    }

    pub fn n_r(&self) -> usize {
        self.layers[0].out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.bottleneck
            .as_ref()
            .map_or(self.n_r(), |b| b.in_channels)
    }

    /// Every layer in evaluation order (bottleneck first).
    pub fn all_layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.bottleneck.iter().chain(&self.layers)
    }

    pub fn param_count<T: Real>(&self, store: &ParamStore<T>) -> usize {
        self.all_layers().map(|l| l.param_count(store)).sum()
    }

    /// Apply the unit to a single `n_r`-channel input (no bottleneck).
    pub fn project<T: Real, B: Backend<T>>(
        &self,
        b: &mut B,
        params: &[B::V],
        x: &B::V,
    ) -> Result<B::V> {
        match (self.direction, self.error_feedback()) {
            (Direction::Up, true) => up_project(self, b, params, x),
            (Direction::Down, true) => down_project(self, b, params, x),
            (_, false) => plain_sample_block(&self.layers[0], b, params, x),
        }
    }

    /// Dense entry point: concatenate `inputs`, reduce through the
    /// bottleneck if present, then project.
    pub fn forward<T: Real, B: Backend<T>>(
        &self,
        b: &mut B,
        params: &[B::V],
        inputs: &[B::V],
    ) -> Result<B::V> {
        dense_project(self, b, params, inputs)
    }
}

fn check_input<T: Real, B: Backend<T>>(unit: &ProjectionUnit, b: &B, x: &B::V) -> Result<()> {
    let shape = b.value(x).shape();
    if shape[1] != unit.n_r() {
        return Err(dim_err!(
            "projection unit expects {} channels, got {:?}",
            unit.n_r(),
            shape
        ));
    }
    Ok(())
}

/// `H0 = deconv(L)`, `L0 = conv(H0)`, `e = L0 - L`, `H1 = deconv(e)`,
/// output `H0 + H1`. Each layer is followed by its PReLU.
pub fn up_project<T: Real, B: Backend<T>>(
    unit: &ProjectionUnit,
    b: &mut B,
    params: &[B::V],
    l_prev: &B::V,
) -> Result<B::V> {
    if unit.direction != Direction::Up || !unit.error_feedback() {
        return Err(Error::Contract(
            "up_project needs an up unit with error feedback".into(),
        ));
    }
    check_input(unit, b, l_prev)?;
    let [p, g, q] = [&unit.layers[0], &unit.layers[1], &unit.layers[2]];
    let h0 = p.forward(b, params, l_prev)?;
    let l0 = g.forward(b, params, &h0)?;
    let e = b.sub(&l0, l_prev)?;
    let h1 = q.forward(b, params, &e)?;
    b.add(&h0, &h1)
}

/// `L0 = conv(H)`, `H0 = deconv(L0)`, `e = H0 - H`, `L1 = conv(e)`,
/// output `L0 + L1`.
pub fn down_project<T: Real, B: Backend<T>>(
    unit: &ProjectionUnit,
    b: &mut B,
    params: &[B::V],
    h: &B::V,
) -> Result<B::V> {
    if unit.direction != Direction::Down || !unit.error_feedback() {
        return Err(Error::Contract(
            "down_project needs a down unit with error feedback".into(),
        ));
    }
    check_input(unit, b, h)?;
    let s = unit.preset.scale;
    let shape = b.value(h).shape();
    if shape[2] % s != 0 || shape[3] % s != 0 {
        return Err(dim_err!(
            "down-projection input {}x{} is not divisible by {s}",
            shape[2],
            shape[3]
        ));
    }
    let [c1, d, c2] = [&unit.layers[0], &unit.layers[1], &unit.layers[2]];
    let l0 = c1.forward(b, params, h)?;
    let h0 = d.forward(b, params, &l0)?;
    let e = b.sub(&h0, h)?;
    let l1 = c2.forward(b, params, &e)?;
    b.add(&l0, &l1)
}

/// Concatenate prior outputs, apply the bottleneck when present and run the
/// unit.
pub fn dense_project<T: Real, B: Backend<T>>(
    unit: &ProjectionUnit,
    b: &mut B,
    params: &[B::V],
    prior: &[B::V],
) -> Result<B::V> {
    let x = match prior {
        [] => {
            return Err(Error::Contract(
                "projection unit needs at least one input".into(),
            ))
        }
        [one] => one.clone(),
        many => b.concat_channels(many)?,
    };
    let width = b.value(&x).shape()[1];
    if width != unit.in_channels() {
        return Err(dim_err!(
            "unit expects {} concatenated channels, got {width}",
            unit.in_channels()
        ));
    }
    let x = match &unit.bottleneck {
        Some(layer) => layer.forward(b, params, &x)?,
        None => x,
    };
    unit.project(b, params, &x)
}

/// Single up- or down-sampling layer with PReLU (no error feedback).
pub fn plain_sample_block<T: Real, B: Backend<T>>(
    layer: &ConvLayer,
    b: &mut B,
    params: &[B::V],
    x: &B::V,
) -> Result<B::V> {
    let c = b.value(x).shape()[1];
    if c != layer.in_channels {
        return Err(dim_err!(
            "layer {} expects {} channels, got {c}",
            layer.name,
            layer.in_channels
        ));
    }
    layer.forward(b, params, x)
}

/// Bind every parameter of `store` on a backend, indexed by id.
pub fn bind_params<T: Real, B: Backend<T>>(b: &mut B, store: &ParamStore<T>) -> Vec<B::V> {
    store.ids().map(|id| b.param(store, id)).collect()
}

/// Finite-difference check of one randomly initialized projection unit on a
/// random `(1, in_channels, side, side)` input, over all of its parameters
/// and the input. `in_channels > n_r` includes the bottleneck.
#[allow(clippy::too_many_arguments)]
pub fn unit_gradcheck(
    direction: Direction,
    scale: usize,
    in_channels: usize,
    n_r: usize,
    side: usize,
    error_feedback: bool,
    seed: u64,
    checker: &GradCheck,
) -> Result<GradReport> {
    let mut rng = seeded_rng(seed);
    let mut store = ParamStore::<f64>::new();
    let unit = ProjectionUnit::new(
        &mut store,
        &mut rng,
        "unit",
        direction,
        ScalePreset::for_scale(scale)?,
        in_channels,
        n_r,
        error_feedback,
        PreluMode::Shared,
    )?;
    let mut named: Vec<(&str, Tensor<f64>)> = store
        .ids()
        .map(|id| (store.name(id), store.value(id).clone()))
        .collect();
    named.push((
        "input",
        random_tensor([1, in_channels, side, side], KINK_MARGIN, &mut rng),
    ));
    let out = match direction {
        Direction::Up => ScalePreset::for_scale(scale)?.geometry().deconv_out(side)?,
        Direction::Down => ScalePreset::for_scale(scale)?.geometry().conv_out(side)?,
    };
    let weights = random_tensor([1, n_r, out, out], 0.0, &mut rng);
    checker.run(&named, |g, vars| {
        let (params, x) = vars.split_at(vars.len() - 1);
        let y = unit.forward(g, params, &[x[0]])?;
        g.weighted_sum(y, weights.clone())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Eager, Graph};
    use rand::Rng;

    fn unit(
        direction: Direction,
        s: usize,
        c_in: usize,
        n_r: usize,
        ef: bool,
    ) -> (ParamStore<f64>, ProjectionUnit) {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(11);
        let u = ProjectionUnit::new(
            &mut store,
            &mut rng,
            "u",
            direction,
            ScalePreset::for_scale(s).unwrap(),
            c_in,
            n_r,
            ef,
            PreluMode::Shared,
        )
        .unwrap();
        (store, u)
    }

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = seeded_rng(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn eager(store: &ParamStore<f64>, u: &ProjectionUnit, x: Tensor<f64>) -> Result<Tensor<f64>> {
        let mut b = Eager;
        let params = bind_params(&mut b, store);
        let x = std::rc::Rc::new(x);
        let y = u.forward(&mut b, &params, &[x])?;
        Ok((*y).clone())
    }

    #[test]
    fn presets() {
        let k = |s| {
            let p = ScalePreset::for_scale(s).unwrap();
            (p.kernel, p.stride, p.padding)
        };
        assert_eq!(k(2), (6, 2, 2));
        assert_eq!(k(4), (8, 4, 2));
        assert_eq!(k(8), (12, 8, 2));
        assert!(ScalePreset::for_scale(3).is_err());
    }

    #[test]
    fn shape_contracts() {
        let (store, up) = unit(Direction::Up, 4, 32, 32, true);
        assert_eq!(
            eager(&store, &up, random([1, 32, 10, 10], 1))
                .unwrap()
                .shape(),
            [1, 32, 40, 40]
        );
        let (store, down) = unit(Direction::Down, 4, 32, 32, true);
        assert_eq!(
            eager(&store, &down, random([1, 32, 40, 40], 2))
                .unwrap()
                .shape(),
            [1, 32, 10, 10]
        );
        assert!(eager(&store, &down, random([1, 32, 42, 40], 2)).is_err());
        let (store, plain) = unit(Direction::Up, 4, 32, 32, false);
        assert_eq!(
            eager(&store, &plain, random([1, 32, 10, 10], 3))
                .unwrap()
                .shape(),
            [1, 32, 40, 40]
        );
    }

    #[test]
    fn up_then_down_preserves_extent() {
        for s in [2, 4, 8] {
            let (su, up) = unit(Direction::Up, s, 4, 4, true);
            let (sd, down) = unit(Direction::Down, s, 4, 4, true);
            for (h, w) in [(1, 1), (3, 7), (6, 5)] {
                let hr = eager(&su, &up, random([1, 4, h, w], 4)).unwrap();
                assert_eq!(hr.shape(), [1, 4, s * h, s * w]);
                assert_eq!(eager(&sd, &down, hr).unwrap().shape(), [1, 4, h, w]);
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let (store, down) = unit(Direction::Down, 2, 6, 6, true);
        let y = eager(&store, &down, Tensor::zeros([1, 6, 8, 8])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_residual_returns_first_reconstruction() {
        // With the feedback deconvolution zeroed (weights and bias), the
        // residual path contributes PReLU(0) = 0 and H = H0 exactly.
        let (mut store, up) = unit(Direction::Up, 2, 3, 3, true);
        for id in [up.layers[2].kernel, up.layers[2].bias] {
            store.value_mut(id).fill(0.0);
        }
        let x = std::rc::Rc::new(random([1, 3, 5, 5], 5));
        let mut b = Eager;
        let params = bind_params(&mut b, &store);
        let h = up_project(&up, &mut b, &params, &x).unwrap();
        let h0 = up.layers[0].forward(&mut b, &params, &x).unwrap();
        assert_eq!(*h, *h0);
    }

    #[test]
    fn bottleneck_presence_and_width() {
        let (store, u) = unit(Direction::Up, 2, 64, 64, true);
        assert!(u.bottleneck.is_none());
        assert_eq!(u.param_count(&store), 3 * (6 * 6 * 64 * 64 + 64 + 1));
        let (store, u) = unit(Direction::Up, 2, 192, 64, true);
        let bn = u.bottleneck.as_ref().unwrap();
        assert_eq!((bn.in_channels, bn.out_channels), (192, 64));
        assert_eq!(bn.param_count(&store), 192 * 64 + 64 + 1);
        let y = eager(&store, &u, random([1, 192, 3, 3], 6)).unwrap();
        assert_eq!(y.shape(), [1, 64, 6, 6]);
    }

    #[test]
    fn plain_block_is_a_third_of_a_unit() {
        for s in [2, 4, 8] {
            let (full_store, full) = unit(Direction::Down, s, 8, 8, true);
            let (plain_store, plain) = unit(Direction::Down, s, 8, 8, false);
            assert_eq!(
                3 * plain.param_count(&plain_store),
                full.param_count(&full_store)
            );
        }
    }

    #[test]
    fn dense_inputs_concatenate_in_order() {
        let (store, u) = unit(Direction::Down, 2, 8, 4, true);
        let a = random([1, 4, 4, 4], 7);
        let c = random([1, 4, 4, 4], 8);
        let mut b = Eager;
        let params = bind_params(&mut b, &store);
        let split = u
            .forward(&mut b, &params, &[a.clone().into(), c.clone().into()])
            .unwrap();
        let mut joined = a.data().to_vec();
        joined.extend_from_slice(c.data());
        let cat = Tensor::from_vec([1, 8, 4, 4], joined).unwrap();
        let whole = u.forward(&mut b, &params, &[cat.into()]).unwrap();
        assert_eq!(*split, *whole);
        assert!(u
            .forward(&mut b, &params, &[random([1, 4, 4, 4], 9).into()])
            .is_err());
    }

    #[test]
    fn up_unit_gradients() {
        let r = unit_gradcheck(Direction::Up, 2, 4, 4, 6, true, 1, &GradCheck::default()).unwrap();
        assert_eq!(r.inputs.len(), 3 * 3 + 1);
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn down_unit_gradients_through_bottleneck() {
        let r =
            unit_gradcheck(Direction::Down, 2, 8, 4, 6, true, 2, &GradCheck::default()).unwrap();
        assert_eq!(r.inputs.len(), 4 * 3 + 1);
        assert!(r.passes(1e-4), "{r:?}");
        let r = unit_gradcheck(Direction::Up, 4, 3, 3, 2, false, 3, &GradCheck::default()).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn every_parameter_gets_gradient() {
        let (mut store, u) = unit(Direction::Up, 4, 12, 6, true);
        let store32: ParamStore<f32> = store.cast();
        let mut g = Graph::<f64>::new();
        let params = bind_params(&mut g, &store);
        let x = g.constant(random([2, 12, 3, 3], 13));
        let y = u.forward(&mut g, &params, &[x]).unwrap();
        let w = random(g.value(y).shape(), 14);
        let loss = g.weighted_sum(y, w).unwrap();
        g.backward_into(loss, &mut store).unwrap();
        for id in store.ids() {
            assert!(
                store.grad(id).max_abs() > 0.0,
                "{} has no gradient",
                store.name(id)
            );
        }
        assert_eq!(store32.count(), store.count());
    }
}
