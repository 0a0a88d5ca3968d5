//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use super::{seeded_rng, ConvGeometry, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Relative error between analytic and numeric gradients for one input.
#[derive(Clone, Debug)]
pub struct InputError {
    pub name: String,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub inputs: Vec<InputError>,
    pub max_rel_error: f64,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Perturbation size for the central differences.
    pub step: f64,
    /// Multiply the analytic gradient by this factor before comparing.
    /// Only used to verify that the harness detects wrong gradients.
    pub corrupt_analytic: Option<f64>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            corrupt_analytic: None,
        }
    }
}

/// `||a - n|| / max(||a||, ||n||)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

impl GradCheck {
    /// Compare the backward pass of `f` against central differences, for
    /// every element of every named input. `f` must return a scalar node.
    pub fn run<F>(&self, inputs: &[(&str, Tensor<f64>)], f: F) -> Result<GradReport>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let eval = |values: &[Tensor<f64>]| -> Result<f64> {
            let mut g = Graph::new();
            let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
            let out = f(&mut g, &vars)?;
            let v = g.value(out);
            if v.len() != 1 {
                return Err(Error::Contract(format!(
                    "gradient check needs a scalar function, got shape {:?}",
                    v.shape()
                )));
            }
            Ok(v.data()[0])
        };

        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|(_, t)| g.input(t.clone(), true))
            .collect();
        let out = f(&mut g, &vars)?;
        let grads = g.backward(out)?;

        let mut values: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
        let mut report = GradReport {
            inputs: Vec::new(),
            max_rel_error: 0.0,
        };
        for (i, (name, tensor)) in inputs.iter().enumerate() {
            let mut analytic = match grads.get(vars[i]) {
                Some(gr) => gr.data().to_vec(),
                None => vec![0.0; tensor.len()],
            };
            if let Some(k) = self.corrupt_analytic {
                analytic.iter_mut().for_each(|a| *a *= k);
            }
            let mut numeric = Vec::with_capacity(tensor.len());
            for j in 0..tensor.len() {
                let orig = values[i].data()[j];
                values[i].data_mut()[j] = orig + self.step;
                let plus = eval(&values)?;
                values[i].data_mut()[j] = orig - self.step;
                let minus = eval(&values)?;
                values[i].data_mut()[j] = orig;
                numeric.push((plus - minus) / (2.0 * self.step));
            }
            let rel_error = relative_error(&analytic, &numeric);
            report.max_rel_error = report.max_rel_error.max(rel_error);
            report.inputs.push(InputError {
                name: name.to_string(),
                rel_error,
            });
        }
        Ok(report)
    }
}

/// Uniform values in `[-1, 1]` kept at least `margin` away from zero, so
/// PReLU kinks and L1 ties stay outside the finite-difference stencil.
pub fn random_tensor<R: Rng>(shape: [usize; 4], margin: f64, rng: &mut R) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(margin..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Margin from kinks and ties used by [`op_suite`].
pub const KINK_MARGIN: f64 = 1e-3;

/// Check every differentiable engine operation, each contracted to a
/// scalar through random weights. Strided cases use the 2x, 4x and 8x
/// projection geometries.
pub fn op_suite(checker: &GradCheck, seed: u64) -> Result<Vec<(String, GradReport)>> {
    let mut rng = seeded_rng(seed);
    let mut rand = |shape: [usize; 4]| random_tensor(shape, KINK_MARGIN, &mut rng);
    let mut out = Vec::new();
    let mut push = |name: String, r: Result<GradReport>| -> Result<()> {
        out.push((name, r?));
        Ok(())
    };

    let convs = [
        (ConvGeometry::new(3, 1, 1), 5, 2, 3),
        (ConvGeometry::new(1, 1, 0), 4, 3, 2),
        (ConvGeometry::new(6, 2, 2), 6, 2, 2),
        (ConvGeometry::new(8, 4, 2), 8, 2, 2),
        (ConvGeometry::new(12, 8, 2), 16, 1, 2),
    ];
    for (geom, side, c_in, c_out) in convs {
        let label = format!("{}/{}/{}", geom.kernel, geom.stride, geom.padding);
        let x = rand([2, c_in, side, side]);
        let w = rand([c_out, c_in, geom.kernel, geom.kernel]);
        let b = rand([1, c_out, 1, 1]);
        let o = geom.conv_out(side)?;
        let weights = rand([2, c_out, o, o]);
        push(
            format!("conv2d {label}"),
            checker.run(&[("x", x), ("w", w), ("b", b)], |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), geom)?;
                g.weighted_sum(y, weights.clone())
            }),
        )?;

        let side = 2;
        let x = rand([1, c_out, side, side]);
        let w = rand([c_out, c_in, geom.kernel, geom.kernel]);
        let b = rand([1, c_in, 1, 1]);
        let o = geom.deconv_out(side)?;
        let weights = rand([1, c_in, o, o]);
        push(
            format!("conv_transpose2d {label}"),
            checker.run(&[("x", x), ("w", w), ("b", b)], |g, v| {
                let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), geom)?;
                g.weighted_sum(y, weights.clone())
            }),
        )?;
    }

    for (label, slopes) in [("shared", 1), ("per-channel", 3)] {
        let x = rand([2, 3, 3, 3]);
        let a = rand([1, slopes, 1, 1]);
        let weights = rand([2, 3, 3, 3]);
        push(
            format!("prelu {label}"),
            checker.run(&[("x", x), ("slope", a)], |g, v| {
                let y = g.prelu(v[0], v[1])?;
                g.weighted_sum(y, weights.clone())
            }),
        )?;
    }

    let shape = [2, 2, 3, 4];
    let (a, b, weights) = (rand(shape), rand(shape), rand(shape));
    push(
        "add".into(),
        checker.run(&[("a", a.clone()), ("b", b.clone())], |g, v| {
            let y = g.add(v[0], v[1])?;
            g.weighted_sum(y, weights.clone())
        }),
    )?;
    push(
        "sub".into(),
        checker.run(&[("a", a.clone()), ("b", b.clone())], |g, v| {
            let y = g.sub(v[0], v[1])?;
            g.weighted_sum(y, weights.clone())
        }),
    )?;
    let c = rand([2, 1, 3, 4]);
    let weights = rand([2, 5, 3, 4]);
    push(
        "concat_channels".into(),
        checker.run(&[("a", a.clone()), ("b", b.clone()), ("c", c)], |g, v| {
            let y = g.concat_channels(v)?;
            g.weighted_sum(y, weights.clone())
        }),
    )?;
    // pred - target = 2 pred, at least twice the margin away from a tie.
    let target = a.map(|v| -v);
    push(
        "l1_loss".into(),
        checker.run(
            &[("pred", a.clone()), ("target", target.clone())],
            |g, v| g.l1_loss(v[0], v[1]),
        ),
    )?;
    push(
        "mse_loss".into(),
        checker.run(&[("pred", a.clone()), ("target", b.clone())], |g, v| {
            g.mse_loss(v[0], v[1])
        }),
    )?;
    push(
        "sum".into(),
        checker.run(&[("x", a)], |g, v| Ok(g.sum(v[0]))),
    )?;
    Ok(out)
}
