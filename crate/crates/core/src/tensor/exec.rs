use std::rc::Rc;

use super::conv::{self, ConvGeometry};
use super::graph::{concat_forward, elementwise, prelu_forward};
use super::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::error::Result;

/// The operator set networks are written against.
///
/// [`Graph`] records every value for a later backward pass; [`Eager`]
/// evaluates immediately and frees intermediates as soon as they are dropped,
/// which keeps inference on large images within memory.
pub trait Backend<T: Real> {
    type V: Clone;

    fn constant(&mut self, value: Tensor<T>) -> Self::V;
    fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T>;

    fn conv2d(
        &mut self,
        x: &Self::V,
        w: &Self::V,
        b: Option<&Self::V>,
        geom: ConvGeometry,
    ) -> Result<Self::V>;
    fn conv_transpose2d(
        &mut self,
        x: &Self::V,
        w: &Self::V,
        b: Option<&Self::V>,
        geom: ConvGeometry,
    ) -> Result<Self::V>;
    fn prelu(&mut self, x: &Self::V, slope: &Self::V) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn concat_channels(&mut self, inputs: &[Self::V]) -> Result<Self::V>;
}

impl<T: Real> Backend<T> for Graph<T> {
    type V = Var;

    fn constant(&mut self, value: Tensor<T>) -> Var {
        Graph::constant(self, value)
    }

    fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        Graph::param(self, store, id)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        Graph::value(self, *v)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, geom: ConvGeometry) -> Result<Var> {
        Graph::conv2d(self, *x, *w, b.copied(), geom)
    }

    fn conv_transpose2d(
        &mut self,
        x: &Var,
        w: &Var,
        b: Option<&Var>,
        geom: ConvGeometry,
    ) -> Result<Var> {
        Graph::conv_transpose2d(self, *x, *w, b.copied(), geom)
    }

    fn prelu(&mut self, x: &Var, slope: &Var) -> Result<Var> {
        Graph::prelu(self, *x, *slope)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Graph::add(self, *a, *b)
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Graph::sub(self, *a, *b)
    }

    fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        Graph::concat_channels(self, inputs)
    }
}

/// Gradient-free immediate evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<T: Real> Backend<T> for Eager {
    type V = Rc<Tensor<T>>;

    fn constant(&mut self, value: Tensor<T>) -> Self::V {
        Rc::new(value)
    }

    fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Self::V {
        Rc::new(store.value(id).clone())
    }

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T> {
        v
    }

    fn conv2d(
        &mut self,
        x: &Self::V,
        w: &Self::V,
        b: Option<&Self::V>,
        geom: ConvGeometry,
    ) -> Result<Self::V> {
        conv::conv2d(x, w, b.map(|b| &**b), geom).map(Rc::new)
    }

    fn conv_transpose2d(
        &mut self,
        x: &Self::V,
        w: &Self::V,
        b: Option<&Self::V>,
        geom: ConvGeometry,
    ) -> Result<Self::V> {
        conv::conv_transpose2d(x, w, b.map(|b| &**b), geom).map(Rc::new)
    }

    fn prelu(&mut self, x: &Self::V, slope: &Self::V) -> Result<Self::V> {
        prelu_forward(x, slope).map(Rc::new)
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        elementwise(a, b, "add", |p, q| p + q).map(Rc::new)
    }

    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        elementwise(a, b, "sub", |p, q| p - q).map(Rc::new)
    }

    fn concat_channels(&mut self, inputs: &[Self::V]) -> Result<Self::V> {
        let refs: Vec<&Tensor<T>> = inputs.iter().map(|t| &**t).collect();
        concat_forward(&refs).map(Rc::new)
    }
}
