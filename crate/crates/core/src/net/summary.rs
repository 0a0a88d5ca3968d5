use std::fmt;

use super::{DbpnNetwork, RecurrentMode};
use crate::imaging::ColorSpace;
use crate::projection::ConvLayer;
use crate::tensor::Real;

/// One weighted layer of a network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSummary {
    pub name: String,
    /// `conv` or `deconv`.
    pub kind: &'static str,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub prelu: bool,
    pub params: usize,
}

/// Layer census of a network; `Display` gives a stable text table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetSummary {
    pub title: String,
    pub layers: Vec<LayerSummary>,
    pub total_params: usize,
}

impl NetSummary {
    pub fn bottlenecks(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.name.ends_with(".bottleneck"))
            .count()
    }
}

fn layer<T: Real>(l: &ConvLayer, net: &DbpnNetwork<T>) -> LayerSummary {
    LayerSummary {
        name: l.name.clone(),
        kind: if l.transposed { "deconv" } else { "conv" },
        kernel: l.geometry.kernel,
        stride: l.geometry.stride,
        padding: l.geometry.padding,
        in_channels: l.in_channels,
        out_channels: l.out_channels,
        prelu: l.slope.is_some(),
        params: l.param_count(net.params()),
    }
}

pub(super) fn describe<T: Real>(net: &DbpnNetwork<T>) -> NetSummary {
    let cfg = net.config();
    let mut layers = vec![layer(&net.feat0, net), layer(&net.feat1, net)];
    for u in net.units() {
        layers.extend(u.all_layers().map(|l| layer(l, net)));
    }
    layers.push(layer(net.reconstruction(), net));
    let yn = |b: bool| if b { "yes" } else { "no" };
    let recurrent = match cfg.recurrent {
        RecurrentMode::None => String::from("none"),
        RecurrentMode::Shared => format!("shared x{}", cfg.iterations),
        RecurrentMode::Transition => format!("transition x{}", cfg.iterations),
    };
    let title = format!(
        "{} x{}: n0={} nR={} T={} io={} dense={} ef={} recurrent={} residual={}",
        cfg.name,
        cfg.scale,
        cfg.n0,
        cfg.n_r,
        cfg.stages,
        match cfg.color {
            ColorSpace::Y => "Y",
            ColorSpace::Rgb => "RGB",
        },
        yn(cfg.dense),
        yn(cfg.error_feedback),
        recurrent,
        yn(cfg.residual),
    );
    NetSummary {
        title,
        layers,
        total_params: net.count_params(),
    }
}

impl fmt::Display for NetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.title)?;
        writeln!(
            f,
            "{:>3}  {:<20} {:<6} {:>10} {:>11} {:>5} {:>10}",
            "#", "layer", "kind", "f/st/pd", "channels", "prelu", "params"
        )?;
        for (i, l) in self.layers.iter().enumerate() {
            writeln!(
                f,
                "{:>3}  {:<20} {:<6} {:>10} {:>11} {:>5} {:>10}",
                i + 1,
                l.name,
                l.kind,
                format!("{}/{}/{}", l.kernel, l.stride, l.padding),
                format!("{}->{}", l.in_channels, l.out_channels),
                if l.prelu { "yes" } else { "no" },
                l.params
            )?;
        }
        writeln!(f, "weighted layers: {}", self.layers.len())?;
        write!(f, "total parameters: {}", self.total_params)
    }
}
