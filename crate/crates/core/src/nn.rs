//! A minimal convolutional network with hand-written reverse-mode gradients.
//!
//! A [`Network`] is a fixed [`Topology`] plus one flat parameter vector. The
//! forward pass records a [`Trace`]; [`Network::backward`] walks the trace in
//! reverse and accumulates parameter gradients into a caller-provided buffer.
//! All convolutions are stride 1 with zero "same" padding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Activation {
        function: Activation,
    },
    /// Mean over `factor x factor` windows; edge windows may be partial.
    AvgPool { factor: usize },
    /// Nearest-neighbour upsampling. When it undoes an earlier pool, the
    /// output is cropped back to the pre-pool size.
    Upsample { factor: usize },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn act(function: Activation) -> Self {
        LayerSpec::Activation { function }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => out_channels * in_channels * kernel * kernel + out_channels,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl Topology {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn output_channels(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match *l {
                LayerSpec::Conv { out_channels, .. } => Some(out_channels),
                _ => None,
            })
            .unwrap_or(self.input_channels)
    }

    /// Total downsampling factor between input and output.
    pub fn downsample(&self) -> usize {
        let mut d = 1usize;
        for l in &self.layers {
            match *l {
                LayerSpec::AvgPool { factor } => d *= factor,
                LayerSpec::Upsample { factor } => d /= factor,
                _ => {}
            }
        }
        d
    }

    /// Checks channel flow and pool/upsample pairing.
    pub fn validate(&self) -> Result<(), String> {
        let mut ch = self.input_channels;
        if ch == 0 {
            return Err("input_channels must be >= 1".into());
        }
        for (i, l) in self.layers.iter().enumerate() {
            match *l {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    if in_channels != ch {
                        return Err(format!("layer {i}: expects {in_channels} channels, gets {ch}"));
                    }
                    if kernel % 2 == 0 || out_channels == 0 {
                        return Err(format!("layer {i}: kernel must be odd and width nonzero"));
                    }
                    ch = out_channels;
                }
                LayerSpec::AvgPool { factor } | LayerSpec::Upsample { factor } if factor == 0 => {
                    return Err(format!("layer {i}: zero factor"));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `values[i]` is the input to layer `i`; the last entry is the output.
    values: Vec<ImageGrid>,
}

impl Trace {
    pub fn output(&self) -> &ImageGrid {
        self.values.last().expect("trace has an input")
    }

    pub fn into_output(mut self) -> ImageGrid {
        self.values.pop().expect("trace has an input")
    }

    /// Input to layer `i` (or the network output when `i == layers.len()`).
    pub fn value(&self, i: usize) -> &ImageGrid {
        &self.values[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub topology: Topology,
    pub params: Vec<f64>,
}

impl Network {
    /// Xavier-uniform weights from a seeded stream; biases start at zero.
    pub fn init(topology: Topology, seed: u64) -> Self {
        topology.validate().expect("invalid topology");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(topology.param_count());
        for l in &topology.layers {
            if let LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } = *l
            {
                let k2 = kernel * kernel;
                let bound = (6.0 / ((in_channels + out_channels) * k2) as f64).sqrt();
                for _ in 0..out_channels * in_channels * k2 {
                    params.push(rng.random_range(-bound..bound));
                }
                params.extend(std::iter::repeat_n(0.0, out_channels));
            }
        }
        Self { topology, params }
    }

    pub fn zeros(topology: Topology) -> Self {
        let n = topology.param_count();
        Self {
            topology,
            params: vec![0.0; n],
        }
    }

    /// Parameter offsets of each conv layer's `(weights, biases)` block.
    fn layer_offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.topology
            .layers
            .iter()
            .map(|l| {
                let o = off;
                off += l.param_count();
                o
            })
            .collect()
    }

    /// Mutable view of the bias vector of the last conv layer.
    pub fn last_bias_mut(&mut self) -> Option<&mut [f64]> {
        let offsets = self.layer_offsets();
        let (i, out) = self
            .topology
            .layers
            .iter()
            .enumerate()
            .rev()
            .find_map(|(i, l)| match *l {
                LayerSpec::Conv { out_channels, .. } => Some((i, out_channels)),
                _ => None,
            })?;
        let end = offsets[i] + self.topology.layers[i].param_count();
        Some(&mut self.params[end - out..end])
    }

    pub fn forward(&self, input: &ImageGrid) -> ImageGrid {
        self.forward_trace(input).into_output()
    }

    pub fn forward_trace(&self, input: &ImageGrid) -> Trace {
        assert_eq!(
            input.channels(),
            self.topology.input_channels,
            "network input channel count"
        );
        let offsets = self.layer_offsets();
        let mut values = Vec::with_capacity(self.topology.layers.len() + 1);
        values.push(input.clone());
        let mut pooled_shapes: Vec<(usize, usize)> = Vec::new();
        for (l, &off) in self.topology.layers.iter().zip(&offsets) {
            let x = values.last().unwrap();
            let y = match *l {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let nw = out_channels * in_channels * kernel * kernel;
                    let w = &self.params[off..off + nw];
                    let b = &self.params[off + nw..off + nw + out_channels];
                    conv_forward(x, w, b, out_channels, kernel)
                }
                LayerSpec::Activation { function } => activate(x, function),
                LayerSpec::AvgPool { factor } => {
                    pooled_shapes.push((x.height(), x.width()));
                    avg_pool(x, factor)
                }
                LayerSpec::Upsample { factor } => {
                    let target = pooled_shapes
                        .pop()
                        .unwrap_or((x.height() * factor, x.width() * factor));
                    upsample(x, factor, target)
                }
            };
            values.push(y);
        }
        Trace { values }
    }

    /// Backpropagates `grad_output` through the traced pass, adding parameter
    /// gradients into `grad_params`. Returns the gradient w.r.t. the input
    /// when `want_input_grad` is set.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_output: &ImageGrid,
        grad_params: &mut [f64],
        want_input_grad: bool,
    ) -> Option<ImageGrid> {
        assert_eq!(grad_params.len(), self.params.len());
        let offsets = self.layer_offsets();
        let mut g = grad_output.clone();
        for (i, l) in self.topology.layers.iter().enumerate().rev() {
            let x = &trace.values[i];
            let y = &trace.values[i + 1];
            let need_dx = i > 0 || want_input_grad;
            g = match *l {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let off = offsets[i];
                    let nw = out_channels * in_channels * kernel * kernel;
                    let w = &self.params[off..off + nw];
                    let (gw, gb) = grad_params[off..off + nw + out_channels].split_at_mut(nw);
                    conv_backward(x, w, &g, gw, gb, kernel, need_dx)
                }
                LayerSpec::Activation { function } => activation_backward(x, y, &g, function),
                LayerSpec::AvgPool { factor } => avg_pool_backward(x, &g, factor),
                LayerSpec::Upsample { factor } => upsample_backward(x, &g, factor),
            };
            if !need_dx {
                return None;
            }
        }
        Some(g)
    }
}

#[inline]
fn pad_range(len: usize, offset: isize) -> (usize, usize) {
    // output positions y such that 0 <= y + offset < len
    let start = (-offset).max(0) as usize;
    let end = (len as isize - offset).clamp(0, len as isize) as usize;
    (start, end.max(start))
}

fn conv_forward(x: &ImageGrid, w: &[f64], b: &[f64], out_ch: usize, k: usize) -> ImageGrid {
    let (h, wd, in_ch) = x.shape();
    let half = (k / 2) as isize;
    let mut out = ImageGrid::zeros(h, wd, out_ch);
    let n = h * wd;
    let xv = x.values();
    let ov = out.values_mut();
    for o in 0..out_ch {
        let oplane = &mut ov[o * n..(o + 1) * n];
        oplane.fill(b[o]);
        for i in 0..in_ch {
            let iplane = &xv[i * n..(i + 1) * n];
            for ky in 0..k {
                let dy = ky as isize - half;
                let (y0, y1) = pad_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - half;
                    let wt = w[((o * in_ch + i) * k + ky) * k + kx];
                    if wt == 0.0 {
                        continue;
                    }
                    let (x0, x1) = pad_range(wd, dx);
                    for yy in y0..y1 {
                        let src_row = (yy as isize + dy) as usize * wd;
                        let orow = &mut oplane[yy * wd + x0..yy * wd + x1];
                        let s0 = (src_row as isize + x0 as isize + dx) as usize;
                        let irow = &iplane[s0..s0 + (x1 - x0)];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += wt * iv;
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward(
    x: &ImageGrid,
    w: &[f64],
    g: &ImageGrid,
    gw: &mut [f64],
    gb: &mut [f64],
    k: usize,
    need_dx: bool,
) -> ImageGrid {
    let (h, wd, in_ch) = x.shape();
    let out_ch = g.channels();
    let half = (k / 2) as isize;
    let n = h * wd;
    let xv = x.values();
    let gv = g.values();
    let mut dx_grid = if need_dx {
        ImageGrid::zeros(h, wd, in_ch)
    } else {
        ImageGrid::zeros(0, 0, 1)
    };
    for o in 0..out_ch {
        let gplane = &gv[o * n..(o + 1) * n];
        gb[o] += gplane.iter().sum::<f64>();
        for i in 0..in_ch {
            let iplane = &xv[i * n..(i + 1) * n];
            for ky in 0..k {
                let dy = ky as isize - half;
                let (y0, y1) = pad_range(h, dy);
                for kx in 0..k {
                    let dxo = kx as isize - half;
                    let (x0, x1) = pad_range(wd, dxo);
                    let widx = ((o * in_ch + i) * k + ky) * k + kx;
                    let wt = w[widx];
                    let mut acc = 0.0;
                    for yy in y0..y1 {
                        let s0 = ((yy as isize + dy) as usize * wd) as isize + x0 as isize + dxo;
                        let s0 = s0 as usize;
                        let grow = &gplane[yy * wd + x0..yy * wd + x1];
                        let irow = &iplane[s0..s0 + (x1 - x0)];
                        acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                        if need_dx && wt != 0.0 {
                            let drow = &mut dx_grid.values_mut()[i * n + s0..i * n + s0 + (x1 - x0)];
                            for (d, gvv) in drow.iter_mut().zip(grow) {
                                *d += wt * gvv;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    dx_grid
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn activate(x: &ImageGrid, f: Activation) -> ImageGrid {
    let mut y = x.clone();
    let apply: fn(f64) -> f64 = match f {
        Activation::Identity => return y,
        Activation::Relu => |v| v.max(0.0),
        Activation::Tanh => f64::tanh,
        Activation::Sigmoid => sigmoid,
        Activation::Softplus => softplus,
    };
    y.values_mut().iter_mut().for_each(|v| *v = apply(*v));
    y
}

fn activation_backward(x: &ImageGrid, y: &ImageGrid, g: &ImageGrid, f: Activation) -> ImageGrid {
    let mut d = g.clone();
    let dv = d.values_mut();
    let (xv, yv) = (x.values(), y.values());
    match f {
        Activation::Identity => {}
        Activation::Relu => dv
            .iter_mut()
            .zip(xv)
            .for_each(|(d, &x)| *d = if x > 0.0 { *d } else { 0.0 }),
        Activation::Tanh => dv.iter_mut().zip(yv).for_each(|(d, &y)| *d *= 1.0 - y * y),
        Activation::Sigmoid => dv.iter_mut().zip(yv).for_each(|(d, &y)| *d *= y * (1.0 - y)),
        Activation::Softplus => dv.iter_mut().zip(xv).for_each(|(d, &x)| *d *= sigmoid(x)),
    }
    d
}

fn avg_pool(x: &ImageGrid, d: usize) -> ImageGrid {
    let (h, w, c) = x.shape();
    let (oh, ow) = (h.div_ceil(d), w.div_ceil(d));
    let mut out = ImageGrid::zeros(oh, ow, c);
    for ch in 0..c {
        for r in 0..h {
            for col in 0..w {
                let (or, oc) = (r / d, col / d);
                let v = out.get(or, oc, ch) + x.get(r, col, ch);
                out.set(or, oc, ch, v);
            }
        }
        for or in 0..oh {
            let rows = (h - or * d).min(d);
            for oc in 0..ow {
                let cols = (w - oc * d).min(d);
                let v = out.get(or, oc, ch) / (rows * cols) as f64;
                out.set(or, oc, ch, v);
            }
        }
    }
    out
}

fn avg_pool_backward(x: &ImageGrid, g: &ImageGrid, d: usize) -> ImageGrid {
    let (h, w, c) = x.shape();
    let mut dx = ImageGrid::zeros(h, w, c);
    for ch in 0..c {
        for r in 0..h {
            let rows = (h - (r / d) * d).min(d);
            for col in 0..w {
                let cols = (w - (col / d) * d).min(d);
                dx.set(r, col, ch, g.get(r / d, col / d, ch) / (rows * cols) as f64);
            }
        }
    }
    dx
}

fn upsample(x: &ImageGrid, d: usize, (th, tw): (usize, usize)) -> ImageGrid {
    let c = x.channels();
    let mut out = ImageGrid::zeros(th, tw, c);
    for ch in 0..c {
        for r in 0..th {
            for col in 0..tw {
                out.set(r, col, ch, x.get(r / d, col / d, ch));
            }
        }
    }
    out
}

fn upsample_backward(x: &ImageGrid, g: &ImageGrid, d: usize) -> ImageGrid {
    let mut dx = ImageGrid::zeros(x.height(), x.width(), x.channels());
    for ch in 0..g.channels() {
        for r in 0..g.height() {
            for col in 0..g.width() {
                let v = dx.get(r / d, col / d, ch) + g.get(r, col, ch);
                dx.set(r / d, col / d, ch, v);
            }
        }
    }
    dx
}
