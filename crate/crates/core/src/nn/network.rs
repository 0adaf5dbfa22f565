//! Feed-forward networks of dense, 3x3 convolution and activation layers
//! with an explicit reverse pass.

use serde::{Deserialize, Serialize};

use super::gemm::{gemm, MatRef};
use super::{NnError, ParamSet, Tensor};
use crate::numerics::SeededRng;

const LRELU_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Lrelu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Lrelu => {
                if x > 0.0 {
                    x
                } else {
                    LRELU_SLOPE * x
                }
            }
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Lrelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LRELU_SLOPE
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    /// Flattens its input and applies `W x + b`.
    Dense {
        fan_in: usize,
        fan_out: usize,
    },
    /// 3x3 convolution, zero padding 1.
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Activation {
        activation: Activation,
    },
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn dense(fan_in: usize, fan_out: usize) -> Self {
        LayerSpec::Dense { fan_in, fan_out }
    }

    pub fn conv(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv3x3 {
            in_channels,
            out_channels,
            stride: 1,
        }
    }

    pub fn conv_strided(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        LayerSpec::Conv3x3 {
            in_channels,
            out_channels,
            stride,
        }
    }

    pub fn act(activation: Activation) -> Self {
        LayerSpec::Activation { activation }
    }

    fn weight_shape(&self) -> Option<(Vec<usize>, usize, usize)> {
        match *self {
            LayerSpec::Dense { fan_in, fan_out } => Some((vec![fan_out, fan_in], fan_in, fan_out)),
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
                ..
            } => Some((
                vec![out_channels, in_channels, 3, 3],
                in_channels * 9,
                out_channels,
            )),
            LayerSpec::Activation { .. } => None,
        }
    }
}

/// Layer list plus channel contract. With `skip` the network computes
/// `input + body(input)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub input_channels: usize,
    pub output_channels: usize,
    #[serde(default)]
    pub skip: bool,
}

/// Per-layer values retained by [`NetworkSpec::forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Dense {
        input: Vec<f64>,
        shape: [usize; 3],
    },
    Conv {
        cols: Vec<f64>,
        in_shape: [usize; 3],
        out_hw: (usize, usize),
    },
    Act {
        input: Vec<f64>,
    },
}

pub fn weight_name(layer: usize) -> String {
    format!("l{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("l{layer}.bias")
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, input_channels: usize, output_channels: usize) -> Self {
        Self {
            layers,
            input_channels,
            output_channels,
            skip: false,
        }
    }

    pub fn with_skip(mut self) -> Self {
        self.skip = true;
        self
    }

    /// Plain conv stack: `in -> hidden (act) -> ... -> out`, `depth` conv layers.
    pub fn conv_stack(
        input_channels: usize,
        hidden: usize,
        depth: usize,
        output_channels: usize,
        activation: Activation,
    ) -> Self {
        assert!(depth >= 1);
        let mut layers = Vec::new();
        let mut ch = input_channels;
        for i in 0..depth {
            let out = if i + 1 == depth {
                output_channels
            } else {
                hidden
            };
            layers.push(LayerSpec::conv(ch, out));
            if i + 1 < depth {
                layers.push(LayerSpec::act(activation));
            }
            ch = out;
        }
        Self::new(layers, input_channels, output_channels)
    }

    /// Checks that channel counts compose. Dense fan-in depends on the
    /// spatial input size and is checked at evaluation time.
    pub fn validate(&self) -> Result<(), NnError> {
        let mut ch = Some(self.input_channels);
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                    stride,
                } => {
                    if stride == 0 {
                        return Err(NnError::Spec(format!("layer {i}: stride 0")));
                    }
                    if let Some(c) = ch {
                        if c != in_channels {
                            return Err(NnError::Spec(format!(
                                "layer {i}: expects {in_channels} channels, receives {c}"
                            )));
                        }
                    }
                    ch = Some(out_channels);
                }
                LayerSpec::Dense { fan_out, .. } => ch = Some(fan_out),
                LayerSpec::Activation { .. } => {}
            }
        }
        if let Some(c) = ch {
            if c != self.output_channels {
                return Err(NnError::Spec(format!(
                    "network ends with {c} channels, declared {}",
                    self.output_channels
                )));
            }
        }
        if self.skip && self.input_channels != self.output_channels {
            return Err(NnError::Spec(
                "skip connection needs equal in/out channels".into(),
            ));
        }
        Ok(())
    }

    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init_params(&self, rng: &mut SeededRng) -> ParamSet {
        let mut params = ParamSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((shape, fan_in, fan_out)) = layer.weight_shape() {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n: usize = shape.iter().product();
                let w = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
                let b = (0..fan_out)
                    .map(|_| rng.uniform_range(-bound, bound))
                    .collect();
                params.push(weight_name(i), shape, w);
                params.push(bias_name(i), vec![fan_out], b);
            }
        }
        params
    }

    pub fn zero_params(&self) -> ParamSet {
        let mut params = ParamSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((shape, _, fan_out)) = layer.weight_shape() {
                let n = shape.iter().product();
                params.push(weight_name(i), shape, vec![0.0; n]);
                params.push(bias_name(i), vec![fan_out], vec![0.0; fan_out]);
            }
        }
        params
    }

    /// Names of the weight tensors (not biases), in layer order.
    pub fn weight_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.weight_shape().is_some())
            .map(|(i, _)| weight_name(i))
            .collect()
    }

    pub fn forward(&self, params: &ParamSet, input: &Tensor) -> Result<Tensor, NnError> {
        self.run(params, input, None)
    }

    pub fn forward_trace(
        &self,
        params: &ParamSet,
        input: &Tensor,
    ) -> Result<(Tensor, Trace), NnError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let out = self.run(params, input, Some(&mut caches))?;
        Ok((out, Trace { caches }))
    }

    fn run(
        &self,
        params: &ParamSet,
        input: &Tensor,
        mut caches: Option<&mut Vec<LayerCache>>,
    ) -> Result<Tensor, NnError> {
        if input.channels != self.input_channels {
            return Err(NnError::Shape(format!(
                "network expects {} input channels, got {}",
                self.input_channels, input.channels
            )));
        }
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = match *layer {
                LayerSpec::Dense { fan_in, fan_out } => {
                    if x.len() != fan_in {
                        return Err(NnError::Shape(format!(
                            "layer {i}: dense expects {fan_in} inputs, got {}",
                            x.len()
                        )));
                    }
                    let (w, b) = layer_params(params, i)?;
                    let mut y = b.to_vec();
                    gemm(
                        1.0,
                        MatRef::row_major(w, fan_out, fan_in),
                        MatRef::row_major(&x.data, fan_in, 1),
                        1.0,
                        &mut y,
                    );
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(LayerCache::Dense {
                            shape: x.shape(),
                            input: x.data,
                        });
                    }
                    Tensor::vector(y)
                }
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                    stride,
                } => {
                    if x.channels != in_channels {
                        return Err(NnError::Shape(format!(
                            "layer {i}: conv expects {in_channels} channels, got {}",
                            x.channels
                        )));
                    }
                    let (w, b) = layer_params(params, i)?;
                    let (oh, ow) = conv_out_hw(x.height, x.width, stride);
                    let p = oh * ow;
                    let cols = im2col(&x, stride, oh, ow);
                    let mut y = vec![0.0; out_channels * p];
                    for (oc, chunk) in y.chunks_exact_mut(p).enumerate() {
                        chunk.fill(b[oc]);
                    }
                    gemm(
                        1.0,
                        MatRef::row_major(w, out_channels, in_channels * 9),
                        MatRef::row_major(&cols, in_channels * 9, p),
                        1.0,
                        &mut y,
                    );
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(LayerCache::Conv {
                            cols,
                            in_shape: x.shape(),
                            out_hw: (oh, ow),
                        });
                    }
                    Tensor::from_vec(out_channels, oh, ow, y)
                }
                LayerSpec::Activation { activation } => {
                    let y = Tensor::from_vec(
                        x.channels,
                        x.height,
                        x.width,
                        x.data.iter().map(|&v| activation.apply(v)).collect(),
                    );
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(LayerCache::Act { input: x.data });
                    }
                    y
                }
            };
        }
        if self.skip {
            if x.shape() != input.shape() {
                return Err(NnError::Shape("skip connection shape mismatch".into()));
            }
            x.axpy(1.0, input);
        }
        Ok(x)
    }

    /// Reverse pass. Returns parameter gradients aligned with `params` and
    /// the gradient with respect to the network input.
    pub fn backward(
        &self,
        params: &ParamSet,
        trace: &Trace,
        upstream: &Tensor,
    ) -> Result<(ParamSet, Tensor), NnError> {
        if trace.caches.len() != self.layers.len() {
            return Err(NnError::Shape(
                "trace does not belong to this network".into(),
            ));
        }
        let mut grads = params.zeros_like();
        let mut g = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = match (layer, &trace.caches[i]) {
                (&LayerSpec::Dense { fan_in, fan_out }, LayerCache::Dense { input, shape }) => {
                    if g.len() != fan_out {
                        return Err(NnError::Shape(format!(
                            "layer {i}: upstream gradient has {} entries, expected {fan_out}",
                            g.len()
                        )));
                    }
                    let (w, _) = layer_params(params, i)?;
                    {
                        let gw = &mut grads.get_mut(&weight_name(i)).unwrap().data;
                        gemm(
                            1.0,
                            MatRef::row_major(&g.data, fan_out, 1),
                            MatRef::row_major(input, 1, fan_in),
                            0.0,
                            gw,
                        );
                    }
                    grads
                        .get_mut(&bias_name(i))
                        .unwrap()
                        .data
                        .copy_from_slice(&g.data);
                    let mut dx = vec![0.0; fan_in];
                    gemm(
                        1.0,
                        MatRef::row_major(w, fan_out, fan_in).t(),
                        MatRef::row_major(&g.data, fan_out, 1),
                        0.0,
                        &mut dx,
                    );
                    let [c, h, wd] = *shape;
                    Tensor::from_vec(c, h, wd, dx)
                }
                (
                    &LayerSpec::Conv3x3 {
                        in_channels,
                        out_channels,
                        stride,
                    },
                    LayerCache::Conv {
                        cols,
                        in_shape,
                        out_hw,
                    },
                ) => {
                    let p = out_hw.0 * out_hw.1;
                    if g.len() != out_channels * p {
                        return Err(NnError::Shape(format!(
                            "layer {i}: upstream gradient has {} entries, expected {}",
                            g.len(),
                            out_channels * p
                        )));
                    }
                    let (w, _) = layer_params(params, i)?;
                    let k = in_channels * 9;
                    {
                        let gw = &mut grads.get_mut(&weight_name(i)).unwrap().data;
                        gemm(
                            1.0,
                            MatRef::row_major(&g.data, out_channels, p),
                            MatRef::row_major(cols, k, p).t(),
                            0.0,
                            gw,
                        );
                    }
                    {
                        let gb = &mut grads.get_mut(&bias_name(i)).unwrap().data;
                        for (oc, chunk) in g.data.chunks_exact(p).enumerate() {
                            gb[oc] = chunk.iter().sum();
                        }
                    }
                    let mut dcols = vec![0.0; k * p];
                    gemm(
                        1.0,
                        MatRef::row_major(w, out_channels, k).t(),
                        MatRef::row_major(&g.data, out_channels, p),
                        0.0,
                        &mut dcols,
                    );
                    col2im(&dcols, *in_shape, stride, out_hw.0, out_hw.1)
                }
                (&LayerSpec::Activation { activation }, LayerCache::Act { input }) => {
                    if g.len() != input.len() {
                        return Err(NnError::Shape(format!("layer {i}: upstream size mismatch")));
                    }
                    for (gv, &x) in g.data.iter_mut().zip(input) {
                        *gv *= activation.derivative(x);
                    }
                    g
                }
                _ => {
                    return Err(NnError::Shape(
                        "trace does not belong to this network".into(),
                    ))
                }
            };
        }
        if self.skip {
            g.axpy(1.0, upstream);
        }
        Ok((grads, g))
    }
}

fn layer_params(params: &ParamSet, i: usize) -> Result<(&[f64], &[f64]), NnError> {
    let w = params
        .get(&weight_name(i))
        .ok_or_else(|| NnError::Shape(format!("missing parameter {}", weight_name(i))))?;
    let b = params
        .get(&bias_name(i))
        .ok_or_else(|| NnError::Shape(format!("missing parameter {}", bias_name(i))))?;
    Ok((&w.data, &b.data))
}

pub fn conv_out_hw(h: usize, w: usize, stride: usize) -> (usize, usize) {
    ((h.max(1) - 1) / stride + 1, (w.max(1) - 1) / stride + 1)
}

fn im2col(x: &Tensor, stride: usize, oh: usize, ow: usize) -> Vec<f64> {
    let (c, h, w) = (x.channels, x.height as isize, x.width as isize);
    let p = oh * ow;
    let mut cols = vec![0.0; c * 9 * p];
    for ci in 0..c {
        let plane = x.plane(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let src = &plane[(iy as usize) * (w as usize)..][..w as usize];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        // ix = ox + kx - 1
                        let lo = if kx == 0 { 1 } else { 0 };
                        let hi = if kx == 2 { ow - 1 } else { ow };
                        let off = kx as isize - 1;
                        for ox in lo..hi {
                            dst[ox] = src[(ox as isize + off) as usize];
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < w {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], in_shape: [usize; 3], stride: usize, oh: usize, ow: usize) -> Tensor {
    let [c, h, w] = in_shape;
    let p = oh * ow;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let plane = out.plane_mut(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcols[((ci * 9) + ky * 3 + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[(iy as usize) * w..][..w];
                    let src = &row[oy * ow..(oy + 1) * ow];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_and_grads(
        spec: &NetworkSpec,
        params: &ParamSet,
        input: &Tensor,
        probe: &Tensor,
    ) -> (f64, ParamSet, Tensor) {
        let (out, trace) = spec.forward_trace(params, input).unwrap();
        let loss = out
            .data
            .iter()
            .zip(&probe.data)
            .map(|(a, b)| a * b)
            .sum::<f64>();
        let (g, gx) = spec.backward(params, &trace, probe).unwrap();
        (loss, g, gx)
    }

    fn random_tensor(rng: &mut SeededRng, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(c, h, w, rng.normal_vec(c * h * w))
    }

    /// Central-difference check of every parameter and input entry.
    fn gradient_check(spec: &NetworkSpec, seed: u64, c: usize, h: usize, w: usize) -> f64 {
        let mut rng = SeededRng::new(seed);
        let params = spec.init_params(&mut rng);
        let input = random_tensor(&mut rng, c, h, w);
        let out = spec.forward(&params, &input).unwrap();
        let probe = random_tensor(&mut rng, out.channels, out.height, out.width);
        let (_, grads, gx) = loss_and_grads(spec, &params, &input, &probe);
        let h_step = 1e-5;
        let mut worst: f64 = 0.0;
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + 1e-8);
        for p in params.iter() {
            for k in 0..p.data.len() {
                let mut plus = params.clone();
                plus.get_mut(&p.name).unwrap().data[k] += h_step;
                let mut minus = params.clone();
                minus.get_mut(&p.name).unwrap().data[k] -= h_step;
                let lp = loss_and_grads(spec, &plus, &input, &probe).0;
                let lm = loss_and_grads(spec, &minus, &input, &probe).0;
                let numeric = (lp - lm) / (2.0 * h_step);
                let analytic = grads.get(&p.name).unwrap().data[k];
                if analytic.abs() > 1e-7 || numeric.abs() > 1e-7 {
                    worst = worst.max(rel(analytic, numeric));
                }
            }
        }
        for k in 0..input.len() {
            let mut plus = input.clone();
            plus.data[k] += h_step;
            let mut minus = input.clone();
            minus.data[k] -= h_step;
            let numeric = (loss_and_grads(spec, &params, &plus, &probe).0
                - loss_and_grads(spec, &params, &minus, &probe).0)
                / (2.0 * h_step);
            if gx.data[k].abs() > 1e-7 || numeric.abs() > 1e-7 {
                worst = worst.max(rel(gx.data[k], numeric));
            }
        }
        worst
    }

    #[test]
    fn identity_dense_layer_passes_input_through() {
        let spec = NetworkSpec::new(vec![LayerSpec::dense(3, 3)], 3, 3);
        let mut params = spec.zero_params();
        let w = &mut params.get_mut("l0.weight").unwrap().data;
        w[0] = 1.0;
        w[4] = 1.0;
        w[8] = 1.0;
        let v = Tensor::vector(vec![0.5, -2.0, 7.0]);
        assert_eq!(spec.forward(&params, &v).unwrap(), v);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = NetworkSpec::conv_stack(2, 4, 3, 2, Activation::Elu);
        let x = random_tensor(&mut SeededRng::new(1), 2, 8, 8);
        let y = spec.forward(&spec.zero_params(), &x).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_evaluated_two_layer_net() {
        // W1 = [[1,2],[-1,1]], b1 = [0.5,-1]; lrelu; W2 = [[3,-2]], b2 = [0.25]
        let spec = NetworkSpec::new(
            vec![
                LayerSpec::dense(2, 2),
                LayerSpec::act(Activation::Lrelu),
                LayerSpec::dense(2, 1),
            ],
            2,
            1,
        );
        let mut params = ParamSet::new();
        params.push("l0.weight", vec![2, 2], vec![1.0, 2.0, -1.0, 1.0]);
        params.push("l0.bias", vec![2], vec![0.5, -1.0]);
        params.push("l2.weight", vec![1, 2], vec![3.0, -2.0]);
        params.push("l2.bias", vec![1], vec![0.25]);
        let x = Tensor::vector(vec![1.0, 0.5]);
        // h = [1+1+0.5, -1+0.5-1] = [2.5, -1.5]; lrelu -> [2.5, -0.3]
        // y = 7.5 + 0.6 + 0.25 = 8.35
        let y = spec.forward(&params, &x).unwrap();
        assert!((y.data[0] - 8.35).abs() < 1e-12);
    }

    #[test]
    fn dense_weight_gradient_is_outer_product() {
        let spec = NetworkSpec::new(vec![LayerSpec::dense(3, 2)], 3, 2);
        let params = spec.init_params(&mut SeededRng::new(2));
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let g = Tensor::vector(vec![0.3, -1.1]);
        let (_, trace) = spec.forward_trace(&params, &x).unwrap();
        let (grads, _) = spec.backward(&params, &trace, &g).unwrap();
        let gw = &grads.get("l0.weight").unwrap().data;
        for i in 0..2 {
            for j in 0..3 {
                assert!((gw[i * 3 + j] - g.data[i] * x.data[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = NetworkSpec::conv_stack(1, 3, 2, 1, Activation::Elu);
        let mut rng = SeededRng::new(3);
        let params = spec.init_params(&mut rng);
        let x = random_tensor(&mut rng, 1, 6, 6);
        let (out, trace) = spec.forward_trace(&params, &x).unwrap();
        let zero = Tensor::zeros(out.channels, out.height, out.width);
        let (g, gx) = spec.backward(&params, &trace, &zero).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(gx.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_central_differences_for_every_layer_kind() {
        let convs = NetworkSpec::new(
            vec![
                LayerSpec::conv(2, 3),
                LayerSpec::act(Activation::Elu),
                LayerSpec::conv_strided(3, 3, 2),
                LayerSpec::act(Activation::Lrelu),
                LayerSpec::conv(3, 2),
                LayerSpec::act(Activation::Identity),
            ],
            2,
            2,
        );
        assert!(gradient_check(&convs, 10, 2, 6, 5) < 1e-4);

        let with_dense = NetworkSpec::new(
            vec![
                LayerSpec::conv_strided(1, 2, 2),
                LayerSpec::act(Activation::Lrelu),
                LayerSpec::dense(2 * 3 * 3, 4),
                LayerSpec::act(Activation::Elu),
                LayerSpec::dense(4, 1),
            ],
            1,
            1,
        );
        assert!(gradient_check(&with_dense, 11, 1, 6, 6) < 1e-4);

        let residual = NetworkSpec::conv_stack(1, 3, 2, 1, Activation::Elu).with_skip();
        assert!(gradient_check(&residual, 12, 1, 5, 5) < 1e-4);
    }

    #[test]
    fn strided_conv_output_size() {
        assert_eq!(conv_out_hw(64, 64, 2), (32, 32));
        assert_eq!(conv_out_hw(5, 7, 2), (3, 4));
        assert_eq!(conv_out_hw(8, 8, 1), (8, 8));
    }

    #[test]
    fn shape_errors_are_reported() {
        let spec = NetworkSpec::new(vec![LayerSpec::dense(4, 1)], 1, 1);
        let params = spec.zero_params();
        assert!(matches!(
            spec.forward(&params, &Tensor::zeros(1, 3, 1)),
            Err(NnError::Shape(_))
        ));
        assert!(spec.forward(&params, &Tensor::zeros(2, 2, 1)).is_err());
        let bad = NetworkSpec::new(vec![LayerSpec::conv(1, 4), LayerSpec::conv(3, 1)], 1, 1);
        assert!(bad.validate().is_err());
        let (_, trace) = spec
            .forward_trace(&params, &Tensor::zeros(1, 4, 1))
            .unwrap();
        assert!(spec
            .backward(&params, &trace, &Tensor::vector(vec![1.0, 2.0]))
            .is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = NetworkSpec::conv_stack(2, 8, 3, 2, Activation::Elu);
        let mut rng = SeededRng::new(4);
        let params = spec.init_params(&mut rng);
        let x = random_tensor(&mut rng, 2, 16, 16);
        let a = spec.forward(&params, &x).unwrap();
        let b = spec.forward(&params, &x).unwrap();
        assert!(a
            .data
            .iter()
            .zip(&b.data)
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
