//! A minimal differentiable rotated-object detector with hand-written
//! forward and backward passes: two strided 3x3 tanh convolutions
//! feeding per-cell classification and box-regression heads. The same
//! architecture at different widths serves as teacher and student.
//!
//! Everything is f64 and strictly sequential, so training runs are
//! bitwise reproducible from a seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::Image;
use crate::error::{Error, Result};
use crate::losses::HeadOutputs;

/// Lattice stride of the single feature level (two stride-2 convs).
pub const FEATURE_STRIDE: usize = 4;

/// On-disk checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Dense channel-major activation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub ch: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(ch: usize, h: usize, w: usize) -> Self {
        Self { ch, h, w, data: vec![0.0; ch * h * w] }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }
}

/// 3x3 convolution with same-padding, configurable stride, and optional
/// dilation. Weight layout is `[out_ch][in_ch][ky][kx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    /// Tap spacing; the heads use 2 to widen their receptive field to
    /// object scale without extra weights.
    #[serde(default = "default_dilation")]
    pub dilation: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

fn default_dilation() -> usize {
    1
}

impl ConvLayer {
    fn seeded(
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (in_ch * 9) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let weight = (0..out_ch * in_ch * 9).map(|_| rng.random_range(-bound..bound)).collect();
        Self { in_ch, out_ch, stride, dilation, weight, bias: vec![0.0; out_ch] }
    }

    pub fn out_dim(&self, dim: usize) -> usize {
        (dim - 1) / self.stride + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0
            || self.dilation == 0
            || self.weight.len() != self.out_ch * self.in_ch * 9
            || self.bias.len() != self.out_ch
        {
            return Err(Error::ShapeMismatch(format!(
                "conv {}x{} stride {}: weight {} bias {}",
                self.in_ch,
                self.out_ch,
                self.stride,
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &FeatureMap) -> FeatureMap {
        debug_assert_eq!(x.ch, self.in_ch);
        let (ih, iw) = (x.h as isize, x.w as isize);
        let oh = self.out_dim(x.h);
        let ow = self.out_dim(x.w);
        let mut out = FeatureMap::zeros(self.out_ch, oh, ow);
        let d = self.dilation as isize;
        for oc in 0..self.out_ch {
            for oy in 0..oh {
                let iy0 = (oy * self.stride) as isize - d;
                for ox in 0..ow {
                    let ix0 = (ox * self.stride) as isize - d;
                    let mut acc = self.bias[oc];
                    for ic in 0..self.in_ch {
                        let wbase = (oc * self.in_ch + ic) * 9;
                        for ky in 0..3isize {
                            let iy = iy0 + ky * d;
                            if iy < 0 || iy >= ih {
                                continue;
                            }
                            let row = (ic * x.h + iy as usize) * x.w;
                            let wrow = wbase + (ky as usize) * 3;
                            for kx in 0..3isize {
                                let ix = ix0 + kx * d;
                                if ix < 0 || ix >= iw {
                                    continue;
                                }
                                acc += self.weight[wrow + kx as usize]
                                    * x.data[row + ix as usize];
                            }
                        }
                    }
                    out.data[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients and optionally the input
    /// gradient for the given output gradient.
    pub fn backward(
        &self,
        x: &FeatureMap,
        d_out: &FeatureMap,
        d_weight: &mut [f64],
        d_bias: &mut [f64],
        mut d_in: Option<&mut FeatureMap>,
    ) {
        debug_assert_eq!(d_out.ch, self.out_ch);
        let (ih, iw) = (x.h as isize, x.w as isize);
        let d = self.dilation as isize;
        for oc in 0..self.out_ch {
            for oy in 0..d_out.h {
                let iy0 = (oy * self.stride) as isize - d;
                for ox in 0..d_out.w {
                    let g = d_out.at(oc, oy, ox);
                    if g == 0.0 {
                        continue;
                    }
                    let ix0 = (ox * self.stride) as isize - d;
                    d_bias[oc] += g;
                    for ic in 0..self.in_ch {
                        let wbase = (oc * self.in_ch + ic) * 9;
                        for ky in 0..3isize {
                            let iy = iy0 + ky * d;
                            if iy < 0 || iy >= ih {
                                continue;
                            }
                            let row = (ic * x.h + iy as usize) * x.w;
                            let wrow = wbase + (ky as usize) * 3;
                            for kx in 0..3isize {
                                let ix = ix0 + kx * d;
                                if ix < 0 || ix >= iw {
                                    continue;
                                }
                                let xi = row + ix as usize;
                                d_weight[wrow + kx as usize] += g * x.data[xi];
                                if let Some(di) = d_in.as_deref_mut() {
                                    di.data[xi] += g * self.weight[wrow + kx as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// All parameters of one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub width: usize,
    pub num_classes: usize,
    pub anchors_per_cell: usize,
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub cls_head: ConvLayer,
    pub reg_head: ConvLayer,
}

/// Cached activations from one forward pass, sufficient for backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: FeatureMap,
    a1: FeatureMap,
    a2: FeatureMap,
    pub grid_h: usize,
    pub grid_w: usize,
}

/// Parameter-shaped gradient (or velocity) buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrads {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub cls_w: Vec<f64>,
    pub cls_b: Vec<f64>,
    pub reg_w: Vec<f64>,
    pub reg_b: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(p: &DetectorParams) -> Self {
        Self {
            conv1_w: vec![0.0; p.conv1.weight.len()],
            conv1_b: vec![0.0; p.conv1.bias.len()],
            conv2_w: vec![0.0; p.conv2.weight.len()],
            conv2_b: vec![0.0; p.conv2.bias.len()],
            cls_w: vec![0.0; p.cls_head.weight.len()],
            cls_b: vec![0.0; p.cls_head.bias.len()],
            reg_w: vec![0.0; p.reg_head.weight.len()],
            reg_b: vec![0.0; p.reg_head.bias.len()],
        }
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 8] {
        [
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("cls_w", &self.cls_w),
            ("cls_b", &self.cls_b),
            ("reg_w", &self.reg_w),
            ("reg_b", &self.reg_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.cls_w,
            &mut self.cls_b,
            &mut self.reg_w,
            &mut self.reg_b,
        ]
    }
}

impl DetectorParams {
    /// Deterministic initialization: uniform weights within
    /// `1/sqrt(fan-in)`, zero biases, and the classification bias set to
    /// `-ln((1 - prior)/prior)` so an untrained focal loss is stable.
    pub fn init(
        width: usize,
        num_classes: usize,
        anchors_per_cell: usize,
        seed: u64,
        cls_prior: f64,
    ) -> Self {
        assert!(width > 0 && num_classes > 0 && anchors_per_cell > 0);
        assert!(cls_prior > 0.0 && cls_prior < 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = ConvLayer::seeded(1, width, 2, 1, &mut rng);
        let conv2 = ConvLayer::seeded(width, width, 2, 1, &mut rng);
        let mut cls_head =
            ConvLayer::seeded(width, anchors_per_cell * num_classes, 1, 2, &mut rng);
        let reg_head = ConvLayer::seeded(width, anchors_per_cell * 5, 1, 2, &mut rng);
        let cls_bias = -((1.0 - cls_prior) / cls_prior).ln();
        for b in &mut cls_head.bias {
            *b = cls_bias;
        }
        Self { width, num_classes, anchors_per_cell, conv1, conv2, cls_head, reg_head }
    }

    pub fn param_count(&self) -> usize {
        [&self.conv1, &self.conv2, &self.cls_head, &self.reg_head]
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        for layer in [&self.conv1, &self.conv2, &self.cls_head, &self.reg_head] {
            layer.validate()?;
            if layer.weight.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint("non-finite parameter value".into()));
            }
        }
        let ok = self.conv1.in_ch == 1
            && self.conv1.out_ch == self.width
            && self.conv2.in_ch == self.width
            && self.conv2.out_ch == self.width
            && self.cls_head.in_ch == self.width
            && self.cls_head.out_ch == self.anchors_per_cell * self.num_classes
            && self.reg_head.in_ch == self.width
            && self.reg_head.out_ch == self.anchors_per_cell * 5
            && self.conv1.stride == 2
            && self.conv2.stride == 2
            && self.cls_head.stride == 1
            && self.reg_head.stride == 1;
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "inconsistent detector layout (width {}, classes {}, anchors/cell {})",
                self.width, self.num_classes, self.anchors_per_cell
            )));
        }
        Ok(())
    }

    /// Runs the detector over an image whose sides are multiples of
    /// [`FEATURE_STRIDE`]. Output ordering matches the anchor generator:
    /// row-major cells, anchor-slot minor.
    pub fn forward(&self, image: &Image) -> Result<(HeadOutputs, ForwardCache)> {
        if image.h % FEATURE_STRIDE != 0 || image.w % FEATURE_STRIDE != 0 {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} is not a multiple of the feature stride {FEATURE_STRIDE}",
                image.w, image.h
            )));
        }
        if image.data.len() != image.h * image.w {
            return Err(Error::ShapeMismatch("image buffer does not match its dimensions".into()));
        }
        let input = FeatureMap { ch: 1, h: image.h, w: image.w, data: image.data.clone() };
        let mut a1 = self.conv1.forward(&input);
        for v in &mut a1.data {
            *v = v.tanh();
        }
        let mut a2 = self.conv2.forward(&a1);
        for v in &mut a2.data {
            *v = v.tanh();
        }
        let cls_map = self.cls_head.forward(&a2);
        let reg_map = self.reg_head.forward(&a2);

        let (gh, gw) = (a2.h, a2.w);
        let a = self.anchors_per_cell;
        let c = self.num_classes;
        let mut out = HeadOutputs::zeros(gh * gw * a, c);
        for y in 0..gh {
            for x in 0..gw {
                for slot in 0..a {
                    let anchor = (y * gw + x) * a + slot;
                    for k in 0..c {
                        out.logits[anchor * c + k] = cls_map.at(slot * c + k, y, x);
                    }
                    for i in 0..5 {
                        out.deltas[anchor * 5 + i] = reg_map.at(slot * 5 + i, y, x);
                    }
                }
            }
        }
        Ok((out, ForwardCache { input, a1, a2, grid_h: gh, grid_w: gw }))
    }

    /// Exact gradients of the loss with respect to every parameter,
    /// given the output gradients from the loss layer.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: &[f64],
        d_deltas: &[f64],
    ) -> Result<ParamGrads> {
        let (gh, gw) = (cache.grid_h, cache.grid_w);
        let a = self.anchors_per_cell;
        let c = self.num_classes;
        let n = gh * gw * a;
        if d_logits.len() != n * c || d_deltas.len() != n * 5 {
            return Err(Error::ShapeMismatch(format!(
                "output gradients ({} logits, {} deltas) do not match {n} anchors",
                d_logits.len(),
                d_deltas.len()
            )));
        }
        if cache.a2.ch != self.width || cache.a1.ch != self.width {
            return Err(Error::ShapeMismatch(
                "stale cache: activation channels do not match these parameters".into(),
            ));
        }

        let mut d_cls_map = FeatureMap::zeros(a * c, gh, gw);
        let mut d_reg_map = FeatureMap::zeros(a * 5, gh, gw);
        for y in 0..gh {
            for x in 0..gw {
                for slot in 0..a {
                    let anchor = (y * gw + x) * a + slot;
                    for k in 0..c {
                        let i = d_cls_map.idx(slot * c + k, y, x);
                        d_cls_map.data[i] = d_logits[anchor * c + k];
                    }
                    for i in 0..5 {
                        let j = d_reg_map.idx(slot * 5 + i, y, x);
                        d_reg_map.data[j] = d_deltas[anchor * 5 + i];
                    }
                }
            }
        }

        let mut grads = ParamGrads::zeros_like(self);
        let mut d_a2 = FeatureMap::zeros(self.width, gh, gw);
        self.cls_head.backward(&cache.a2, &d_cls_map, &mut grads.cls_w, &mut grads.cls_b, Some(&mut d_a2));
        self.reg_head.backward(&cache.a2, &d_reg_map, &mut grads.reg_w, &mut grads.reg_b, Some(&mut d_a2));

        // tanh' = 1 - tanh^2, applied in place on the activation grads.
        for (g, &act) in d_a2.data.iter_mut().zip(&cache.a2.data) {
            *g *= 1.0 - act * act;
        }
        let mut d_a1 = FeatureMap::zeros(self.width, cache.a1.h, cache.a1.w);
        self.conv2.backward(&cache.a1, &d_a2, &mut grads.conv2_w, &mut grads.conv2_b, Some(&mut d_a1));
        for (g, &act) in d_a1.data.iter_mut().zip(&cache.a1.data) {
            *g *= 1.0 - act * act;
        }
        self.conv1.backward(&cache.input, &d_a1, &mut grads.conv1_w, &mut grads.conv1_b, None);
        Ok(grads)
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.cls_head.weight,
            &mut self.cls_head.bias,
            &mut self.reg_head.weight,
            &mut self.reg_head.bias,
        ]
    }
}

/// SGD-with-momentum state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimState {
    pub lr: f64,
    pub momentum: f64,
    pub step: usize,
    velocity: ParamGrads,
}

impl OptimState {
    pub fn new(lr: f64, momentum: f64, params: &DetectorParams) -> Self {
        Self { lr, momentum, step: 0, velocity: ParamGrads::zeros_like(params) }
    }
}

/// One optimizer step: `v <- momentum * v + g`, `p <- p - lr * v`.
/// Rejects non-finite gradients with the offending tensor named.
pub fn sgd_step(
    params: &mut DetectorParams,
    grads: &ParamGrads,
    opt: &mut OptimState,
) -> Result<()> {
    for (name, tensor) in grads.tensors() {
        if tensor.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { step: opt.step, tensor: name.into() });
        }
    }
    let lr = opt.lr;
    let m = opt.momentum;
    for ((p, (_, g)), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(opt.velocity.tensors_mut())
    {
        debug_assert_eq!(p.len(), g.len());
        for i in 0..p.len() {
            v[i] = m * v[i] + g[i];
            p[i] -= lr * v[i];
        }
    }
    opt.step += 1;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    params: DetectorParams,
}

/// Writes a versioned JSON checkpoint.
pub fn save_checkpoint(params: &DetectorParams, path: &Path) -> Result<()> {
    let file = CheckpointFile { format_version: CHECKPOINT_VERSION, params: params.clone() };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// Loads a checkpoint, rejecting version or shape mismatches.
pub fn load_checkpoint(path: &Path) -> Result<DetectorParams> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            file.format_version
        )));
    }
    file.params.validate()?;
    Ok(file.params)
}
