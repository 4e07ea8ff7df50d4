//! Toy stereo backbone: a 2-D convolutional encoder-decoder over the
//! concatenated stereo pair, with an explicit reverse pass.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmdError};
use crate::field::FeatureGrid;

pub const LEAKY_SLOPE: f64 = 0.1;
pub const STEREO_CHANNELS: usize = 6;

/// Left RGB followed by right RGB, shaped `(6, H, W)`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoInput {
    data: Array3<f64>,
}

impl StereoInput {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.dim().0 != STEREO_CHANNELS {
            return Err(SmdError::Shape(format!(
                "stereo input needs {STEREO_CHANNELS} channels, got {}",
                data.dim().0
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SmdError::Shape("stereo input holds non-finite values".into()));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }
    pub fn height(&self) -> usize {
        self.data.dim().1
    }
    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvActivation {
    LeakyRelu,
    Identity,
}

/// 3x3 convolution with padding 1. When `skip` names an earlier layer, the
/// running tensor is nearest-upsampled to that layer's size and concatenated
/// (running channels first) before the convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub skip: Option<usize>,
    pub activation: ConvActivation,
    /// `(out, in * 9)`, column index `c * 9 + ky * 3 + kx`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ConvLayer {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        skip: Option<usize>,
        activation: ConvActivation,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            stride,
            skip,
            activation,
            weight: Array2::zeros((out_channels, in_channels * 9)),
            bias: Array1::zeros(out_channels),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub layers: Vec<ConvLayer>,
}

/// Per-layer tensors kept by [`ConvNet::forward`].
#[derive(Debug, Clone)]
pub struct NetCache {
    /// Assembled input of each layer (after upsample + concat).
    inputs: Vec<Array3<f64>>,
    /// Post-activation output of each layer.
    outputs: Vec<Array3<f64>>,
}

impl NetCache {
    /// Number of f64 values held in backbone activations.
    pub fn activation_floats(&self) -> usize {
        self.inputs.iter().chain(&self.outputs).map(|a| a.len()).sum()
    }
}

/// Channel configuration of the default encoder-decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub base_channels: usize,
    pub feature_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            feature_dim: 32,
        }
    }
}

impl ConvNet {
    /// Four stride-2 encoder stages (the first at stride 1) and four
    /// decoder stages with skip connections, ending in a linear layer with
    /// `feature_dim` channels at input resolution.
    pub fn unet(cfg: BackboneConfig) -> Self {
        use ConvActivation::*;
        let c = cfg.base_channels;
        let layers = vec![
            ConvLayer::new(STEREO_CHANNELS, c, 1, None, LeakyRelu),
            ConvLayer::new(c, 2 * c, 2, None, LeakyRelu),
            ConvLayer::new(2 * c, 4 * c, 2, None, LeakyRelu),
            ConvLayer::new(4 * c, 4 * c, 2, None, LeakyRelu),
            ConvLayer::new(8 * c, 4 * c, 1, Some(2), LeakyRelu),
            ConvLayer::new(6 * c, 2 * c, 1, Some(1), LeakyRelu),
            ConvLayer::new(3 * c, 2 * c, 1, Some(0), LeakyRelu),
            ConvLayer::new(2 * c, cfg.feature_dim, 1, None, Identity),
        ];
        Self { layers }
    }

    pub fn from_layers(layers: Vec<ConvLayer>) -> Result<Self> {
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(SmdError::Shape("backbone has no layers".into()));
        }
        let mut channels = vec![];
        let mut running = STEREO_CHANNELS;
        for (i, l) in self.layers.iter().enumerate() {
            let mut expect = running;
            if let Some(j) = l.skip {
                if j >= i {
                    return Err(SmdError::Shape(format!("layer {i} skips forward to {j}")));
                }
                expect += channels[j];
            }
            if l.in_channels != expect || l.weight.dim() != (l.out_channels, l.in_channels * 9) {
                return Err(SmdError::Shape(format!(
                    "layer {i}: declared {} input channels, receives {expect}",
                    l.in_channels
                )));
            }
            if l.bias.len() != l.out_channels || !(l.stride == 1 || l.stride == 2) {
                return Err(SmdError::Shape(format!("layer {i}: bad bias length or stride")));
            }
            channels.push(l.out_channels);
            running = l.out_channels;
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_channels).unwrap_or(0)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer::new(l.in_channels, l.out_channels, l.stride, l.skip, l.activation))
                .collect(),
        }
    }

    /// Kaiming-uniform weights, zero biases.
    pub fn init(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut self.layers {
            let fan_in = (l.in_channels * 9) as f64;
            let gain = match l.activation {
                ConvActivation::LeakyRelu => 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE),
                ConvActivation::Identity => 1.0,
            };
            let bound = (3.0 * gain / fan_in).sqrt();
            l.weight.mapv_inplace(|_| rng.gen_range(-bound..=bound));
            l.bias.fill(0.0);
        }
        self
    }

    pub fn forward(&self, input: &StereoInput) -> Result<(FeatureGrid, NetCache)> {
        self.validate()?;
        let (_, h, w) = input.data.dim();
        let mut inputs: Vec<Array3<f64>> = Vec::with_capacity(self.layers.len());
        let mut outputs: Vec<Array3<f64>> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let prev = if i == 0 { &input.data } else { &outputs[i - 1] };
            let assembled = match l.skip {
                Some(j) => {
                    let target = &outputs[j];
                    let (_, th, tw) = target.dim();
                    let up = resize_nearest(prev, th, tw);
                    ndarray::concatenate(Axis(0), &[up.view(), target.view()])
                        .map_err(|e| SmdError::Shape(e.to_string()))?
                }
                None => prev.clone(),
            };
            let mut out = conv3x3(&assembled, &l.weight, &l.bias, l.stride);
            if l.activation == ConvActivation::LeakyRelu {
                out.mapv_inplace(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
            }
            inputs.push(assembled);
            outputs.push(out);
        }
        let last = outputs.last().expect("non-empty");
        if last.dim().1 != h || last.dim().2 != w {
            return Err(SmdError::Shape(format!(
                "backbone output {}x{} differs from input {w}x{h}",
                last.dim().2,
                last.dim().1
            )));
        }
        let grid = FeatureGrid::new(last.view().permuted_axes([1, 2, 0]).to_owned())?;
        Ok((grid, NetCache { inputs, outputs }))
    }

    /// Parameter gradients given the gradient of the loss with respect to the
    /// output feature grid.
    pub fn backward(&self, cache: &NetCache, grid_grad: &FeatureGrid) -> Result<ConvNet> {
        let n = self.layers.len();
        let last = &cache.outputs[n - 1];
        let gv = grid_grad.values();
        if (gv.dim().2, gv.dim().0, gv.dim().1) != last.dim() {
            return Err(SmdError::Shape("grid gradient does not match backbone output".into()));
        }
        let mut grads = self.zeros_like();
        let mut out_grads: Vec<Option<Array3<f64>>> = vec![None; n];
        out_grads[n - 1] = Some(gv.view().permuted_axes([2, 0, 1]).as_standard_layout().into_owned());
        for i in (0..n).rev() {
            let l = &self.layers[i];
            let Some(mut dout) = out_grads[i].take() else {
                continue;
            };
            if l.activation == ConvActivation::LeakyRelu {
                ndarray::Zip::from(&mut dout)
                    .and(&cache.outputs[i])
                    .for_each(|d, &o| {
                        if o <= 0.0 {
                            *d *= LEAKY_SLOPE
                        }
                    });
            }
            let input = &cache.inputs[i];
            let (dw, db, dinput) = conv3x3_backward(input, &l.weight, l.stride, &dout);
            grads.layers[i].weight = dw;
            grads.layers[i].bias = db;
            if i == 0 {
                continue;
            }
            let prev_shape = cache.outputs[i - 1].dim();
            let (dprev, dskip) = match l.skip {
                Some(j) => {
                    let pc = prev_shape.0;
                    let dup = dinput.slice(s![..pc, .., ..]).to_owned();
                    let dskip = dinput.slice(s![pc.., .., ..]).to_owned();
                    (resize_nearest_adjoint(&dup, prev_shape.1, prev_shape.2), Some((j, dskip)))
                }
                None => (dinput, None),
            };
            add_into(&mut out_grads[i - 1], dprev);
            if let Some((j, d)) = dskip {
                add_into(&mut out_grads[j], d);
            }
        }
        Ok(grads)
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut v = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            v.push(l.weight.as_slice().expect("standard layout"));
            v.push(l.bias.as_slice().expect("standard layout"));
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            v.push(l.weight.as_slice_mut().expect("standard layout"));
            v.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        v
    }
}

fn add_into(slot: &mut Option<Array3<f64>>, g: Array3<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

#[inline]
fn src_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    (dst * src_len / dst_len).min(src_len - 1)
}

/// Nearest-neighbour resize of a `(C, h, w)` tensor to `(C, th, tw)`.
pub fn resize_nearest(x: &Array3<f64>, th: usize, tw: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    if (h, w) == (th, tw) {
        return x.clone();
    }
    Array3::from_shape_fn((c, th, tw), |(ch, y, xx)| {
        x[[ch, src_index(y, h, th), src_index(xx, w, tw)]]
    })
}

/// Adjoint of [`resize_nearest`]: sums gradients back onto source cells.
pub fn resize_nearest_adjoint(g: &Array3<f64>, h: usize, w: usize) -> Array3<f64> {
    let (c, th, tw) = g.dim();
    if (h, w) == (th, tw) {
        return g.clone();
    }
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..th {
            let sy = src_index(y, h, th);
            for x in 0..tw {
                out[[ch, sy, src_index(x, w, tw)]] += g[[ch, y, x]];
            }
        }
    }
    out
}

#[inline]
fn out_len(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

fn im2col(x: &Array3<f64>, stride: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let (ho, wo) = (out_len(h, stride), out_len(w, stride));
    let mut col = Array2::zeros((c * 9, ho * wo));
    let xs = x.as_slice().expect("standard layout");
    let cs = col.as_slice_mut().expect("standard layout");
    let n = ho * wo;
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cs[(ch * 9 + ky * 3 + kx) * n..(ch * 9 + ky * 3 + kx + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = ch * h * w + iy as usize * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            row[oy * wo + ox] = xs[base + ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &Array2<f64>, c: usize, h: usize, w: usize, stride: usize) -> Array3<f64> {
    let (ho, wo) = (out_len(h, stride), out_len(w, stride));
    let n = ho * wo;
    let mut x = Array3::zeros((c, h, w));
    let xs = x.as_slice_mut().expect("standard layout");
    let cs = col.as_slice().expect("standard layout");
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cs[(ch * 9 + ky * 3 + kx) * n..(ch * 9 + ky * 3 + kx + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = ch * h * w + iy as usize * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            xs[base + ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// 3x3 convolution, zero padding 1.
pub fn conv3x3(x: &Array3<f64>, weight: &Array2<f64>, bias: &Array1<f64>, stride: usize) -> Array3<f64> {
    let (_, h, w) = x.dim();
    let (ho, wo) = (out_len(h, stride), out_len(w, stride));
    let col = im2col(x, stride);
    let mut out = weight.dot(&col);
    for (mut row, b) in out.axis_iter_mut(Axis(0)).zip(bias) {
        row += *b;
    }
    out.into_shape_with_order((weight.nrows(), ho, wo)).expect("sizes agree")
}

/// Returns `(d weight, d bias, d input)` given the gradient at the
/// pre-activation output.
fn conv3x3_backward(
    x: &Array3<f64>,
    weight: &Array2<f64>,
    stride: usize,
    dout: &Array3<f64>,
) -> (Array2<f64>, Array1<f64>, Array3<f64>) {
    let (c, h, w) = x.dim();
    let (co, ho, wo) = dout.dim();
    let dz = dout
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((co, ho * wo))
        .expect("sizes agree");
    let col = im2col(x, stride);
    let dw = dz.dot(&col.t());
    let db = dz.sum_axis(Axis(1));
    let dcol = weight.t().dot(&dz);
    (dw.as_standard_layout().into_owned(), db, col2im(&dcol, c, h, w, stride))
}
