//! Continuous query pipeline: bilinear feature lookup followed by the MLP head.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmdError};
use crate::mixture::{self, MixtureParams, UnimodalParams, B_MAX, B_MIN, PI_EPS};

/// Hidden widths of the full-size head, before the width factor is applied.
pub const FULL_HIDDEN_WIDTHS: [usize; 4] = [1024, 512, 256, 128];
/// Frequency assumed by the sine-network weight initialization.
pub const SINE_OMEGA: f64 = 30.0;
/// Default multiplier inside the hidden activations, `sin(frequency * z)`.
/// Matches the initialization; with a smaller value the head gain collapses
/// and the backbone gradients vanish.
pub const SINE_FREQUENCY: f64 = SINE_OMEGA;

/// `W x H x D` feature map, stored row-major as `(H, W, D)` so that the
/// feature vector of a pixel is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    values: Array3<f64>,
}

impl FeatureGrid {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        let (h, w, d) = values.dim();
        if w < 2 || h < 2 || d < 1 {
            return Err(SmdError::Shape(format!("feature grid {w}x{h}x{d} too small")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SmdError::Shape("feature grid holds non-finite values".into()));
        }
        Ok(Self {
            values: values.as_standard_layout().into_owned(),
        })
    }

    pub fn zeros(width: usize, height: usize, depth: usize) -> Self {
        Self {
            values: Array3::zeros((height, width, depth)),
        }
    }

    pub fn width(&self) -> usize {
        self.values.dim().1
    }
    pub fn height(&self) -> usize {
        self.values.dim().0
    }
    pub fn depth(&self) -> usize {
        self.values.dim().2
    }
    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut Array3<f64> {
        &mut self.values
    }

    pub fn cell(&self, x: usize, y: usize) -> &[f64] {
        let d = self.depth();
        let start = (y * self.width() + x) * d;
        &self.values.as_slice().expect("standard layout")[start..start + d]
    }

    fn cell_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let d = self.depth();
        let start = (y * self.width() + x) * d;
        &mut self.values.as_slice_mut().expect("standard layout")[start..start + d]
    }

    /// Bilinear corner cells and weights for the continuous location `(x, y)`.
    pub fn tap(&self, x: f64, y: f64) -> Result<BilinearTap> {
        let max_x = (self.width() - 1) as f64;
        let max_y = (self.height() - 1) as f64;
        if !(0.0..=max_x).contains(&x) || !(0.0..=max_y).contains(&y) {
            return Err(SmdError::OutOfDomain { x, y, max_x, max_y });
        }
        let x0 = (x.floor() as usize).min(self.width() - 2);
        let y0 = (y.floor() as usize).min(self.height() - 2);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        Ok(BilinearTap {
            cells: [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)],
            weights: [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
        })
    }

    /// Writes the interpolated feature vector into `out`.
    pub fn interp_into(&self, tap: &BilinearTap, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&(cx, cy), &w) in tap.cells.iter().zip(&tap.weights) {
            for (o, f) in out.iter_mut().zip(self.cell(cx, cy)) {
                *o += w * f;
            }
        }
    }

    /// Accumulates `upstream` into the four corner cells of `tap`.
    pub fn scatter(&mut self, tap: &BilinearTap, upstream: &[f64]) {
        for (&(cx, cy), &w) in tap.cells.iter().zip(&tap.weights) {
            for (g, u) in self.cell_mut(cx, cy).iter_mut().zip(upstream) {
                *g += w * u;
            }
        }
    }
}

/// The four grid cells surrounding a query and their bilinear weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTap {
    /// `(x, y)` cell indices: top-left, top-right, bottom-left, bottom-right.
    pub cells: [(usize, usize); 4],
    pub weights: [f64; 4],
}

/// Bilinear feature lookup at a continuous location in `[0, W-1] x [0, H-1]`.
pub fn interp(grid: &FeatureGrid, x: f64, y: f64) -> Result<Vec<f64>> {
    let tap = grid.tap(x, y)?;
    let mut out = vec![0.0; grid.depth()];
    grid.interp_into(&tap, &mut out);
    Ok(out)
}

/// Gradient of [`interp`] with respect to the four corner feature vectors.
pub fn interp_backward(
    grid: &FeatureGrid,
    x: f64,
    y: f64,
    upstream: &[f64],
) -> Result<Vec<((usize, usize), Vec<f64>)>> {
    if upstream.len() != grid.depth() {
        return Err(SmdError::Shape(format!(
            "upstream length {} != depth {}",
            upstream.len(),
            grid.depth()
        )));
    }
    let tap = grid.tap(x, y)?;
    Ok(tap
        .cells
        .iter()
        .zip(tap.weights)
        .map(|(&c, w)| (c, upstream.iter().map(|u| w * u).collect()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    /// `sin(frequency * z)`
    Sine,
    Sigmoid,
    /// Only used to isolate layers in tests.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `(out, in)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
            activation,
        }
    }
    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }
    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// Coordinate MLP mapping a feature vector to sigmoid outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    pub layers: Vec<DenseLayer>,
    pub frequency: f64,
}

/// Activations kept from [`MlpHead::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl HeadCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
    /// Post-activation values of every hidden layer.
    pub fn hidden_activations(&self) -> &[Array2<f64>] {
        &self.inputs[1..]
    }
}

/// Hidden widths `(1024, 512, 256, 128)` scaled by `factor`, at least 1 each.
pub fn scaled_widths(factor: f64) -> Vec<usize> {
    FULL_HIDDEN_WIDTHS
        .iter()
        .map(|w| ((*w as f64 * factor).round() as usize).max(1))
        .collect()
}

impl MlpHead {
    /// Zero-initialized head with sine hidden layers and a sigmoid output.
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n { Activation::Sigmoid } else { Activation::Sine };
                DenseLayer::zeros(w[0], w[1], act)
            })
            .collect();
        Self {
            layers,
            frequency: SINE_FREQUENCY,
        }
    }

    /// Head from explicit layers; consecutive dimensions must agree.
    pub fn from_layers(layers: Vec<DenseLayer>, frequency: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(SmdError::Shape("head needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].fan_out() != w[1].fan_in() {
                return Err(SmdError::Shape(format!(
                    "layer widths {} -> {} do not chain",
                    w[0].fan_out(),
                    w[1].fan_in()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(SmdError::Shape("bias length differs from layer width".into()));
            }
        }
        Ok(Self { layers, frequency })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }
    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.fan_out()).unwrap_or(0)
    }

    /// Layer widths including input and output, e.g. `(D, 128, 64, 32, 16, 5)`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.fan_out()));
        w
    }

    /// A head of the same shape with every parameter zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.fan_in(), l.fan_out(), l.activation))
                .collect(),
            frequency: self.frequency,
        }
    }

    /// Sine-network initialization: the first layer is uniform in
    /// `[-1/D, 1/D]`, deeper layers in `[-sqrt(6/n)/w, sqrt(6/n)/w]` with
    /// `w = SINE_OMEGA` and `n` the fan-in. Biases are uniform in `[-1/sqrt(n), 1/sqrt(n)]`.
    pub fn sine_init(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = SINE_OMEGA;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let n = layer.fan_in() as f64;
            let bound = if i == 0 { 1.0 / n } else { (6.0 / n).sqrt() / omega };
            layer.weight.mapv_inplace(|_| rng.gen_range(-bound..=bound));
            let bb = 1.0 / n.sqrt();
            layer.bias.mapv_inplace(|_| rng.gen_range(-bb..=bb));
        }
        self
    }

    fn activate(&self, act: Activation, z: f64) -> f64 {
        match act {
            Activation::Sine => (self.frequency * z).sin(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    fn activate_grad(&self, act: Activation, z: f64, a: f64) -> f64 {
        match act {
            Activation::Sine => self.frequency * (self.frequency * z).cos(),
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    /// Forward pass over a batch of feature rows `(n, D)`.
    pub fn forward_batch(&self, feats: &Array2<f64>) -> Result<HeadCache> {
        if feats.ncols() != self.input_dim() {
            return Err(SmdError::Shape(format!(
                "feature width {} != head input {}",
                feats.ncols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = feats.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            let next = z.mapv(|v| self.activate(layer.activation, v));
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Ok(HeadCache {
            inputs,
            pre,
            output: a,
        })
    }

    /// Forward pass for a single feature vector.
    pub fn forward(&self, feat: &[f64]) -> Result<(Vec<f64>, HeadCache)> {
        let x = Array2::from_shape_vec((1, feat.len()), feat.to_vec())
            .map_err(|e| SmdError::Shape(e.to_string()))?;
        let cache = self.forward_batch(&x)?;
        Ok((cache.output.row(0).to_vec(), cache))
    }

    /// Reverse pass. `upstream` is the loss gradient with respect to the
    /// post-sigmoid outputs, shaped `(n, out)`. Returns parameter gradients
    /// (summed over the batch) and the gradient with respect to the input rows.
    pub fn backward_batch(
        &self,
        cache: &HeadCache,
        upstream: &Array2<f64>,
    ) -> Result<(MlpHead, Array2<f64>)> {
        if upstream.dim() != cache.output.dim() {
            return Err(SmdError::Shape(format!(
                "upstream {:?} != output {:?}",
                upstream.dim(),
                cache.output.dim()
            )));
        }
        let mut grads = self.zeros_like();
        let mut delta_out = upstream.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = if l + 1 == self.layers.len() {
                &cache.output
            } else {
                &cache.inputs[l + 1]
            };
            let mut dz = delta_out;
            ndarray::Zip::from(&mut dz)
                .and(&cache.pre[l])
                .and(out)
                .for_each(|d, &z, &a| *d *= self.activate_grad(layer.activation, z, a));
            grads.layers[l].weight = dz.t().dot(&cache.inputs[l]).as_standard_layout().into_owned();
            grads.layers[l].bias = dz.sum_axis(Axis(0));
            delta_out = dz.dot(&layer.weight);
        }
        Ok((grads, delta_out))
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

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &MlpHead) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight *= s;
            l.bias *= s;
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Five sigmoid outputs of a bimodal head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawOutput5(pub [f64; 5]);

impl RawOutput5 {
    pub fn new(raw: [f64; 5]) -> Result<Self> {
        if raw.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(SmdError::Config(format!("raw outputs {raw:?} outside [0, 1]")));
        }
        Ok(Self(raw))
    }
}

#[inline]
fn decode_scale(raw: f64) -> f64 {
    B_MIN + raw * (B_MAX - B_MIN)
}

#[inline]
fn clamp_pi(raw: f64) -> f64 {
    raw.clamp(PI_EPS, 1.0 - PI_EPS)
}

/// Affine decode of sigmoid outputs into mixture parameters. Means are used
/// as-is (sigmoid range equals the normalized disparity range), scales are
/// mapped onto `[B_MIN, B_MAX]` and the weight is clamped away from 0 and 1.
pub fn decode_params(raw: &RawOutput5) -> MixtureParams {
    let r = raw.0;
    MixtureParams::new(clamp_pi(r[0]), r[1], decode_scale(r[2]), r[3], decode_scale(r[4]))
        .expect("decode keeps parameters valid")
}

/// Which output representation the head regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// `(pi, mu1, b1, mu2, b2)`
    Bimodal,
    /// `(mu, b)`
    Unimodal,
    /// Point estimate trained with L1.
    L1,
}

impl HeadKind {
    pub fn output_dim(self) -> usize {
        match self {
            HeadKind::Bimodal => 5,
            HeadKind::Unimodal => 2,
            HeadKind::L1 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Bimodal => "bimodal",
            HeadKind::Unimodal => "unimodal",
            HeadKind::L1 => "l1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bimodal" => Ok(HeadKind::Bimodal),
            "unimodal" => Ok(HeadKind::Unimodal),
            "l1" => Ok(HeadKind::L1),
            other => Err(SmdError::Config(format!("unknown head kind '{other}'"))),
        }
    }

    /// Decodes raw head outputs.
    pub fn decode(self, raw: &[f64]) -> Decoded {
        match self {
            HeadKind::Bimodal => Decoded::Bimodal(decode_params(&RawOutput5([
                raw[0], raw[1], raw[2], raw[3], raw[4],
            ]))),
            HeadKind::Unimodal => Decoded::Unimodal(
                UnimodalParams::new(raw[0], decode_scale(raw[1])).expect("decode keeps parameters valid"),
            ),
            HeadKind::L1 => Decoded::Point(raw[0]),
        }
    }

    /// Loss at ground truth `d` and its gradient with respect to the raw
    /// (post-sigmoid) outputs. Only the first `output_dim` entries of the
    /// gradient are meaningful.
    pub fn loss_and_grad(self, raw: &[f64], d: f64) -> (f64, [f64; 5]) {
        let mut g = [0.0; 5];
        let scale = B_MAX - B_MIN;
        let loss = match self.decode(raw) {
            Decoded::Bimodal(p) => {
                let gp = mixture::nll_grad(&p, d);
                let pi_pass = if raw[0] > PI_EPS && raw[0] < 1.0 - PI_EPS { 1.0 } else { 0.0 };
                g = [gp.d_pi * pi_pass, gp.d_mu1, gp.d_b1 * scale, gp.d_mu2, gp.d_b2 * scale];
                mixture::nll(&p, d)
            }
            Decoded::Unimodal(u) => {
                let gu = mixture::unimodal_grad(&u, d);
                g[0] = gu[0];
                g[1] = gu[1] * scale;
                mixture::unimodal_nll(&u, d)
            }
            Decoded::Point(v) => {
                g[0] = mixture::l1_grad(v, d);
                mixture::l1_loss(v, d)
            }
        };
        (loss, g)
    }
}

/// Decoded head output at one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoded {
    Bimodal(MixtureParams),
    Unimodal(UnimodalParams),
    Point(f64),
}

impl Decoded {
    /// Point estimate in normalized disparity.
    pub fn disparity(&self) -> f64 {
        match self {
            Decoded::Bimodal(p) => mixture::select_mode(p),
            Decoded::Unimodal(u) => u.mu(),
            Decoded::Point(v) => *v,
        }
    }

    /// Differential entropy in nats of the normalized-disparity distribution,
    /// `None` for point estimates.
    pub fn entropy(&self) -> Option<f64> {
        match self {
            Decoded::Bimodal(p) => Some(mixture::entropy(p)),
            Decoded::Unimodal(u) => Some(mixture::unimodal_entropy(u)),
            Decoded::Point(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn linear_grid() -> FeatureGrid {
        let mut g = Array3::zeros((4, 5, 1));
        for y in 0..4 {
            for x in 0..5 {
                g[[y, x, 0]] = 2.0 * x as f64 + 3.0 * y as f64;
            }
        }
        FeatureGrid::new(g).unwrap()
    }

    #[test]
    fn interp_reproduces_knots_and_linear_fields() {
        let g = linear_grid();
        assert_eq!(interp(&g, 3.0, 2.0).unwrap(), vec![12.0]);
        assert_eq!(interp(&g, 4.0, 3.0).unwrap(), vec![17.0]);
        for &(x, y) in &[(0.3, 1.7), (3.99, 0.01), (2.5, 2.5), (4.0, 0.5)] {
            let v = interp(&g, x, y).unwrap()[0];
            assert!((v - (2.0 * x + 3.0 * y)).abs() < 1e-12);
        }
    }

    #[test]
    fn interp_symmetry_case() {
        let g = FeatureGrid::new(array![[[0.0], [1.0]], [[0.0], [1.0]]]).unwrap();
        assert_eq!(interp(&g, 0.5, 0.5).unwrap(), vec![0.5]);
    }

    #[test]
    fn interp_out_of_domain() {
        let g = linear_grid();
        assert!(matches!(interp(&g, -0.01, 0.0), Err(SmdError::OutOfDomain { .. })));
        assert!(interp(&g, 0.0, 3.0001).is_err());
        assert!(interp(&g, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn interp_backward_weights() {
        let g = linear_grid();
        let b = interp_backward(&g, 2.0, 1.0, &[1.0]).unwrap();
        let on_cell: Vec<_> = b.iter().filter(|(_, v)| v[0] != 0.0).collect();
        assert_eq!(on_cell.len(), 1);
        assert_eq!(on_cell[0].0, (2, 1));
        assert_eq!(on_cell[0].1, vec![1.0]);
        let b = interp_backward(&g, 0.5, 0.5, &[1.0]).unwrap();
        assert!(b.iter().all(|(_, v)| v[0] == 0.25));
        assert!(interp_backward(&g, 0.5, 0.5, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_head_outputs_half() {
        let head = MlpHead::new(3, &[4, 4], 5);
        let (out, _) = head.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.5; 5]);
        let mut head = head;
        let beta = [-2.0, -1.0, 0.0, 1.0, 2.0];
        head.layers.last_mut().unwrap().bias = Array1::from(beta.to_vec());
        let (out, _) = head.forward(&[0.3, -1.0, 2.0]).unwrap();
        for (o, b) in out.iter().zip(beta) {
            assert_eq!(*o, sigmoid(b));
        }
        assert!(head.forward(&[1.0]).is_err());
    }

    #[test]
    fn backward_zero_upstream_and_linear_layer() {
        let head = MlpHead::new(4, &[8], 5).sine_init(3);
        let (_, cache) = head.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let (g, dx) = head.backward_batch(&cache, &Array2::zeros((1, 5))).unwrap();
        assert!(g.params().iter().all(|p| p.iter().all(|v| *v == 0.0)));
        assert!(dx.iter().all(|v| *v == 0.0));

        let mut lin = DenseLayer::zeros(3, 2, Activation::Identity);
        lin.weight = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]];
        let head = MlpHead::from_layers(vec![lin], 1.0).unwrap();
        let x = [0.5, -2.0, 4.0];
        let (_, cache) = head.forward(&x).unwrap();
        let up = array![[3.0, -1.0]];
        let (g, dx) = head.backward_batch(&cache, &up).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g.layers[0].weight[[o, i]], up[[0, o]] * x[i]);
            }
        }
        assert_eq!(g.layers[0].bias.to_vec(), vec![3.0, -1.0]);
        assert_eq!(dx.row(0).to_vec(), vec![4.0, 5.5, 9.0]);
    }

    #[test]
    fn sine_init_bounds_and_determinism() {
        let a = MlpHead::new(16, &scaled_widths(0.125), 5).sine_init(42);
        let b = MlpHead::new(16, &scaled_widths(0.125), 5).sine_init(42);
        assert_eq!(a, b);
        assert_eq!(a.widths(), vec![16, 128, 64, 32, 16, 5]);
        for (i, l) in a.layers.iter().enumerate() {
            let n = l.fan_in() as f64;
            let bound = if i == 0 { 1.0 / n } else { (6.0 / n).sqrt() / SINE_OMEGA };
            assert!(l.weight.iter().all(|w| w.abs() <= bound));
        }
        let feat: Vec<f64> = (0..16).map(|i| (i as f64 * 1.3).sin() * 3.0).collect();
        let (_, cache) = a.forward(&feat).unwrap();
        for h in cache.hidden_activations() {
            assert!(h.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let c = MlpHead::new(16, &scaled_widths(0.125), 5).sine_init(43);
        assert_ne!(a, c);
    }

    #[test]
    fn decode_examples() {
        let p = decode_params(&RawOutput5([0.5; 5]));
        let b = B_MIN + 0.5 * (B_MAX - B_MIN);
        assert_eq!(p.to_array(), [0.5, 0.5, b, 0.5, b]);
        let p = decode_params(&RawOutput5([0.0, 0.2, 0.0, 1.0, 1.0]));
        assert_eq!(p.b1(), B_MIN);
        assert_eq!(p.pi(), PI_EPS);
        assert!(mixture::pdf(&p, 0.3).is_finite());
        assert!(RawOutput5::new([0.5, 0.5, 1.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn head_kinds() {
        assert_eq!(HeadKind::L1.output_dim(), 1);
        assert_eq!(HeadKind::parse("unimodal").unwrap(), HeadKind::Unimodal);
        assert!(HeadKind::parse("gauss").is_err());
        let d = HeadKind::Unimodal.decode(&[0.25, 0.0]);
        assert_eq!(d.disparity(), 0.25);
        assert!(HeadKind::L1.decode(&[0.7]).entropy().is_none());
    }
}
