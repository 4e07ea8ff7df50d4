//! Ground-truth driven training-point sampling.
//!
//! Every pixel `(i, j)` owns the unit cell `[i-0.5, i+0.5) x [j-0.5, j+0.5)`
//! clipped to the domain `[0, W-1] x [0, H-1]`; a continuous point belongs to
//! the pixel obtained by rounding each coordinate half-up.

use rand::Rng;

use crate::error::{Result, SmdError};

/// Dense (or optionally sparse) disparity map in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityField {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Option<Vec<bool>>,
}

impl DisparityField {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(SmdError::Shape(format!(
                "{} values for a {width}x{height} field",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            valid: None,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let values = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            values,
            valid: None,
        }
    }

    pub fn with_validity(mut self, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != self.values.len() {
            return Err(SmdError::Shape("validity mask size differs from field".into()));
        }
        self.valid = Some(valid);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn validity(&self) -> Option<&[bool]> {
        self.valid.as_deref()
    }
    pub fn is_dense(&self) -> bool {
        self.valid.as_ref().is_none_or(|v| v.iter().all(|b| *b))
    }
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid.as_ref().is_none_or(|v| v[y * self.width + x])
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|v| f(*v)).collect(),
            ..self.clone()
        }
    }

    pub fn transpose(&self) -> Self {
        let t = Self::from_fn(self.height, self.width, |x, y| self.get(y, x));
        match &self.valid {
            Some(v) => Self {
                valid: Some(
                    (0..self.width)
                        .flat_map(|x| (0..self.height).map(move |y| (x, y)))
                        .map(|(x, y)| v[y * self.width + x])
                        .collect(),
                ),
                ..t
            },
            None => t,
        }
    }

    /// Sub-rectangle starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(SmdError::Config(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let out = Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y));
        match &self.valid {
            Some(v) => out.with_validity(
                (0..h)
                    .flat_map(|y| (0..w).map(move |x| (x, y)))
                    .map(|(x, y)| v[(y0 + y) * self.width + x0 + x])
                    .collect(),
            ),
            None => Ok(out),
        }
    }

    /// Nearest-neighbour downsample by an integer factor, taking the fine
    /// pixel at `(factor * i + factor / 2, factor * j + factor / 2)`.
    pub fn downsample_nearest(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(SmdError::Config(format!(
                "cannot downsample {}x{} by {factor}",
                self.width, self.height
            )));
        }
        // The fine pixel nearest each coarse centre (ties go right/down).
        let off = factor / 2;
        Ok(Self::from_fn(self.width / factor, self.height / factor, |x, y| {
            self.get(x * factor + off, y * factor + off)
        }))
    }
}

/// Boolean per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BoundaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(SmdError::Shape("mask size mismatch".into()));
        }
        Ok(Self { width, height, bits })
    }
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
    pub fn transpose(&self) -> Self {
        let mut t = Self::empty(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                t.set(y, x, self.get(x, y));
            }
        }
        t
    }
}

/// Slack absorbing rounding in normalized disparities, so that raw jumps of
/// exactly the threshold are never counted.
const THRESHOLD_SLACK: f64 = 1e-9;

/// Marks every pixel whose 4-neighbour disparity differs by more than
/// `threshold` (normalized units). Pairs touching an invalid pixel are ignored.
pub fn boundary_mask(gt: &DisparityField, threshold: f64) -> BoundaryMask {
    let (w, h) = (gt.width, gt.height);
    let mut mask = BoundaryMask::empty(w, h);
    let limit = threshold + THRESHOLD_SLACK;
    for y in 0..h {
        for x in 0..w {
            if !gt.is_valid(x, y) {
                continue;
            }
            let v = gt.get(x, y);
            let jump = |nx: usize, ny: usize| gt.is_valid(nx, ny) && (gt.get(nx, ny) - v).abs() > limit;
            let hit = (x > 0 && jump(x - 1, y))
                || (x + 1 < w && jump(x + 1, y))
                || (y > 0 && jump(x, y - 1))
                || (y + 1 < h && jump(x, y + 1));
            if hit {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Morphological dilation with a `rho x rho` square. Even sizes extend one
/// pixel further right/down than left/up. `rho <= 1` is the identity.
pub fn dilate(mask: &BoundaryMask, rho: usize) -> BoundaryMask {
    if rho <= 1 {
        return mask.clone();
    }
    let before = (rho - 1) / 2;
    let after = rho / 2;
    let (w, h) = (mask.width, mask.height);
    // each set pixel q marks [q - before, q + after] along the pass axis
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if !src[y * w + x] {
                    continue;
                }
                let (p, len) = if horizontal { (x, w) } else { (y, h) };
                let lo = p.saturating_sub(before);
                let hi = (p + after).min(len - 1);
                for q in lo..=hi {
                    let idx = if horizontal { y * w + q } else { q * w + x };
                    out[idx] = true;
                }
            }
        }
        out
    };
    let horiz = pass(&mask.bits, true);
    BoundaryMask {
        width: w,
        height: h,
        bits: pass(&horiz, false),
    }
}

/// A continuous training location and its ground-truth disparity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub x: f64,
    pub y: f64,
    pub d: f64,
}

#[inline]
fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

/// Nearest ground-truth value at a continuous location.
pub fn gt_lookup(gt: &DisparityField, x: f64, y: f64) -> Result<f64> {
    let max_x = (gt.width - 1) as f64;
    let max_y = (gt.height - 1) as f64;
    if !(0.0..=max_x).contains(&x) || !(0.0..=max_y).contains(&y) {
        return Err(SmdError::OutOfDomain { x, y, max_x, max_y });
    }
    Ok(gt.get(round_half_up(x), round_half_up(y)))
}

/// Pixel owning the continuous location `(x, y)`.
pub fn owning_pixel(x: f64, y: f64) -> (usize, usize) {
    (round_half_up(x), round_half_up(y))
}

/// Uniform point inside the (clipped) cell of one of `pixels`, chosen so that
/// the result is uniform over the union of clipped cells.
fn sample_cells<R: Rng>(pixels: &[usize], w: usize, h: usize, rng: &mut R) -> (f64, f64) {
    let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);
    loop {
        let p = pixels[rng.gen_range(0..pixels.len())];
        let x = (p % w) as f64 + rng.gen_range(-0.5..0.5);
        let y = (p / w) as f64 + rng.gen_range(-0.5..0.5);
        if (0.0..=max_x).contains(&x) && (0.0..=max_y).contains(&y) {
            return (x, y);
        }
    }
}

fn point_at(gt: &DisparityField, x: f64, y: f64) -> SamplePoint {
    SamplePoint {
        x,
        y,
        d: gt.get(round_half_up(x), round_half_up(y)),
    }
}

/// `n` i.i.d. uniform points over the domain, restricted to cells of valid
/// pixels when the field is sparse.
pub fn uniform_sample<R: Rng>(gt: &DisparityField, n: usize, rng: &mut R) -> Vec<SamplePoint> {
    let (w, h) = (gt.width, gt.height);
    if gt.is_dense() {
        let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);
        return (0..n)
            .map(|_| {
                let x = rng.gen_range(0.0..=max_x);
                let y = rng.gen_range(0.0..=max_y);
                point_at(gt, x, y)
            })
            .collect();
    }
    let valid: Vec<usize> = (0..w * h).filter(|&i| gt.is_valid(i % w, i / w)).collect();
    if valid.is_empty() {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let (x, y) = sample_cells(&valid, w, h, rng);
            point_at(gt, x, y)
        })
        .collect()
}

/// Depth-discontinuity-aware sampling: the first `n/2` points are uniform
/// over the cells of masked pixels, the rest uniform over the cells of the
/// remaining pixels. Falls back to [`uniform_sample`] when the mask is empty
/// or full, or when the ground truth is sparse.
pub fn dda_sample<R: Rng>(
    gt: &DisparityField,
    dilated: &BoundaryMask,
    n: usize,
    rng: &mut R,
) -> Result<Vec<SamplePoint>> {
    if !n.is_multiple_of(2) {
        return Err(SmdError::Config(format!("point count {n} must be even")));
    }
    if dilated.width != gt.width || dilated.height != gt.height {
        return Err(SmdError::Shape("mask and ground truth differ in size".into()));
    }
    let (w, h) = (gt.width, gt.height);
    let masked: Vec<usize> = (0..w * h).filter(|&i| dilated.bits[i]).collect();
    if masked.is_empty() || masked.len() == w * h || !gt.is_dense() {
        return Ok(uniform_sample(gt, n, rng));
    }
    let rest: Vec<usize> = (0..w * h).filter(|&i| !dilated.bits[i]).collect();
    let mut out = Vec::with_capacity(n);
    for half in [&masked, &rest] {
        for _ in 0..n / 2 {
            let (x, y) = sample_cells(half, w, h, rng);
            out.push(point_at(gt, x, y));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mask_row_example() {
        let gt = DisparityField::new(5, 1, vec![2.0, 2.0, 2.0, 5.0, 5.0]).unwrap();
        let m = boundary_mask(&gt, 1.0);
        assert_eq!(m.bits(), &[false, false, true, true, false]);
    }

    #[test]
    fn mask_constant_and_unit_ramp() {
        let gt = DisparityField::from_fn(6, 4, |_, _| 0.3);
        assert_eq!(boundary_mask(&gt, 1.0 / 24.0).count(), 0);
        let ramp = DisparityField::from_fn(8, 3, |x, _| x as f64);
        assert_eq!(boundary_mask(&ramp, 1.0).count(), 0);
        let d_max = 24.0;
        let ramp = DisparityField::from_fn(20, 3, |x, _| x as f64 / d_max);
        assert_eq!(boundary_mask(&ramp, 1.0 / d_max).count(), 0);
    }

    #[test]
    fn sparse_pairs_ignored() {
        let gt = DisparityField::new(3, 1, vec![0.0, 9.0, 0.0])
            .unwrap()
            .with_validity(vec![true, false, true])
            .unwrap();
        assert_eq!(boundary_mask(&gt, 1.0).count(), 0);
    }

    #[test]
    fn dilation_examples() {
        let mut m = BoundaryMask::empty(7, 6);
        m.set(3, 2, true);
        assert_eq!(dilate(&m, 0), m);
        let d = dilate(&m, 3);
        assert_eq!(d.count(), 9);
        for y in 1..=3 {
            for x in 2..=4 {
                assert!(d.get(x, y));
            }
        }
        let mut corner = BoundaryMask::empty(5, 5);
        corner.set(0, 0, true);
        assert_eq!(dilate(&corner, 3).count(), 4);
        let d10 = dilate(&m, 10);
        assert!(m.bits().iter().zip(d10.bits()).all(|(a, b)| !a || *b));
    }

    #[test]
    fn lookup_rounding() {
        let gt = DisparityField::from_fn(6, 7, |x, y| (y * 10 + x) as f64);
        assert_eq!(gt_lookup(&gt, 2.0, 4.0).unwrap(), 42.0);
        assert_eq!(gt_lookup(&gt, 2.3, 4.6).unwrap(), 52.0);
        assert_eq!(gt_lookup(&gt, 2.5, 4.5).unwrap(), 53.0);
        assert!(gt_lookup(&gt, 5.01, 0.0).is_err());
        assert!(gt_lookup(&gt, 0.0, -1e-9).is_err());
    }

    #[test]
    fn dda_counts() {
        let gt = DisparityField::from_fn(4, 4, |x, _| x as f64);
        let mut m = BoundaryMask::empty(4, 4);
        for y in 0..4 {
            m.set(0, y, true);
            m.set(1, y, true);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = dda_sample(&gt, &m, 10, &mut rng).unwrap();
        assert_eq!(pts.len(), 10);
        for (i, p) in pts.iter().enumerate() {
            let (px, py) = owning_pixel(p.x, p.y);
            assert_eq!(m.get(px, py), i < 5);
            assert_eq!(p.d, gt.get(px, py));
        }
        assert!(dda_sample(&gt, &m, 9, &mut rng).is_err());
    }

    #[test]
    fn dda_degenerate_is_uniform() {
        let gt = DisparityField::from_fn(5, 5, |_, _| 0.5);
        let m = BoundaryMask::empty(5, 5);
        let a = dda_sample(&gt, &m, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = uniform_sample(&gt, 8, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
    }

    #[test]
    fn sparse_uniform_stays_on_valid_cells() {
        let valid: Vec<bool> = (0..25).map(|i| i % 3 == 0).collect();
        let gt = DisparityField::from_fn(5, 5, |x, y| (x + y) as f64)
            .with_validity(valid)
            .unwrap();
        let pts = uniform_sample(&gt, 200, &mut ChaCha8Rng::seed_from_u64(2));
        for p in pts {
            let (x, y) = owning_pixel(p.x, p.y);
            assert!(gt.is_valid(x, y));
        }
    }

    #[test]
    fn crop_and_downsample() {
        let f = DisparityField::from_fn(8, 4, |x, y| (y * 8 + x) as f64);
        let c = f.crop(2, 1, 3, 2).unwrap();
        assert_eq!(c.values(), &[10.0, 11.0, 12.0, 18.0, 19.0, 20.0]);
        assert!(f.crop(6, 0, 3, 1).is_err());
        let d = f.downsample_nearest(2).unwrap();
        assert_eq!(d.values(), &[9.0, 11.0, 13.0, 15.0, 25.0, 27.0, 29.0, 31.0]);
    }
}
