//! Procedural stereo scenes: textured fronto-parallel rectangles in front of
//! a background plane, with exact disparity ground truth at a configurable
//! super-resolution factor.
//!
//! Coordinates are in base (input) pixels with pixel centres at integers.
//! Ground-truth pixel `u` of an `s`x grid samples the scene at `u / s`, so
//! every `s`-th ground-truth sample coincides with a base pixel centre.
//! Disparities are always expressed in base pixels.

use ndarray::{concatenate, s, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::StereoInput;
use crate::error::{Result, SmdError};
use crate::parallel::{map_range, ExecMode};
use crate::sampling::DisparityField;

/// Supersampling factor (per axis) used to antialias the rendered images.
pub const IMAGE_SUPERSAMPLING: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureFamily {
    /// Lattice spacing in `[2, 5)` pixels.
    InDomain,
    /// Lattice spacing in `[7, 12)` pixels.
    OutOfDomain,
}

impl TextureFamily {
    pub fn cell_range(self) -> (f64, f64) {
        match self {
            TextureFamily::InDomain => (2.0, 5.0),
            TextureFamily::OutOfDomain => (7.0, 12.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Ground-truth super-resolution factor, one of 1, 2, 4.
    pub sr: usize,
    pub layers: usize,
    pub d_lo: f64,
    pub d_hi: f64,
    pub d_max: f64,
    pub texture: TextureFamily,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            sr: 4,
            layers: 3,
            d_lo: 2.0,
            d_hi: 16.0,
            d_max: 20.0,
            texture: TextureFamily::InDomain,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SmdError::Config(m));
        if ![1, 2, 4].contains(&self.sr) {
            return fail(format!("super-resolution factor {} not in {{1, 2, 4}}", self.sr));
        }
        if self.width < 8 || self.height < 8 {
            return fail(format!("scene {}x{} smaller than 8x8", self.width, self.height));
        }
        if !(self.d_lo >= 0.0 && self.d_lo < self.d_hi) {
            return fail(format!("disparity range [{}, {}] is empty", self.d_lo, self.d_hi));
        }
        if self.d_hi > self.d_max {
            return fail(format!("d_hi {} exceeds d_max {}", self.d_hi, self.d_max));
        }
        if self.d_hi >= self.width as f64 / 4.0 {
            return fail(format!("d_hi {} must stay below width/4", self.d_hi));
        }
        Ok(())
    }
}

/// Smooth value noise with two octaves on a square lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub seed: u64,
    pub cell: f64,
    pub base: [f64; 3],
    pub amplitude: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64, ch: u64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x1000_0000_01B3) ^ splitmix((iy as u64) ^ (ch << 56))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth_noise(seed: u64, x: f64, y: f64, ch: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let (ix, iy) = (fx as i64, fy as i64);
    let v00 = lattice(seed, ix, iy, ch);
    let v10 = lattice(seed, ix + 1, iy, ch);
    let v01 = lattice(seed, ix, iy + 1, ch);
    let v11 = lattice(seed, ix + 1, iy + 1, ch);
    let top = v00 + sx * (v10 - v00);
    let bot = v01 + sx * (v11 - v01);
    top + sy * (bot - top)
}

impl Texture {
    pub fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let c = ch as u64;
            let n = 0.65 * smooth_noise(self.seed, x / self.cell, y / self.cell, c)
                + 0.35 * smooth_noise(self.seed ^ 0xA5A5, x * 2.5 / self.cell, y * 2.5 / self.cell, c);
            *o = (self.base[ch] + self.amplitude * (n - 0.5)).clamp(0.0, 1.0);
        }
        out
    }
}

/// One fronto-parallel layer. `rect` is `[x0, x1) x [y0, y1)` in the left
/// view; `None` marks the unbounded background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rect: Option<[f64; 4]>,
    pub disparity: f64,
    pub texture: Texture,
}

impl Layer {
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self.rect {
            None => true,
            Some([x0, y0, x1, y1]) => x >= x0 && x < x1 && y >= y0 && y < y1,
        }
    }
}

/// Scene geometry, sorted far to near (ascending disparity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub config: SceneConfig,
    pub layers: Vec<Layer>,
}

fn random_texture<R: Rng>(rng: &mut R, family: TextureFamily) -> Texture {
    let (lo, hi) = family.cell_range();
    Texture {
        seed: rng.gen(),
        cell: rng.gen_range(lo..hi),
        base: [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)],
        amplitude: rng.gen_range(0.4..0.8),
    }
}

impl Scene {
    pub fn build(cfg: &SceneConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let span = cfg.d_hi - cfg.d_lo;
        let bg_disp = cfg.d_lo + rng.gen_range(0.0..0.2) * span;
        let mut layers = vec![Layer {
            rect: None,
            disparity: bg_disp,
            texture: random_texture(&mut rng, cfg.texture),
        }];
        // Objects get distinct disparities spread over the remaining range.
        let lo = bg_disp + 0.1 * span;
        let mut disps: Vec<f64> = (0..cfg.layers)
            .map(|k| {
                let slot = (cfg.d_hi - lo) / cfg.layers as f64;
                lo + slot * (k as f64 + rng.gen_range(0.1..0.9))
            })
            .collect();
        disps.sort_by(f64::total_cmp);
        // Edges sit on fine-pixel boundaries, so every ground-truth pixel is
        // wholly inside or outside each object.
        let s = cfg.sr as f64;
        let snap = |v: f64| ((v + 0.5) * s).round() / s - 0.5;
        for d in disps {
            let rw = rng.gen_range(0.15..0.45) * w;
            let rh = rng.gen_range(0.15..0.45) * h;
            let x0 = rng.gen_range(-0.1 * w..w - 0.6 * rw);
            let y0 = rng.gen_range(-0.1 * h..h - 0.6 * rh);
            layers.push(Layer {
                rect: Some([snap(x0), snap(y0), snap(x0 + rw), snap(y0 + rh)]),
                disparity: d,
                texture: random_texture(&mut rng, cfg.texture),
            });
        }
        Ok(Self { config: *cfg, layers })
    }

    /// Index of the visible (nearest) layer at a left-view location.
    pub fn visible_left(&self, x: f64, y: f64) -> usize {
        (0..self.layers.len())
            .rev()
            .find(|&i| self.layers[i].contains(x, y))
            .unwrap_or(0)
    }

    /// Index of the visible layer at a right-view location: each layer
    /// appears shifted left by its disparity.
    pub fn visible_right(&self, x: f64, y: f64) -> usize {
        (0..self.layers.len())
            .rev()
            .find(|&i| self.layers[i].contains(x + self.layers[i].disparity, y))
            .unwrap_or(0)
    }

    fn shade_left(&self, x: f64, y: f64) -> [f64; 3] {
        let l = &self.layers[self.visible_left(x, y)];
        l.texture.color(x, y)
    }

    fn shade_right(&self, x: f64, y: f64) -> [f64; 3] {
        let l = &self.layers[self.visible_right(x, y)];
        l.texture.color(x + l.disparity, y)
    }

    fn render_view(&self, right: bool) -> Array3<f64> {
        let (w, h) = (self.config.width, self.config.height);
        let ss = IMAGE_SUPERSAMPLING;
        let norm = 1.0 / (ss * ss) as f64;
        let mut img = Array3::zeros((3, h, w));
        for py in 0..h {
            for px in 0..w {
                let mut acc = [0.0; 3];
                for ky in 0..ss {
                    let y = py as f64 + (ky as f64 + 0.5) / ss as f64 - 0.5;
                    for kx in 0..ss {
                        let x = px as f64 + (kx as f64 + 0.5) / ss as f64 - 0.5;
                        let c = if right { self.shade_right(x, y) } else { self.shade_left(x, y) };
                        for ch in 0..3 {
                            acc[ch] += c[ch];
                        }
                    }
                }
                for ch in 0..3 {
                    img[[ch, py, px]] = acc[ch] * norm;
                }
            }
        }
        img
    }

    /// Normalized ground truth at `sr`x resolution for one view, sampled at
    /// the centre of each fine pixel (base pixel centres sit at integers).
    pub fn render_gt(&self, sr: usize, right: bool) -> DisparityField {
        let (w, h) = (self.config.width * sr, self.config.height * sr);
        let inv = 1.0 / sr as f64;
        let d_max = self.config.d_max;
        DisparityField::from_fn(w, h, |u, v| {
            let (x, y) = ((u as f64 + 0.5) * inv - 0.5, (v as f64 + 0.5) * inv - 0.5);
            let i = if right { self.visible_right(x, y) } else { self.visible_left(x, y) };
            self.layers[i].disparity / d_max
        })
    }

    pub fn render(&self) -> StereoSample {
        let sr = self.config.sr;
        StereoSample {
            left: self.render_view(false),
            right: self.render_view(true),
            gt: self.render_gt(sr, false),
            gt_right: Some(self.render_gt(sr, true)),
            d_max: self.config.d_max,
            sr,
            seed: self.config.seed,
        }
    }
}

/// A rendered stereo pair with super-resolution ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoSample {
    /// `(3, H, W)` in `[0, 1]`.
    pub left: Array3<f64>,
    pub right: Array3<f64>,
    /// Reference-view ground truth at `sr`x resolution, normalized by `d_max`.
    pub gt: DisparityField,
    /// Right-view ground truth, used when mirroring swaps the views.
    pub gt_right: Option<DisparityField>,
    pub d_max: f64,
    pub sr: usize,
    pub seed: u64,
}

impl StereoSample {
    pub fn width(&self) -> usize {
        self.left.dim().2
    }
    pub fn height(&self) -> usize {
        self.left.dim().1
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width(), self.height());
        if self.right.dim() != self.left.dim() || self.left.dim().0 != 3 {
            return Err(SmdError::Shape("left and right views differ".into()));
        }
        if self.gt.width() != w * self.sr || self.gt.height() != h * self.sr {
            return Err(SmdError::Shape(format!(
                "ground truth {}x{} is not {}x the {w}x{h} views",
                self.gt.width(),
                self.gt.height(),
                self.sr
            )));
        }
        Ok(())
    }

    pub fn input(&self) -> StereoInput {
        let data = concatenate(Axis(0), &[self.left.view(), self.right.view()]).expect("same shape");
        StereoInput::new(data).expect("six channels")
    }

    /// Ground truth resampled to base resolution by nearest neighbour.
    pub fn base_gt(&self) -> DisparityField {
        self.gt.downsample_nearest(self.sr).expect("gt is sr x base")
    }

    /// Crop of `size x size` base pixels at `(x0, y0)`, with the matching
    /// ground-truth region.
    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> Result<(StereoInput, DisparityField)> {
        if x0 + size > self.width() || y0 + size > self.height() {
            return Err(SmdError::Config(format!(
                "crop {size}x{size}+{x0}+{y0} larger than {}x{} image",
                self.width(),
                self.height()
            )));
        }
        let region = s![.., y0..y0 + size, x0..x0 + size];
        let data = concatenate(Axis(0), &[self.left.slice(region), self.right.slice(region)])
            .expect("same shape");
        let sr = self.sr;
        let gt = self.gt.crop(x0 * sr, y0 * sr, size * sr, size * sr)?;
        Ok((StereoInput::new(data)?, gt))
    }
}

pub fn gen_scene(cfg: &SceneConfig) -> Result<StereoSample> {
    Ok(Scene::build(cfg)?.render())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AugmentFlags {
    pub chromatic: bool,
    pub hflip: bool,
    pub vflip: bool,
}

fn flip_rows(img: &Array3<f64>) -> Array3<f64> {
    img.slice(s![.., ..;-1, ..]).to_owned()
}

fn flip_cols(img: &Array3<f64>) -> Array3<f64> {
    img.slice(s![.., .., ..;-1]).to_owned()
}

fn flip_field(f: &DisparityField, horizontal: bool) -> DisparityField {
    let (w, h) = (f.width(), f.height());
    DisparityField::from_fn(w, h, |x, y| {
        if horizontal {
            f.get(w - 1 - x, y)
        } else {
            f.get(x, h - 1 - y)
        }
    })
}

/// Photometric and geometric augmentation. Chromatic changes are shared by
/// both views. A horizontal flip mirrors both views and swaps their roles;
/// the new reference ground truth is the mirrored right-view ground truth
/// when available, otherwise the mirrored left one.
pub fn augment<R: Rng>(sample: &StereoSample, rng: &mut R, flags: AugmentFlags) -> StereoSample {
    let mut out = sample.clone();
    if flags.chromatic {
        let gain = rng.gen_range(0.8..1.2);
        let gamma = rng.gen_range(0.8..1.2);
        let tint = [
            rng.gen_range(0.95..1.05),
            rng.gen_range(0.95..1.05),
            rng.gen_range(0.95..1.05),
        ];
        for img in [&mut out.left, &mut out.right] {
            for (ch, mut plane) in img.axis_iter_mut(Axis(0)).enumerate() {
                plane.mapv_inplace(|v: f64| (v.powf(gamma) * gain * tint[ch]).clamp(0.0, 1.0));
            }
        }
    }
    if flags.vflip {
        out.left = flip_rows(&out.left);
        out.right = flip_rows(&out.right);
        out.gt = flip_field(&out.gt, false);
        out.gt_right = out.gt_right.as_ref().map(|g| flip_field(g, false));
    }
    if flags.hflip {
        let new_left = flip_cols(&out.right);
        let new_right = flip_cols(&out.left);
        let new_gt = flip_field(out.gt_right.as_ref().unwrap_or(&out.gt), true);
        let new_gt_right = out.gt_right.as_ref().map(|_| flip_field(&out.gt, true));
        out.left = new_left;
        out.right = new_right;
        out.gt = new_gt;
        out.gt_right = new_gt_right;
    }
    out
}

/// Split offsets; each split owns a disjoint block of scene seeds.
const SPLIT_STRIDE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    TestOod,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::TestOod];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::TestOod => "test_ood",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| SmdError::Config(format!("unknown split '{s}'")))
    }

    fn index(self) -> u64 {
        self as u64
    }
}

/// Seed of the `i`-th scene of `split`.
pub fn scene_seed(master: u64, split: Split, i: usize) -> u64 {
    splitmix(master).wrapping_add(split.index() * SPLIT_STRIDE + i as u64)
}

/// Scene configurations (not yet rendered) for one split.
pub fn split_configs(template: &SceneConfig, master: u64, split: Split, count: usize) -> Vec<SceneConfig> {
    (0..count)
        .map(|i| SceneConfig {
            seed: scene_seed(master, split, i),
            texture: if split == Split::TestOod {
                TextureFamily::OutOfDomain
            } else {
                TextureFamily::InDomain
            },
            ..*template
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<StereoSample>,
    pub val: Vec<StereoSample>,
    pub test: Vec<StereoSample>,
    /// Same size as `test`, rendered with the out-of-domain texture family.
    pub test_ood: Vec<StereoSample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[StereoSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
            Split::TestOod => &self.test_ood,
        }
    }
}

pub fn render_split(configs: &[SceneConfig], mode: ExecMode) -> Result<Vec<StereoSample>> {
    map_range(mode, configs.len(), |i| gen_scene(&configs[i]))
        .into_iter()
        .collect()
}

pub fn make_dataset(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    template: &SceneConfig,
    master_seed: u64,
    mode: ExecMode,
) -> Result<Dataset> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(SmdError::Config("every split needs at least one scene".into()));
    }
    template.validate()?;
    let build = |split, n| render_split(&split_configs(template, master_seed, split, n), mode);
    Ok(Dataset {
        train: build(Split::Train, n_train)?,
        val: build(Split::Val, n_val)?,
        test: build(Split::Test, n_test)?,
        test_ood: build(Split::TestOod, n_test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SceneConfig {
        SceneConfig {
            width: 48,
            height: 40,
            sr: 2,
            layers: 2,
            d_lo: 1.0,
            d_hi: 8.0,
            d_max: 10.0,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SceneConfig { sr: 3, ..small(0) }.validate().is_err());
        assert!(SceneConfig { d_hi: 12.0, ..small(0) }.validate().is_err());
        assert!(SceneConfig { d_max: 5.0, ..small(0) }.validate().is_err());
        assert!(small(0).validate().is_ok());
    }

    #[test]
    fn background_only_scene() {
        let cfg = SceneConfig { layers: 0, ..small(3) };
        let scene = Scene::build(&cfg).unwrap();
        let d0 = scene.layers[0].disparity;
        let sample = scene.render();
        assert!(sample.gt.values().iter().all(|v| *v == d0 / cfg.d_max));
        // right(x) shows the texture point at x + d0, i.e. left(x + d0)
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                let xr = x as f64;
                let a = scene.shade_right(xr, y as f64);
                let b = scene.shade_left(xr + d0, y as f64);
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn distinct_values_and_determinism() {
        let a = gen_scene(&small(11)).unwrap();
        let b = gen_scene(&small(11)).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.gt.width(), 96);
        let scene = Scene::build(&small(11)).unwrap();
        let allowed: Vec<f64> = scene.layers.iter().map(|l| l.disparity / 10.0).collect();
        assert!(a.gt.values().iter().all(|v| allowed.contains(v)));
    }

    #[test]
    fn augment_identity_and_involutions() {
        let s = gen_scene(&small(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment(&s, &mut rng, AugmentFlags::default()), s);
        let v = AugmentFlags { vflip: true, ..Default::default() };
        let twice = augment(&augment(&s, &mut rng, v), &mut rng, v);
        assert_eq!(twice, s);
        let hf = AugmentFlags { hflip: true, ..Default::default() };
        let twice = augment(&augment(&s, &mut rng, hf), &mut rng, hf);
        assert_eq!(twice, s);
    }

    #[test]
    fn chromatic_stays_in_range() {
        let s = gen_scene(&small(6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = augment(&s, &mut rng, AugmentFlags { chromatic: true, ..Default::default() });
        assert!(a.left.iter().chain(a.right.iter()).all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.gt, s.gt);
        assert_ne!(a.left, s.left);
    }

    #[test]
    fn crop_matches_regions() {
        let s = gen_scene(&small(8)).unwrap();
        let (inp, gt) = s.crop(4, 6, 16).unwrap();
        assert_eq!((inp.width(), inp.height()), (16, 16));
        assert_eq!((gt.width(), gt.height()), (32, 32));
        assert_eq!(gt.get(0, 0), s.gt.get(8, 12));
        assert_eq!(inp.data()[[3, 0, 0]], s.right[[0, 6, 4]]);
        assert!(s.crop(40, 0, 16).is_err());
    }

    #[test]
    fn seeds_are_split_disjoint() {
        let t = split_configs(&small(0), 7, Split::Train, 50);
        let te = split_configs(&small(0), 7, Split::Test, 50);
        assert!(t.iter().all(|a| te.iter().all(|b| a.seed != b.seed)));
        let ood = split_configs(&small(0), 7, Split::TestOod, 2);
        assert!(ood.iter().all(|c| c.texture == TextureFamily::OutOfDomain));
    }
}
