//! Training loop: crop, forward, sample, loss, backward, Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentFlags, StereoSample};
use crate::error::{Result, SmdError};
use crate::infer::to_grid;
use crate::model::{point_loss, FeatureQuery, ModelConfig, SmdModel};
use crate::optim::AdamState;
use crate::parallel::ExecMode;
use crate::sampling::{boundary_mask, dda_sample, dilate, uniform_sample, DisparityField, SamplePoint};

/// How training points are drawn from a ground-truth crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SamplingKind {
    Random,
    /// Half the points from the boundary mask dilated by a `rho x rho` kernel.
    Dda { rho: usize },
}

impl SamplingKind {
    pub fn parse(name: &str, rho: usize) -> Result<Self> {
        match name {
            "random" => Ok(SamplingKind::Random),
            "dda" => Ok(SamplingKind::Dda { rho }),
            other => Err(SmdError::Config(format!("unknown sampling '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplingKind::Random => "random",
            SamplingKind::Dda { .. } => "dda",
        }
    }
}

/// Resolution of the ground truth that training points are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GtRes {
    /// Nearest-downsampled to the image grid.
    Base,
    /// The dataset's super-resolution ground truth as stored.
    Super,
}

impl GtRes {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "base" => Ok(GtRes::Base),
            "super" => Ok(GtRes::Super),
            other => Err(SmdError::Config(format!("unknown gt resolution '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GtRes::Base => "base",
            GtRes::Super => "super",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Points per crop.
    pub points: usize,
    pub crop: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub sampling: SamplingKind,
    pub gt_res: GtRes,
    pub augment: AugmentFlags,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            points: 2048,
            crop: 64,
            epochs: 10,
            steps_per_epoch: 64,
            lr: 1e-4,
            sampling: SamplingKind::Dda { rho: 10 },
            gt_res: GtRes::Super,
            augment: AugmentFlags {
                chromatic: true,
                hflip: true,
                vflip: true,
            },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points < 2 || !self.points.is_multiple_of(2) {
            return Err(SmdError::Config(format!("points must be even and >= 2, got {}", self.points)));
        }
        if self.crop < 8 {
            return Err(SmdError::Config(format!("crop {} below 8 pixels", self.crop)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(SmdError::Config(format!("learning rate {} invalid", self.lr)));
        }
        if !(self.model.width_factor > 0.0) || self.model.backbone.base_channels == 0 {
            return Err(SmdError::Config("model widths must be positive".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }
}

/// Draws the training points for one crop.
pub fn draw_points<R: Rng>(
    gt: &DisparityField,
    sampling: SamplingKind,
    n: usize,
    d_max: f64,
    rng: &mut R,
) -> Result<Vec<SamplePoint>> {
    let pts = match sampling {
        SamplingKind::Random => uniform_sample(gt, n, rng),
        SamplingKind::Dda { rho } => {
            let mask = dilate(&boundary_mask(gt, 1.0 / d_max), rho);
            dda_sample(gt, &mask, n, rng)?
        }
    };
    if pts.is_empty() {
        return Err(SmdError::Empty("crop has no valid ground truth".into()));
    }
    Ok(pts)
}

/// Model, optimizer state and loss history of a run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: SmdModel,
    pub adam: AdamState,
    /// Mean loss of every completed step.
    pub losses: Vec<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = SmdModel::new(&config.model, config.seed);
        let adam = AdamState::new(&model.params(), config.lr);
        Ok(Self {
            config,
            model,
            adam,
            losses: Vec::new(),
        })
    }

    /// Continues a run from saved state.
    pub fn resume(config: TrainConfig, model: SmdModel, adam: AdamState, losses: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        if adam.shapes() != sizes || model.kind != config.model.kind {
            return Err(SmdError::Checkpoint("optimizer state does not match model".into()));
        }
        if losses.len() as u64 != adam.step {
            return Err(SmdError::Checkpoint(format!(
                "{} losses recorded for {} steps",
                losses.len(),
                adam.step
            )));
        }
        Ok(Self {
            config,
            model,
            adam,
            losses,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    pub fn is_done(&self) -> bool {
        self.step_count() >= self.config.total_steps()
    }

    /// One optimization step. Randomness is derived from the seed and the
    /// step index alone, so a resumed run replays the same draws.
    pub fn step(&mut self, data: &[StereoSample], mode: ExecMode) -> Result<f64> {
        if data.is_empty() {
            return Err(SmdError::Empty("training set is empty".into()));
        }
        let cfg = self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(self.adam.step + 1);

        let picked = &data[rng.gen_range(0..data.len())];
        let (w, h) = (picked.width(), picked.height());
        if cfg.crop > w || cfg.crop > h {
            return Err(SmdError::Config(format!("crop {} larger than {w}x{h} image", cfg.crop)));
        }
        let flags = AugmentFlags {
            chromatic: cfg.augment.chromatic && rng.gen_bool(0.5),
            hflip: cfg.augment.hflip && rng.gen_bool(0.5),
            vflip: cfg.augment.vflip && rng.gen_bool(0.5),
        };
        let sample = augment(picked, &mut rng, flags);
        let x0 = rng.gen_range(0..=w - cfg.crop);
        let y0 = rng.gen_range(0..=h - cfg.crop);
        let (input, gt) = sample.crop(x0, y0, cfg.crop)?;
        let gt = match cfg.gt_res {
            GtRes::Super => gt,
            GtRes::Base => gt.downsample_nearest(sample.sr)?,
        };

        let (grid, cache) = self.model.net.forward(&input)?;
        let pts = draw_points(&gt, cfg.sampling, cfg.points, sample.d_max, &mut rng)?;
        // Same pixel-centre mapping as inference.
        let side = gt.width();
        let queries: Vec<FeatureQuery> = pts
            .iter()
            .map(|p| FeatureQuery {
                x: to_grid(p.x, side, cfg.crop),
                y: to_grid(p.y, side, cfg.crop),
                d: p.d,
            })
            .collect();
        let pl = point_loss(&self.model.head, self.model.kind, &grid, &queries, mode)?;
        let net_grad = self.model.net.backward(&cache, &pl.grid_grad)?;

        let mut grads = net_grad.params();
        grads.extend(pl.head_grad.params());
        self.adam.step(&mut self.model.params_mut(), &grads)?;
        self.losses.push(pl.loss);
        Ok(pl.loss)
    }

    /// Runs until `total_steps` or `stop_at`, whichever comes first, calling
    /// `on_epoch(epoch, mean_loss)` at every completed epoch boundary.
    pub fn run(
        &mut self,
        data: &[StereoSample],
        mode: ExecMode,
        stop_at: Option<u64>,
        mut on_epoch: impl FnMut(usize, f64),
    ) -> Result<()> {
        let end = stop_at.map_or(self.config.total_steps(), |s| s.min(self.config.total_steps()));
        while self.step_count() < end {
            self.step(data, mode)?;
            let done = self.step_count() as usize;
            let per = self.config.steps_per_epoch;
            if done.is_multiple_of(per) {
                on_epoch(done / per - 1, mean(&self.losses[done - per..]));
            }
        }
        Ok(())
    }

    /// Mean loss of each completed epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        self.losses
            .chunks_exact(self.config.steps_per_epoch.max(1))
            .map(mean)
            .collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Trains a fresh model on `data` for the configured budget.
pub fn train(data: &[StereoSample], cfg: TrainConfig, mode: ExecMode) -> Result<Trainer> {
    let mut t = Trainer::new(cfg)?;
    t.run(data, mode, None, |_, _| {})?;
    Ok(t)
}
