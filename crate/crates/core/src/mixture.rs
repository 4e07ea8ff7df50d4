//! Closed-form math of the output representations.
//!
//! All densities are over *normalized* disparity (raw disparity divided by
//! the dataset constant `d_max`), so values typically live in `[0, 1]` and
//! densities routinely exceed one.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmdError};

/// Lower clamp for the mixture weight; the upper clamp is `1 - PI_EPS`.
pub const PI_EPS: f64 = 1e-4;
/// Smallest admissible Laplace scale.
pub const B_MIN: f64 = 1e-4;
/// Largest scale produced by the sigmoid decode.
pub const B_MAX: f64 = 1.0;

/// Half-width of the entropy integration window, in units of the largest scale.
pub const ENTROPY_WINDOW: f64 = 20.0;
/// Minimum number of Simpson intervals used by [`entropy`].
pub const ENTROPY_INTERVALS: usize = 2048;

/// Bimodal Laplacian mixture `(pi, mu1, b1, mu2, b2)` at one query point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pi: f64,
    mu1: f64,
    b1: f64,
    mu2: f64,
    b2: f64,
}

impl MixtureParams {
    pub fn new(pi: f64, mu1: f64, b1: f64, mu2: f64, b2: f64) -> Result<Self> {
        let all = [pi, mu1, b1, mu2, b2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(SmdError::Config(format!("non-finite mixture parameters {all:?}")));
        }
        if !(pi > 0.0 && pi < 1.0) {
            return Err(SmdError::Config(format!("mixture weight {pi} outside (0, 1)")));
        }
        if b1 < B_MIN || b2 < B_MIN {
            return Err(SmdError::Config(format!("scales ({b1}, {b2}) below {B_MIN}")));
        }
        Ok(Self { pi, mu1, b1, mu2, b2 })
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }
    pub fn mu1(&self) -> f64 {
        self.mu1
    }
    pub fn b1(&self) -> f64 {
        self.b1
    }
    pub fn mu2(&self) -> f64 {
        self.mu2
    }
    pub fn b2(&self) -> f64 {
        self.b2
    }

    /// The same distribution with the two components exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            pi: 1.0 - self.pi,
            mu1: self.mu2,
            b1: self.b2,
            mu2: self.mu1,
            b2: self.b1,
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.pi, self.mu1, self.b1, self.mu2, self.b2]
    }

    /// Log of each weighted component density at `d`.
    fn component_logs(&self, d: f64) -> (f64, f64) {
        let l1 = self.pi.ln() - (2.0 * self.b1).ln() - (d - self.mu1).abs() / self.b1;
        let l2 = (1.0 - self.pi).ln() - (2.0 * self.b2).ln() - (d - self.mu2).abs() / self.b2;
        (l1, l2)
    }
}

/// Single Laplace `(mu, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnimodalParams {
    mu: f64,
    b: f64,
}

impl UnimodalParams {
    pub fn new(mu: f64, b: f64) -> Result<Self> {
        if !mu.is_finite() || !b.is_finite() || b < B_MIN {
            return Err(SmdError::Config(format!("invalid unimodal parameters ({mu}, {b})")));
        }
        Ok(Self { mu, b })
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn b(&self) -> f64 {
        self.b
    }
}

/// Partial derivatives of the bimodal NLL with respect to the decoded parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradientVector5 {
    pub d_pi: f64,
    pub d_mu1: f64,
    pub d_b1: f64,
    pub d_mu2: f64,
    pub d_b2: f64,
}

impl GradientVector5 {
    pub fn to_array(&self) -> [f64; 5] {
        [self.d_pi, self.d_mu1, self.d_b1, self.d_mu2, self.d_b2]
    }
}

/// Sign with the kink convention `sign(0) = 0`.
#[inline]
fn kink_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn pdf(params: &MixtureParams, d: f64) -> f64 {
    let p = params;
    p.pi / (2.0 * p.b1) * (-(d - p.mu1).abs() / p.b1).exp()
        + (1.0 - p.pi) / (2.0 * p.b2) * (-(d - p.mu2).abs() / p.b2).exp()
}

/// Log-density evaluated in shifted-max form, finite even when both
/// component densities underflow.
pub fn log_pdf(params: &MixtureParams, d: f64) -> f64 {
    let (l1, l2) = params.component_logs(d);
    log_add(l1, l2)
}

pub fn nll(params: &MixtureParams, d: f64) -> f64 {
    -log_pdf(params, d)
}

/// Analytic gradient of [`nll`]. The derivative of `|d - mu|` is taken as
/// zero at `d == mu`.
pub fn nll_grad(params: &MixtureParams, d: f64) -> GradientVector5 {
    let p = params;
    let (l1, l2) = p.component_logs(d);
    let lp = log_add(l1, l2);
    // responsibilities
    let r1 = (l1 - lp).exp();
    let r2 = (l2 - lp).exp();
    let a1 = (d - p.mu1).abs();
    let a2 = (d - p.mu2).abs();
    GradientVector5 {
        d_pi: -(r1 / p.pi - r2 / (1.0 - p.pi)),
        d_mu1: -r1 * kink_sign(d - p.mu1) / p.b1,
        d_b1: r1 * (1.0 / p.b1 - a1 / (p.b1 * p.b1)),
        d_mu2: -r2 * kink_sign(d - p.mu2) / p.b2,
        d_b2: r2 * (1.0 / p.b2 - a2 / (p.b2 * p.b2)),
    }
}

/// Point estimate: the component mean with the larger mixture density.
/// Ties resolve to `mu1`.
pub fn select_mode(params: &MixtureParams) -> f64 {
    // Compared in log space so that very narrow components cannot overflow.
    if log_pdf(params, params.mu1) >= log_pdf(params, params.mu2) {
        params.mu1
    } else {
        params.mu2
    }
}

/// Integration window used by [`entropy`] and the normalization checks.
pub fn entropy_window(params: &MixtureParams) -> (f64, f64) {
    let bmax = params.b1.max(params.b2);
    (
        params.mu1.min(params.mu2) - ENTROPY_WINDOW * bmax,
        params.mu1.max(params.mu2) + ENTROPY_WINDOW * bmax,
    )
}

/// Breakpoints for composite quadrature over the entropy window.
///
/// Pieces are split at both kinks and graded geometrically around each mode
/// (`mu ± b·2^j`), so narrow components are resolved no matter how far apart
/// the modes are.
fn quadrature_breaks(params: &MixtureParams) -> Vec<f64> {
    let (lo, hi) = entropy_window(params);
    let mut pts = vec![lo, hi];
    for (mu, b) in [(params.mu1, params.b1), (params.mu2, params.b2)] {
        pts.push(mu);
        let mut r = b / 4.0;
        while r < ENTROPY_WINDOW * b {
            pts.push(mu - r);
            pts.push(mu + r);
            r *= 2.0;
        }
        pts.push(mu - ENTROPY_WINDOW * b);
        pts.push(mu + ENTROPY_WINDOW * b);
    }
    pts.retain(|v| *v >= lo && *v <= hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (1.0 + b.abs()));
    pts
}

/// Composite Simpson rule of `f` over the graded pieces of the entropy window.
pub fn integrate_window<F: Fn(f64) -> f64>(params: &MixtureParams, f: F) -> f64 {
    let breaks = quadrature_breaks(params);
    let pieces = breaks.len() - 1;
    let mut per_piece = ENTROPY_INTERVALS.div_ceil(pieces).max(16);
    per_piece += per_piece % 2;
    breaks
        .windows(2)
        .map(|w| simpson(&f, w[0], w[1], per_piece))
        .sum()
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
    debug_assert!(n.is_multiple_of(2));
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Differential entropy `-∫ p log p` in nats, by quadrature over
/// `[min(mu) - 20 max(b), max(mu) + 20 max(b)]`. Mass beyond the window is
/// below `e^-20` per side and is ignored.
pub fn entropy(params: &MixtureParams) -> f64 {
    integrate_window(params, |d| {
        // Direct density: inside the window it only underflows where the
        // integrand is zero anyway.
        let p = pdf(params, d);
        if p > 0.0 {
            -p * p.ln()
        } else {
            0.0
        }
    })
}

pub fn unimodal_nll(params: &UnimodalParams, d: f64) -> f64 {
    (2.0 * params.b).ln() + (d - params.mu).abs() / params.b
}

/// Gradient of [`unimodal_nll`] as `[d_mu, d_b]`.
pub fn unimodal_grad(params: &UnimodalParams, d: f64) -> [f64; 2] {
    let b = params.b;
    let a = (d - params.mu).abs();
    [-kink_sign(d - params.mu) / b, 1.0 / b - a / (b * b)]
}

/// Closed-form Laplace entropy `1 + ln(2b)`.
pub fn unimodal_entropy(params: &UnimodalParams) -> f64 {
    1.0 + (2.0 * params.b).ln()
}

pub fn l1_loss(pred: f64, d: f64) -> f64 {
    (pred - d).abs()
}

pub fn l1_grad(pred: f64, d: f64) -> f64 {
    kink_sign(pred - d)
}
