//! Empirical checks of the averaged behaviour at a frozen parameter vector.
//!
//! All expectations are sample averages over one long realization. With
//! `z(t) = ψ(t)ε(t)`:
//!
//! | quantity | estimator |
//! |----------|-----------|
//! | `g_bar`  | `mean(z)` |
//! | `dbar`   | `mean(ε²·ψ⊙ψ)`, recursive running mean |
//! | `f_nsg`  | `g_bar ⊘ dbar^½`, direction of `θ̇` for normalized SGD |
//! | `f_ss`   | `mean(sign(ε)·sign(ψ))`, direction of `θ̇` for sign-sign |
//! | `f_adam` | `mean(m̂ ⊘ (v̂^½ + ε))` along the stream, θ-update disabled |
//!
//! ADAM moves along `-f_adam`, so agreement is measured as the cosine
//! between `-f_adam` and each reference direction.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{Predictor, StructuredModelSpec};
use crate::optim::{adam_direction, sign, AdamHyperParams, AdamState, DEFAULT_DELTA_V};
use crate::plant::DataRecord;

/// Running sample mean `v ← v + (x - v)/k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningMean {
    mean: Vec<f64>,
    n: u64,
}

impl RunningMean {
    pub fn new(d: usize) -> Self {
        Self { mean: vec![0.0; d], n: 0 }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let w = 1.0 / self.n as f64;
        for (m, xi) in self.mean.iter_mut().zip(x) {
            *m += w * (xi - *m);
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn count(&self) -> u64 {
        self.n
    }
}

/// Online mean, covariance and per-component third central moment.
#[derive(Debug, Clone)]
struct VectorMoments {
    n: u64,
    mean: Vec<f64>,
    /// d × d sum of centered cross products.
    m2: Vec<f64>,
    m3: Vec<f64>,
    delta: Vec<f64>,
}

impl VectorMoments {
    fn new(d: usize) -> Self {
        Self { n: 0, mean: vec![0.0; d], m2: vec![0.0; d * d], m3: vec![0.0; d], delta: vec![0.0; d] }
    }

    fn push(&mut self, x: &[f64]) {
        let d = self.mean.len();
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        for i in 0..d {
            self.delta[i] = x[i] - self.mean[i];
        }
        for i in 0..d {
            let dn = self.delta[i] / n;
            let term1 = self.delta[i] * dn * n1;
            self.m3[i] += term1 * dn * (n - 2.0) - 3.0 * dn * self.m2[i * d + i];
        }
        for i in 0..d {
            self.mean[i] += self.delta[i] / n;
        }
        for i in 0..d {
            let di = self.delta[i];
            if di == 0.0 {
                continue;
            }
            for j in 0..d {
                // (x_i - old mean_i)(x_j - new mean_j)
                self.m2[i * d + j] += di * (x[j] - self.mean[j]);
            }
        }
    }

    fn covariance(&self, i: usize, j: usize) -> f64 {
        let d = self.mean.len();
        if self.n < 2 {
            0.0
        } else {
            self.m2[i * d + j] / (self.n - 1) as f64
        }
    }

    /// Standard error of `w·mean` assuming independent samples.
    fn std_err_of(&self, w: &[f64]) -> f64 {
        let d = self.mean.len();
        let mut q = 0.0;
        for i in 0..d {
            if w[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                q += w[i] * self.covariance(i, j) * w[j];
            }
        }
        (q.max(0.0) / self.n as f64).sqrt()
    }

    fn skewness(&self, i: usize) -> Option<f64> {
        let d = self.mean.len();
        let m2 = self.m2[i * d + i];
        if m2 <= 0.0 {
            None
        } else {
            Some((self.n as f64).sqrt() * self.m3[i] / m2.powf(1.5))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma1Verdict {
    Consistent,
    Inconsistent,
    /// Sample mean within three standard errors of zero.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub n: usize,
    /// Sample `E[sign X]`.
    pub lhs: f64,
    /// `sign` of the sample mean.
    pub rhs: f64,
    pub mean: f64,
    pub std_err: f64,
    pub skewness: Option<f64>,
    pub verdict: Lemma1Verdict,
}

fn lemma1_verdict(lhs: f64, mean: f64, std_err: f64) -> Lemma1Verdict {
    if mean.abs() <= 3.0 * std_err {
        Lemma1Verdict::Inconclusive
    } else if sign(lhs) == sign(mean) {
        Lemma1Verdict::Consistent
    } else {
        Lemma1Verdict::Inconsistent
    }
}

pub const LEMMA1_MIN_SAMPLES: usize = 10_000;

/// Compares `E[sign X]` with `sign(E[X])` on a sample.
pub fn lemma1_check(samples: &[f64]) -> Result<Lemma1Report> {
    if samples.len() < LEMMA1_MIN_SAMPLES {
        return Err(Error::InsufficientData { needed: LEMMA1_MIN_SAMPLES, got: samples.len() });
    }
    crate::error::check_finite("lemma samples", samples)?;
    let mut m = VectorMoments::new(1);
    let mut sign_sum = 0.0;
    for &x in samples {
        m.push(&[x]);
        sign_sum += sign(x);
    }
    let n = samples.len();
    let lhs = sign_sum / n as f64;
    let mean = m.mean[0];
    let std_err = m.std_err_of(&[1.0]);
    Ok(Lemma1Report {
        n,
        lhs,
        rhs: sign(mean),
        mean,
        std_err,
        skewness: m.skewness(0),
        verdict: lemma1_verdict(lhs, mean, std_err),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenThetaEstimates {
    pub g_bar: Vec<f64>,
    pub g_bar_std_err: Vec<f64>,
    pub dbar: Vec<f64>,
    /// Components of `dbar` raised to the floor before normalizing.
    pub dbar_floored: Vec<bool>,
    pub f_nsg: Vec<f64>,
    pub f_ss: Vec<f64>,
    pub f_adam: Vec<f64>,
    /// Sample skewness of each component of `ψε`.
    pub skewness: Vec<Option<f64>>,
    /// Per-component sign-mean check on `ψε`.
    pub lemma1: Vec<Lemma1Verdict>,
    pub mean_eps2: f64,
    pub n_samples: usize,
    pub burn_in: usize,
    pub adam: AdamHyperParams,
    /// Standard error of `-Σ|g_bar_i|` (signs held fixed).
    pub dv_ss_std_err: f64,
    /// Standard error of `-g_barᵀ(dbar^{-½}⊙g_bar)` (delta method).
    pub dv_nsg_std_err: f64,
}

/// Minimum number of averaged samples after burn-in.
pub const MIN_AVERAGED_SAMPLES: usize = 1000;

pub fn estimate_frozen(
    model: &StructuredModelSpec,
    theta: &[f64],
    data: &[DataRecord],
    n_samples: usize,
    burn_in: usize,
    adam: &AdamHyperParams,
) -> Result<FrozenThetaEstimates> {
    check_len("parameter vector", model.n_params(), theta.len())?;
    adam.validate()?;
    if n_samples < burn_in + MIN_AVERAGED_SAMPLES {
        return Err(Error::InvalidSpec(format!(
            "n_samples ({n_samples}) must be at least burn_in + {MIN_AVERAGED_SAMPLES}"
        )));
    }
    if data.len() < n_samples {
        return Err(Error::InsufficientData { needed: n_samples, got: data.len() });
    }

    let d = model.n_params();
    let mut pred = Predictor::new(model.clone())?;
    let mut st = pred.init_state();
    let mut adam_st = AdamState::new(d);

    let mut z = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut signs = vec![0.0; d];
    let mut dir = vec![0.0; d];

    let mut moments = VectorMoments::new(d);
    let mut dbar = RunningMean::new(d);
    let mut sign_mean = RunningMean::new(d);
    let mut dir_mean = RunningMean::new(d);
    let mut eps2 = RunningMean::new(1);

    for (k, rec) in data[..n_samples].iter().enumerate() {
        pred.observe(&mut st, theta, &rec.u)?;
        let eps = rec.y - st.y_hat;
        if !eps.is_finite() {
            return Err(Error::Diverged);
        }
        for i in 0..d {
            z[i] = st.psi[i] * eps;
            g[i] = -z[i];
        }
        adam_direction(adam, &mut adam_st, &g, &mut dir)?;
        if k >= burn_in {
            let e2 = eps * eps;
            for i in 0..d {
                sq[i] = e2 * st.psi[i] * st.psi[i];
                signs[i] = sign(eps) * sign(st.psi[i]);
            }
            moments.push(&z);
            dbar.push(&sq);
            sign_mean.push(&signs);
            dir_mean.push(&dir);
            eps2.push(&[e2]);
        }
        pred.advance(&mut st, theta, &rec.u)?;
    }

    let averaged = n_samples - burn_in;
    let g_bar = moments.mean.clone();
    let g_bar_std_err: Vec<f64> = (0..d)
        .map(|i| {
            let mut w = vec![0.0; d];
            w[i] = 1.0;
            moments.std_err_of(&w)
        })
        .collect();
    let dbar_raw = dbar.mean().to_vec();
    let dbar_floored: Vec<bool> = dbar_raw.iter().map(|&v| v <= DEFAULT_DELTA_V).collect();
    let scale: Vec<f64> = dbar_raw.iter().map(|&v| 1.0 / v.max(DEFAULT_DELTA_V).sqrt()).collect();
    let f_nsg: Vec<f64> = g_bar.iter().zip(&scale).map(|(g, s)| g * s).collect();
    let f_ss = sign_mean.mean().to_vec();
    let f_adam = dir_mean.mean().to_vec();

    let skewness: Vec<Option<f64>> = (0..d).map(|i| moments.skewness(i)).collect();
    let lemma1 = (0..d).map(|i| lemma1_verdict(f_ss[i], g_bar[i], g_bar_std_err[i])).collect();

    let w_ss: Vec<f64> = g_bar.iter().map(|&g| sign(g)).collect();
    let w_nsg: Vec<f64> = g_bar.iter().zip(&scale).map(|(g, s)| 2.0 * g * s).collect();

    Ok(FrozenThetaEstimates {
        dv_ss_std_err: moments.std_err_of(&w_ss),
        dv_nsg_std_err: moments.std_err_of(&w_nsg),
        g_bar,
        g_bar_std_err,
        dbar: dbar_raw,
        dbar_floored,
        f_nsg,
        f_ss,
        f_adam,
        skewness,
        lemma1,
        mean_eps2: eps2.mean()[0],
        n_samples: averaged,
        burn_in,
        adam: *adam,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionAgreement {
    /// `cos(-f_adam, f_nsg)`; `None` if undefined.
    pub cos_nsg_adam: Option<f64>,
    /// `cos(-f_adam, f_ss)`; `None` if undefined.
    pub cos_ss_adam: Option<f64>,
    pub norm_f_adam: f64,
    pub norm_f_nsg: f64,
    pub norm_f_ss: f64,
}

pub fn direction_agreement(est: &FrozenThetaEstimates) -> DirectionAgreement {
    let neg_adam: Vec<f64> = est.f_adam.iter().map(|v| -v).collect();
    DirectionAgreement {
        cos_nsg_adam: cosine(&neg_adam, &est.f_nsg),
        cos_ss_adam: cosine(&neg_adam, &est.f_ss),
        norm_f_adam: norm(&est.f_adam),
        norm_f_nsg: norm(&est.f_nsg),
        norm_f_ss: norm(&est.f_ss),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovDiagnostic {
    /// `mean(ε²)/2`.
    pub v_estimate: f64,
    /// `-g_barᵀ(dbar^{-½}⊙g_bar)`.
    pub dv_nsg: f64,
    /// `-‖g_bar‖₁`.
    pub dv_ss: f64,
    /// `-f_ssᵀ g_bar`, the sign-sign derivative before the symmetry step.
    pub dv_ss_sign_form: f64,
    pub dv_nsg_std_err: f64,
    pub dv_ss_std_err: f64,
}

/// Lyapunov time derivatives with the common gain factor dropped.
pub fn lyapunov_derivative(est: &FrozenThetaEstimates) -> LyapunovDiagnostic {
    let dv_nsg = -est.g_bar.iter().zip(&est.f_nsg).map(|(g, f)| g * f).sum::<f64>();
    let dv_ss = -est.g_bar.iter().map(|g| g.abs()).sum::<f64>();
    let dv_ss_sign_form = -est.f_ss.iter().zip(&est.g_bar).map(|(s, g)| s * g).sum::<f64>();
    LyapunovDiagnostic {
        v_estimate: 0.5 * est.mean_eps2,
        dv_nsg,
        dv_ss,
        dv_ss_sign_form,
        dv_nsg_std_err: est.dv_nsg_std_err,
        dv_ss_std_err: est.dv_ss_std_err,
    }
}
