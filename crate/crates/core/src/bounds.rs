//! Convergence analysis: smoothness constants, the noise coefficient d, the
//! one-step descent inequality, the finite-horizon bound and its limit.

use nalgebra::DVector;

use crate::channel::{AstarsState, EffectiveChannels};
use crate::error::{Error, Result};
use crate::fl::train::global_loss_grad;
use crate::fl::{LocalDataset, ModelKind};
use crate::ota::{constraint_groups, group_gains, tau};
use crate::scenario::SystemConfig;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessParams {
    pub rho: f64,
    pub l: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl SmoothnessParams {
    /// Υ = 1 − ρ/L + (ρ/L)α₂d.
    pub fn upsilon(&self, d: f64) -> f64 {
        1.0 - self.rho / self.l + self.rho / self.l * self.alpha2 * d
    }
}

/// Largest eigenvalue of XᵀX over the stacked design matrices, by power
/// iteration without forming XᵀX.
pub fn lambda_max_gram(data: &[LocalDataset]) -> f64 {
    let cols = data[0].x.ncols();
    let mut v = DVector::from_fn(cols, |i, _| 1.0 + 0.01 * i as f64);
    v /= v.norm();
    let mut lam = 0.0;
    for _ in 0..5000 {
        let mut w = DVector::zeros(cols);
        for d in data {
            w += d.x.tr_mul(&(&d.x * &v));
        }
        let next = v.dot(&w);
        let n = w.norm();
        if n == 0.0 {
            return 0.0;
        }
        v = w / n;
        if (next - lam).abs() <= 1e-13 * next.abs() {
            return next;
        }
        lam = next;
    }
    lam
}

/// Gradient Lipschitz constant. For softmax regression the Hessian of the
/// cross-entropy is bounded by ½·xxᵀ per sample (diag(p) − ppᵀ ⪯ ½I).
pub fn lipschitz(kind: &ModelKind, data: &[LocalDataset]) -> Result<f64> {
    match *kind {
        ModelKind::Quadratic { rho, .. } => Ok(rho),
        ModelKind::LogReg { rho, .. } => {
            let n: usize = data.iter().map(LocalDataset::len).sum();
            Ok(rho + lambda_max_gram(data) / (2.0 * n as f64))
        }
        ModelKind::TinyMlp { .. } => Err(Error::Config("bounds require convex model".into())),
    }
}

/// Minimizer and optimal value by full-batch GD with step 2/(L+ρ), run until
/// ‖∇F‖ ≤ `tol`.
pub fn solve_optimum(
    kind: &ModelKind,
    data: &[LocalDataset],
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let l = lipschitz(kind, data)?;
    let step = 2.0 / (l + kind.rho());
    let mut w = vec![0.0; kind.num_params()];
    for _ in 0..200_000 {
        let (f, g) = global_loss_grad(kind, &w, data);
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() <= tol {
            return Ok((w, f));
        }
        w.iter_mut().zip(&g).for_each(|(a, b)| *a -= step * b);
    }
    let (f, _) = global_loss_grad(kind, &w, data);
    log::warn!("optimum search hit the iteration cap");
    Ok((w, f))
}

/// Fit α₁, α₂ so that max_k ‖∇f(w; x_k)‖² ≤ α₁ + α₂‖∇F(w)‖² along a
/// noise-free trajectory: least-squares slope (clipped at 0) shifted up to
/// cover every point, then both inflated by 10%.
pub fn fit_alphas(kind: &ModelKind, data: &[LocalDataset], l: f64, steps: usize) -> Result<(f64, f64)> {
    let mut w = vec![0.0; kind.num_params()];
    let mut pts = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (_, g) = global_loss_grad(kind, &w, data);
        let gn2: f64 = g.iter().map(|v| v * v).sum();
        let mut m: f64 = 0.0;
        for d in data {
            m = kind.per_sample_grad_norms2(&w, d)?.into_iter().fold(m, f64::max);
        }
        pts.push((gn2, m));
        if gn2 < 1e-24 {
            break;
        }
        w.iter_mut().zip(&g).for_each(|(a, b)| *a -= b / l);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    let shift = pts.iter().map(|p| p.1 - slope * p.0).fold(0.0, f64::max);
    Ok((1.1 * shift, 1.1 * slope))
}

pub fn estimate_params(kind: &ModelKind, data: &[LocalDataset]) -> Result<SmoothnessParams> {
    let l = lipschitz(kind, data)?;
    let (alpha1, alpha2) = fit_alphas(kind, data, l, 100)?;
    Ok(SmoothnessParams {
        rho: kind.rho(),
        l,
        alpha1,
        alpha2,
    })
}

/// d = (τσ_s²+σ₀²)/(P(ΣK)²) · max_φ K_φ²/G_φ.
pub fn d_value(
    cfg: &SystemConfig,
    f: &DVector<C64>,
    stars: &AstarsState,
    eff: &EffectiveChannels,
    k: &[f64],
    d_sr: f64,
) -> Result<f64> {
    let groups = constraint_groups(&eff.sides, cfg.grouping);
    let gg = group_gains(&eff.gains(f), &groups);
    let noise = tau(cfg, stars, d_sr) * cfg.sigma_s2 + cfg.sigma_02;
    d_from_gains(noise, cfg.p_max, &gg, k)
}

pub fn d_from_gains(noise_var: f64, p_max: f64, group_gain: &[f64], k: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (phi, &g) in group_gain.iter().enumerate() {
        if !(g > 0.0) {
            return Err(Error::UnreachableUser(phi));
        }
        worst = worst.max(k[phi] * k[phi] / g);
    }
    let sk: f64 = k.iter().sum();
    Ok(noise_var / (p_max * sk * sk) * worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Outcome {
    /// Mean of F(w_{t+1}) − ‖e‖²/2L over draws.
    pub lhs: f64,
    /// F(w_t) − ‖∇F(w_t)‖²/2L.
    pub rhs: f64,
    pub se: f64,
    pub holds: bool,
}

/// One-step descent check over Monte-Carlo draws at a fixed w_t:
/// 𝔼F(w_{t+1}) ≤ F(w_t) − ‖∇F‖²/2L + 𝔼‖e‖²/2L, with 3 standard errors of
/// slack on the per-draw difference.
pub fn theorem1_check(
    f_t: f64,
    f_next: &[f64],
    grad_norm2: f64,
    e_norm2: &[f64],
    l: f64,
) -> Theorem1Outcome {
    let n = f_next.len() as f64;
    let diff: Vec<f64> = f_next.iter().zip(e_norm2).map(|(f, e)| f - e / (2.0 * l)).collect();
    let lhs = diff.iter().sum::<f64>() / n;
    let var = if n > 1.0 {
        diff.iter().map(|v| (v - lhs).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let se = (var / n).sqrt();
    let rhs = f_t - grad_norm2 / (2.0 * l);
    // Rounding in F itself is relative to its magnitude.
    let eps = 1e-12 * f_t.abs().max(1e-300);
    Theorem1Outcome {
        lhs,
        rhs,
        se,
        holds: lhs <= rhs + 3.0 * se + eps,
    }
}

/// Υ^t·gap₀ + (α₁d/2L)·(1−Υ^t)/(1−Υ); t·α₁d/2L + gap₀ when Υ = 1.
pub fn theorem2_bound(t: usize, p: &SmoothnessParams, d: f64, gap0: f64) -> Result<f64> {
    let ups = p.upsilon(d);
    let c = p.alpha1 * d / (2.0 * p.l);
    if ups > 1.0 {
        log::warn!("bound non-contractive (upsilon = {ups})");
        return Err(Error::NonContractive(ups));
    }
    if ups == 1.0 {
        return Ok(gap0 + t as f64 * c);
    }
    let ut = ups.powi(t as i32);
    Ok(ut * gap0 + c * (1.0 - ut) / (1.0 - ups))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorollaryForm {
    /// α₁d / (2ρ(1+α₂d)).
    Printed,
    /// α₁d / (2ρ(1−α₂d)), the t→∞ value of [`theorem2_bound`].
    Series,
}

impl std::str::FromStr for CorollaryForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "printed" => Ok(CorollaryForm::Printed),
            "series" => Ok(CorollaryForm::Series),
            _ => Err(Error::Config(format!("unknown corollary form `{s}`"))),
        }
    }
}

pub fn corollary_limit(p: &SmoothnessParams, d: f64, form: CorollaryForm) -> Result<f64> {
    let ups = p.upsilon(d);
    // The printed form only needs α₂d ≤ 1; the series needs Υ < 1.
    let bad = match form {
        CorollaryForm::Printed => p.alpha2 * d > 1.0,
        CorollaryForm::Series => ups >= 1.0,
    };
    if bad {
        return Err(Error::NonContractive(ups));
    }
    Ok(match form {
        CorollaryForm::Printed => p.alpha1 * d / (2.0 * p.rho * (1.0 + p.alpha2 * d)),
        CorollaryForm::Series => p.alpha1 * d / (2.0 * p.rho * (1.0 - p.alpha2 * d)),
    })
}

/// Per-round comparison of the Monte-Carlo optimality gap with the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub t: usize,
    pub lhs_mc: f64,
    pub lhs_se: f64,
    pub rhs_bound: f64,
    pub d: f64,
    pub upsilon: f64,
}
