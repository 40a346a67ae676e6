//! Over-the-air aggregation: normalization, channel-inversion power control,
//! superposition with noise, linear estimation and error accounting.

use nalgebra::DVector;
use rand::Rng;

use crate::channel::{AstarsState, ChannelRealization, EffectiveChannels};
use crate::error::{Error, Result};
use crate::rng::cn;
use crate::scenario::{Side, SystemConfig};
use crate::C64;

/// Reported ν for a user whose gradient has zero spread.
pub const NU_FLOOR: f64 = 1e-12;

/// How surface amplifier noise reaches the combiner output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmpNoiseModel {
    /// Scalar noise with variance τσ_s², τ being the average cascade power.
    Lumped,
    /// Per-element noise vector pushed through the actual `fᴴ h_sr Θ`.
    Resolved,
}

impl AmpNoiseModel {
    pub fn name(self) -> &'static str {
        match self {
            AmpNoiseModel::Lumped => "lumped",
            AmpNoiseModel::Resolved => "resolved",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lumped" => Some(AmpNoiseModel::Lumped),
            "resolved" => Some(AmpNoiseModel::Resolved),
            _ => None,
        }
    }
}

/// Which channel gains enter one power constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainGrouping {
    /// Each user is constrained by its own gain |fᴴh_φ|².
    PerUser,
    /// The i-th reflection user and the i-th transmission user share the
    /// summed gain |fᴴh_n|² + |fᴴh_m|².
    Paired,
}

impl GainGrouping {
    pub fn name(self) -> &'static str {
        match self {
            GainGrouping::PerUser => "per-user",
            GainGrouping::Paired => "paired",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per-user" => Some(GainGrouping::PerUser),
            "paired" => Some(GainGrouping::Paired),
            _ => None,
        }
    }
}

/// For each user, the users whose gains make up its constraint (itself first).
pub fn constraint_groups(sides: &[Side], grouping: GainGrouping) -> Vec<Vec<usize>> {
    let refl: Vec<usize> = (0..sides.len()).filter(|&i| sides[i] == Side::Reflection).collect();
    let tran: Vec<usize> = (0..sides.len()).filter(|&i| sides[i] == Side::Transmission).collect();
    (0..sides.len())
        .map(|phi| match grouping {
            GainGrouping::PerUser => vec![phi],
            GainGrouping::Paired => {
                let (own, other) = match sides[phi] {
                    Side::Reflection => (&refl, &tran),
                    Side::Transmission => (&tran, &refl),
                };
                let rank = own.iter().position(|&u| u == phi).unwrap();
                match other.get(rank) {
                    Some(&partner) => vec![phi, partner],
                    None => vec![phi],
                }
            }
        })
        .collect()
}

/// Sum per-user gains over each constraint group.
pub fn group_gains(gains: &[f64], groups: &[Vec<usize>]) -> Vec<f64> {
    groups.iter().map(|g| g.iter().map(|&u| gains[u]).sum()).collect()
}

/// (x, ḡ, ν) with x = (g − ḡ)/ν over the empirical mean and spread.
pub fn normalize_gradient(g: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    if g.len() < 2 {
        return Err(Error::Dimension(format!("gradient length {} < 2", g.len())));
    }
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::DegenerateGradient);
    }
    let nu = var.sqrt();
    Ok((g.iter().map(|v| (v - mean) / nu).collect(), mean, nu))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientStats {
    pub g_bar: Vec<f64>,
    pub nu: Vec<f64>,
    pub x: Vec<Vec<f64>>,
}

impl GradientStats {
    /// Normalize every user's gradient. A flat gradient sends x = 0 and
    /// reports ν = [`NU_FLOOR`].
    pub fn from_grads(grads: &[Vec<f64>]) -> Result<Self> {
        let mut s = Self {
            g_bar: Vec::with_capacity(grads.len()),
            nu: Vec::with_capacity(grads.len()),
            x: Vec::with_capacity(grads.len()),
        };
        for g in grads {
            let (x, gb, nu) = match normalize_gradient(g) {
                Ok(t) => t,
                Err(Error::DegenerateGradient) => {
                    (vec![0.0; g.len()], g[0], NU_FLOOR)
                }
                Err(e) => return Err(e),
            };
            s.x.push(x);
            s.g_bar.push(gb);
            s.nu.push(nu);
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }
}

/// μ = min_φ P·G_φ / (K_φ² ν_φ²), with G_φ the grouped gain of user φ.
pub fn mu_from_gains(p_max: f64, group_gain: &[f64], k: &[f64], nu: &[f64]) -> Result<f64> {
    let mut mu = f64::INFINITY;
    for (phi, &g) in group_gain.iter().enumerate() {
        if !(g > 0.0) {
            return Err(Error::UnreachableUser(phi));
        }
        mu = mu.min(p_max * g / (k[phi] * nu[phi]).powi(2));
    }
    Ok(mu)
}

pub fn compute_mu(
    f: &DVector<C64>,
    eff: &EffectiveChannels,
    cfg: &SystemConfig,
    k: &[f64],
    nu: &[f64],
) -> Result<f64> {
    let groups = constraint_groups(&eff.sides, cfg.grouping);
    mu_from_gains(cfg.p_max, &group_gains(&eff.gains(f), &groups), k, nu)
}

/// τ: average power the surface amplifier noise picks up on its way to a
/// unit-norm combiner.
pub fn tau(cfg: &SystemConfig, stars: &AstarsState, d_sr: f64) -> f64 {
    let (q, k) = (stars.q() as f64, cfg.kappa);
    stars.mean_power_gain()
        * cfg.eta0
        * d_sr.powf(-cfg.alpha)
        * cfg.j_antennas as f64
        * q
        * (q * k + 1.0)
        / (k + 1.0)
}

/// Per-user precoders b_φ = √μ K_φ ν_φ / (fᴴh_φ): each user inverts its own
/// channel so that its scaled signal arrives with weight √μ K_φ ν_φ.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub b: Vec<C64>,
    pub power: Vec<f64>,
    pub mu: f64,
}

/// Everything about the uplink that stays fixed while the channel does.
#[derive(Debug, Clone)]
pub struct OtaLink {
    /// fᴴh_φ.
    pub c: Vec<C64>,
    pub group_gain: Vec<f64>,
    pub p_max: f64,
    pub sigma_02: f64,
    pub sigma_s2: f64,
    pub tau: f64,
    pub model: AmpNoiseModel,
    /// Row vector fᴴ h_sr (Θⁿ + Θᵐ) carrying the per-element amplifier noise.
    pub noise_row: DVector<C64>,
}

impl OtaLink {
    pub fn new(
        cfg: &SystemConfig,
        real: &ChannelRealization,
        stars: &AstarsState,
        f: &DVector<C64>,
    ) -> Result<Self> {
        let nf = f.norm();
        if (nf - 1.0).abs() > 1e-9 {
            return Err(Error::Dimension(format!("combiner norm {nf} != 1")));
        }
        let eff = EffectiveChannels::build(real, stars);
        let c: Vec<C64> = eff.h.iter().map(|h| f.dotc(h)).collect();
        let gains: Vec<f64> = c.iter().map(|z| z.norm_sqr()).collect();
        let groups = constraint_groups(&real.sides, cfg.grouping);
        let fh = real.h_sr.adjoint() * f;
        let t = stars.coeff_n() + stars.coeff_m();
        // Entry q of the row is conj(fᴴ h_sr)_q · t_q, i.e. (h_srᴴ f)*_q t_q.
        let noise_row = fh.map(|z| z.conj()).component_mul(&t);
        Ok(Self {
            c,
            group_gain: group_gains(&gains, &groups),
            p_max: cfg.p_max,
            sigma_02: cfg.sigma_02,
            sigma_s2: cfg.sigma_s2,
            tau: tau(cfg, stars, real.d_sr),
            model: cfg.amp_noise,
            noise_row,
        })
    }

    pub fn users(&self) -> usize {
        self.c.len()
    }

    /// Per-dimension variance of the total receiver-side noise.
    pub fn noise_var(&self) -> f64 {
        match self.model {
            AmpNoiseModel::Lumped => self.tau * self.sigma_s2 + self.sigma_02,
            AmpNoiseModel::Resolved => self.sigma_s2 * self.noise_row.norm_squared() + self.sigma_02,
        }
    }

    pub fn allocate(&self, k: &[f64], nu: &[f64]) -> Result<PowerAllocation> {
        let mu = mu_from_gains(self.p_max, &self.group_gain, k, nu)?;
        let mut b = Vec::with_capacity(self.users());
        let mut power = Vec::with_capacity(self.users());
        for phi in 0..self.users() {
            if self.c[phi].norm_sqr() == 0.0 {
                return Err(Error::UnreachableUser(phi));
            }
            let bp = C64::from(mu.sqrt() * k[phi] * nu[phi]) / self.c[phi];
            power.push(bp.norm_sqr());
            b.push(bp);
        }
        Ok(PowerAllocation { b, power, mu })
    }

    /// Closed-form 𝔼‖e₂‖²: Φ(τσ_s²+σ₀²)/(P(ΣK)²) · max_φ K_φ²ν_φ²/G_φ.
    pub fn closed_form_e2(&self, k: &[f64], nu: &[f64]) -> Result<f64> {
        closed_form_from_gains(
            self.tau * self.sigma_s2 + self.sigma_02,
            self.p_max,
            &self.group_gain,
            k,
            nu,
        )
    }

    /// Received complex stream for one round.
    pub fn transmit<R: Rng + ?Sized>(
        &self,
        stats: &GradientStats,
        powers: &PowerAllocation,
        rng: &mut R,
    ) -> Vec<C64> {
        let d = stats.dim();
        let mut y = vec![C64::new(0.0, 0.0); d];
        for phi in 0..self.users() {
            let w = self.c[phi] * powers.b[phi];
            for (yd, xd) in y.iter_mut().zip(&stats.x[phi]) {
                *yd += w * *xd;
            }
        }
        match self.model {
            AmpNoiseModel::Lumped => {
                let var = self.tau * self.sigma_s2;
                if var > 0.0 {
                    for yd in y.iter_mut() {
                        *yd += cn(rng, var);
                    }
                }
            }
            AmpNoiseModel::Resolved => {
                if self.sigma_s2 > 0.0 {
                    for yd in y.iter_mut() {
                        for t in self.noise_row.iter() {
                            *yd += t * cn(rng, self.sigma_s2);
                        }
                    }
                }
            }
        }
        if self.sigma_02 > 0.0 {
            for yd in y.iter_mut() {
                *yd += cn(rng, self.sigma_02);
            }
        }
        y
    }
}

pub fn closed_form_from_gains(
    noise_var: f64,
    p_max: f64,
    group_gain: &[f64],
    k: &[f64],
    nu: &[f64],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (phi, &g) in group_gain.iter().enumerate() {
        if !(g > 0.0) {
            return Err(Error::UnreachableUser(phi));
        }
        worst = worst.max((k[phi] * nu[phi]).powi(2) / g);
    }
    let sum_k: f64 = k.iter().sum();
    Ok(group_gain.len() as f64 * noise_var / (p_max * sum_k * sum_k) * worst)
}

#[allow(clippy::too_many_arguments)]
pub fn closed_form_e2(
    cfg: &SystemConfig,
    f: &DVector<C64>,
    stars: &AstarsState,
    eff: &EffectiveChannels,
    k: &[f64],
    nu: &[f64],
    d_sr: f64,
) -> Result<f64> {
    let groups = constraint_groups(&eff.sides, cfg.grouping);
    let gg = group_gains(&eff.gains(f), &groups);
    let noise = tau(cfg, stars, d_sr) * cfg.sigma_s2 + cfg.sigma_02;
    closed_form_from_gains(noise, cfg.p_max, &gg, k, nu)
}

/// Exact 𝔼‖e₂‖² of this chain for a D-dimensional real gradient: each
/// dimension keeps the real half of a complex noise sample of variance
/// `noise_var`, scaled by 1/(√μ ΣK).
pub fn expected_e2(dim: usize, noise_var: f64, mu: f64, sum_k: f64) -> f64 {
    dim as f64 * noise_var / (2.0 * mu * sum_k * sum_k)
}

pub fn transmit_round<R: Rng + ?Sized>(
    stats: &GradientStats,
    powers: &PowerAllocation,
    link: &OtaLink,
    rng: &mut R,
) -> Vec<C64> {
    link.transmit(stats, powers, rng)
}

/// r̂[d] = Re(y[d])/√μ + Σ_φ K_φ ḡ_φ.
pub fn estimate(y: &[C64], mu: f64, g_bars: &[f64], k: &[f64]) -> Vec<f64> {
    let offset: f64 = g_bars.iter().zip(k).map(|(g, k)| g * k).sum();
    let s = 1.0 / mu.sqrt();
    y.iter().map(|z| z.re * s + offset).collect()
}

/// (e₁, e₂) = (∇F − r/ΣK, (r − r̂)/ΣK).
pub fn decompose_error(
    r_true: &[f64],
    r_hat: &[f64],
    grad_true: &[f64],
    sum_k: f64,
) -> (Vec<f64>, Vec<f64>) {
    let e1 = grad_true.iter().zip(r_true).map(|(g, r)| g - r / sum_k).collect();
    let e2 = r_true.iter().zip(r_hat).map(|(r, h)| (r - h) / sum_k).collect();
    (e1, e2)
}

/// r = Σ_φ K_φ g_φ.
pub fn weighted_sum(grads: &[Vec<f64>], k: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; grads.first().map_or(0, Vec::len)];
    for (g, &kk) in grads.iter().zip(k) {
        for (rd, gd) in r.iter_mut().zip(g) {
            *rd += kk * gd;
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtaRoundResult {
    pub y: Vec<C64>,
    pub r_hat: Vec<f64>,
    pub r_true: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    pub e2_norm2: f64,
    pub e1_norm2: f64,
    pub mu: f64,
    pub closed_form: f64,
}

/// One full aggregation round. `grad_true` defaults to r/ΣK.
pub fn ota_round<R: Rng + ?Sized>(
    link: &OtaLink,
    grads: &[Vec<f64>],
    k: &[f64],
    grad_true: Option<&[f64]>,
    rng: &mut R,
) -> Result<OtaRoundResult> {
    let stats = GradientStats::from_grads(grads)?;
    let powers = link.allocate(k, &stats.nu)?;
    let y = link.transmit(&stats, &powers, rng);
    let r_hat = estimate(&y, powers.mu, &stats.g_bar, k);
    let r_true = weighted_sum(grads, k);
    let sum_k: f64 = k.iter().sum();
    let fallback: Vec<f64>;
    let gt = match grad_true {
        Some(g) => g,
        None => {
            fallback = r_true.iter().map(|r| r / sum_k).collect();
            &fallback
        }
    };
    let (e1, e2) = decompose_error(&r_true, &r_hat, gt, sum_k);
    let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    Ok(OtaRoundResult {
        e2_norm2: norm2(&e2),
        e1_norm2: norm2(&e1),
        closed_form: link.closed_form_e2(k, &stats.nu)?,
        mu: powers.mu,
        y,
        r_hat,
        r_true,
        e1,
        e2,
    })
}
