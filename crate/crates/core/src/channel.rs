//! Rician channel draws, surface coefficient matrices and effective channels.
//!
//! Orientation: `h_sr` is J×Q and a user's cascaded uplink reads
//! `h_sr · Θ · h_r`, so the receiver sees `fᴴ h_sr Θ h_r`.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::cn;
use crate::scenario::{Geometry, Side, SurfaceKind, SystemConfig};
use crate::C64;

/// One draw of every complex link, path loss included.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub sides: Vec<Side>,
    /// BS ← user direct links (J each). Drawn for every user; transmission
    /// users only see theirs through `tx_direct_gain`.
    pub h_direct: Vec<DVector<C64>>,
    /// BS ← surface, J×Q.
    pub h_sr: DMatrix<C64>,
    /// surface ← user, Q each.
    pub h_r: Vec<DVector<C64>>,
    pub d_sr: f64,
    /// Power gain on the direct link of transmission users.
    pub tx_direct_gain: f64,
}

/// Small-scale Rician entry with unit mean power.
pub fn rician<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> C64 {
    let los = (kappa / (kappa + 1.0)).sqrt();
    let nlos = (1.0 / (kappa + 1.0)).sqrt();
    C64::new(los, 0.0) + nlos * cn(rng, 1.0)
}

/// Large-scale amplitude √(η₀ d^{−α}).
pub fn path_amplitude(eta0: f64, d: f64, alpha: f64) -> f64 {
    (eta0 * d.powf(-alpha)).sqrt()
}

pub fn sample_channels<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    geom: &Geometry,
    rng: &mut R,
) -> ChannelRealization {
    let (j, q) = (cfg.j_antennas, cfg.q_elements);
    let draw = |n: usize, amp: f64, rng: &mut R| -> Vec<C64> {
        (0..n).map(|_| amp * rician(cfg.kappa, rng)).collect()
    };
    let d_sr = geom.d_sr();
    let sr = draw(j * q, path_amplitude(cfg.eta0, d_sr, cfg.alpha), rng);
    let h_sr = DMatrix::from_vec(j, q, sr);
    let mut h_direct = Vec::with_capacity(geom.sides.len());
    let mut h_r = Vec::with_capacity(geom.sides.len());
    for phi in 0..geom.sides.len() {
        let a_d = path_amplitude(cfg.eta0, geom.d_bu(phi), cfg.alpha);
        h_direct.push(DVector::from_vec(draw(j, a_d, rng)));
        let a_r = path_amplitude(cfg.eta0, geom.d_su(phi), cfg.alpha);
        h_r.push(DVector::from_vec(draw(q, a_r, rng)));
    }
    ChannelRealization {
        sides: geom.sides.clone(),
        h_direct,
        h_sr,
        h_r,
        d_sr,
        tx_direct_gain: cfg.tx_direct_gain,
    }
}

impl ChannelRealization {
    pub fn users(&self) -> usize {
        self.sides.len()
    }

    pub fn j(&self) -> usize {
        self.h_sr.nrows()
    }

    pub fn q(&self) -> usize {
        self.h_sr.ncols()
    }

    /// `h_sr · diag(h_r[φ])`, the J×Q map from surface coefficients to the
    /// cascaded channel of user φ.
    pub fn cascade(&self, phi: usize) -> DMatrix<C64> {
        let mut a = self.h_sr.clone();
        for (mut col, h) in a.column_iter_mut().zip(self.h_r[phi].iter()) {
            col *= *h;
        }
        a
    }

    /// Direct-link contribution seen at the BS for user φ.
    pub fn direct(&self, phi: usize) -> DVector<C64> {
        match self.sides[phi] {
            Side::Reflection => self.h_direct[phi].clone(),
            Side::Transmission => &self.h_direct[phi] * C64::from(self.tx_direct_gain.sqrt()),
        }
    }

    /// CSV dump with columns `block,user,row,col,re,im`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["block", "user", "row", "col", "re", "im"])?;
        let mut rec = |block: &str, user: usize, r: usize, c: usize, z: C64| {
            w.write_record([
                block.to_string(),
                user.to_string(),
                r.to_string(),
                c.to_string(),
                z.re.to_string(),
                z.im.to_string(),
            ])
        };
        for c in 0..self.q() {
            for r in 0..self.j() {
                rec("h_sr", 0, r, c, self.h_sr[(r, c)])?;
            }
        }
        for phi in 0..self.users() {
            for (r, z) in self.h_direct[phi].iter().enumerate() {
                rec("h_direct", phi, r, 0, *z)?;
            }
            for (r, z) in self.h_r[phi].iter().enumerate() {
                rec("h_r", phi, r, 0, *z)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Surface configuration: per-element phases and moduli for the reflection
/// side (n) and the transmission side (m).
#[derive(Debug, Clone, PartialEq)]
pub struct AstarsState {
    pub theta_n: Vec<f64>,
    pub theta_m: Vec<f64>,
    pub amp_n: Vec<f64>,
    pub amp_m: Vec<f64>,
}

fn reduce(phases: &[f64]) -> Result<Vec<f64>> {
    phases
        .iter()
        .map(|&p| {
            if p.is_finite() {
                Ok(p.rem_euclid(TAU))
            } else {
                Err(Error::Config(format!("non-finite phase {p}")))
            }
        })
        .collect()
}

/// Diagonal matrix with entries √(amp·beta)·e^{jθ_q}.
pub fn build_theta(phases: &[f64], amp: f64, beta: f64) -> Result<DMatrix<C64>> {
    if !(amp > 0.0 && beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!("build_theta: amp={amp}, beta={beta}")));
    }
    let m = (amp * beta).sqrt();
    let d = reduce(phases)?
        .into_iter()
        .map(|p| C64::from_polar(m, p))
        .collect::<Vec<_>>();
    Ok(DMatrix::from_diagonal(&DVector::from_vec(d)))
}

impl AstarsState {
    /// Active STARS with moduli √(λβ_r), √(λβ_t) on every element.
    pub fn stars(
        theta_n: &[f64],
        theta_m: &[f64],
        lambda: f64,
        beta_r: f64,
        beta_t: f64,
    ) -> Result<Self> {
        if theta_n.len() != theta_m.len() {
            return Err(Error::Dimension("theta_n and theta_m lengths differ".into()));
        }
        let q = theta_n.len();
        Ok(Self {
            theta_n: reduce(theta_n)?,
            theta_m: reduce(theta_m)?,
            amp_n: vec![(lambda * beta_r).sqrt(); q],
            amp_m: vec![(lambda * beta_t).sqrt(); q],
        })
    }

    /// Two passive reflect-only surfaces: the first ⌊Q/2⌋ elements serve the
    /// reflection half-space, the remaining ⌈Q/2⌉ the other one.
    pub fn dual_ris(theta_n: &[f64], theta_m: &[f64]) -> Result<Self> {
        let q = theta_n.len();
        let split = q / 2;
        Ok(Self {
            theta_n: reduce(theta_n)?,
            theta_m: reduce(theta_m)?,
            amp_n: (0..q).map(|i| if i < split { 1.0 } else { 0.0 }).collect(),
            amp_m: (0..q).map(|i| if i < split { 0.0 } else { 1.0 }).collect(),
        })
    }

    /// No surface: every coefficient is zero.
    pub fn off(q: usize) -> Self {
        Self {
            theta_n: vec![0.0; q],
            theta_m: vec![0.0; q],
            amp_n: vec![0.0; q],
            amp_m: vec![0.0; q],
        }
    }

    /// Surface of the kind selected in `cfg` with the given phases.
    pub fn for_config(cfg: &SystemConfig, theta_n: &[f64], theta_m: &[f64]) -> Result<Self> {
        match cfg.surface {
            SurfaceKind::Stars => {
                Self::stars(theta_n, theta_m, cfg.lambda_amp, cfg.beta_r, cfg.beta_t)
            }
            SurfaceKind::DualRis => Self::dual_ris(theta_n, theta_m),
            SurfaceKind::Off => Ok(Self::off(theta_n.len())),
        }
    }

    pub fn q(&self) -> usize {
        self.theta_n.len()
    }

    pub fn with_phases(&self, theta_n: &[f64], theta_m: &[f64]) -> Result<Self> {
        Ok(Self {
            theta_n: reduce(theta_n)?,
            theta_m: reduce(theta_m)?,
            amp_n: self.amp_n.clone(),
            amp_m: self.amp_m.clone(),
        })
    }

    /// Diagonal of Θⁿ.
    pub fn coeff_n(&self) -> DVector<C64> {
        DVector::from_iterator(
            self.q(),
            self.theta_n.iter().zip(&self.amp_n).map(|(&p, &a)| C64::from_polar(a, p)),
        )
    }

    /// Diagonal of Θᵐ.
    pub fn coeff_m(&self) -> DVector<C64> {
        DVector::from_iterator(
            self.q(),
            self.theta_m.iter().zip(&self.amp_m).map(|(&p, &a)| C64::from_polar(a, p)),
        )
    }

    pub fn coeff(&self, side: Side) -> DVector<C64> {
        match side {
            Side::Reflection => self.coeff_n(),
            Side::Transmission => self.coeff_m(),
        }
    }

    pub fn amp(&self, side: Side) -> &[f64] {
        match side {
            Side::Reflection => &self.amp_n,
            Side::Transmission => &self.amp_m,
        }
    }

    /// Mean per-element power gain summed over both sides; equals λ(β_r+β_t)
    /// for an active STARS.
    pub fn mean_power_gain(&self) -> f64 {
        let q = self.q().max(1) as f64;
        self.amp_n
            .iter()
            .chain(&self.amp_m)
            .map(|a| a * a)
            .sum::<f64>()
            / q
    }
}

/// Effective channel of user φ: direct part plus `h_sr Θ h_r` on its side.
pub fn effective_channel(real: &ChannelRealization, stars: &AstarsState, phi: usize) -> DVector<C64> {
    let t = stars.coeff(real.sides[phi]);
    let scaled = real.h_r[phi].component_mul(&t);
    real.direct(phi) + &real.h_sr * scaled
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    pub sides: Vec<Side>,
    pub h: Vec<DVector<C64>>,
}

impl EffectiveChannels {
    pub fn build(real: &ChannelRealization, stars: &AstarsState) -> Self {
        Self {
            sides: real.sides.clone(),
            h: (0..real.users())
                .map(|phi| effective_channel(real, stars, phi))
                .collect(),
        }
    }

    /// |fᴴ h_φ|² for every user.
    pub fn gains(&self, f: &DVector<C64>) -> Vec<f64> {
        self.h.iter().map(|h| f.dotc(h).norm_sqr()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::rng::stream;
    use crate::scenario::place_users;
    use proptest::prelude::*;

    fn setup(seed: u64) -> (SystemConfig, ChannelRealization) {
        let mut cfg = SystemConfig::default();
        cfg.n_reflect = 3;
        cfg.m_transmit = 2;
        cfg.q_elements = 6;
        cfg.j_antennas = 3;
        let g = place_users(&cfg, &mut stream(seed, &[1]));
        let r = sample_channels(&cfg, &g, &mut stream(seed, &[2]));
        (cfg, r)
    }

    fn phases(q: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, &[99]);
        (0..q).map(|_| rng.random::<f64>() * TAU).collect()
    }

    #[test]
    fn los_limit() {
        let mut rng = stream(3, &[]);
        for _ in 0..100 {
            let z = rician(1e12, &mut rng);
            assert!((z - C64::new(1.0, 0.0)).norm() < 1e-5);
        }
    }

    #[test]
    fn path_amplitude_value() {
        assert!((path_amplitude(1e-3, 50.0, 2.0) - 6.324555320336759e-4).abs() < 1e-15);
    }

    #[test]
    fn rician_moments() {
        let kappa = 10f64.powf(-0.5);
        let n = 100_000;
        let mut rng = stream(11, &[]);
        let xs: Vec<C64> = (0..n).map(|_| rician(kappa, &mut rng)).collect();
        let mean = xs.iter().sum::<C64>() / n as f64;
        let los = (kappa / (kappa + 1.0)).sqrt();
        let var = 1.0 / (kappa + 1.0);
        // Each of re/im has variance var/2.
        let se = (var / 2.0 / n as f64).sqrt();
        assert!((mean.re - los).abs() < 3.0 * se, "{mean} vs {los}");
        assert!(mean.im.abs() < 3.0 * se);
        let v = xs.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / n as f64;
        assert!((v / var - 1.0).abs() < 0.02);
    }

    #[test]
    fn theta_examples() {
        let t = build_theta(&[0.0; 4], 5.0, 0.7).unwrap();
        for i in 0..4 {
            assert!((t[(i, i)] - C64::new(3.5f64.sqrt(), 0.0)).norm() < 1e-15);
            assert!((t[(i, i)].re - 1.8708).abs() < 1e-4);
        }
        let id = build_theta(&[0.0; 3], 1.0, 1.0).unwrap();
        assert_eq!(id, DMatrix::identity(3, 3));
        let flip = build_theta(&[std::f64::consts::PI], 5.0, 0.7).unwrap();
        assert!((flip[(0, 0)] + C64::new(3.5f64.sqrt(), 0.0)).norm() < 1e-12);
        assert!(build_theta(&[f64::NAN], 1.0, 1.0).is_err());
    }

    #[test]
    fn phases_are_reduced() {
        let s = AstarsState::stars(&[7.0, -1.0], &[0.0, TAU], 5.0, 0.7, 0.3).unwrap();
        assert!(s.theta_n.iter().chain(&s.theta_m).all(|p| (0.0..TAU).contains(p)));
        assert!((s.theta_n[0] - (7.0 - TAU)).abs() < 1e-15);
    }

    #[test]
    fn surface_off_leaves_direct_only() {
        let (cfg, r) = setup(1);
        let off = AstarsState::off(cfg.q_elements);
        let e = EffectiveChannels::build(&r, &off);
        for phi in 0..r.users() {
            match r.sides[phi] {
                Side::Reflection => assert_eq!(e.h[phi], r.h_direct[phi]),
                Side::Transmission => assert!(e.h[phi].iter().all(|z| z.norm() == 0.0)),
            }
        }
    }

    #[test]
    fn transmission_user_without_bs_link_is_zero() {
        let (cfg, mut r) = setup(2);
        r.h_sr.fill(C64::new(0.0, 0.0));
        let s = AstarsState::for_config(&cfg, &phases(6, 1), &phases(6, 2)).unwrap();
        let h = effective_channel(&r, &s, 4);
        assert!(h.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let (cfg, r) = setup(3);
        let s = AstarsState::for_config(&cfg, &phases(6, 3), &phases(6, 4)).unwrap();
        for phi in 0..r.users() {
            let theta: Vec<C64> = match r.sides[phi] {
                Side::Reflection => s.theta_n.iter().map(|&p| C64::from_polar((5.0f64 * 0.7).sqrt(), p)).collect(),
                Side::Transmission => s.theta_m.iter().map(|&p| C64::from_polar((5.0f64 * 0.3).sqrt(), p)).collect(),
            };
            let got = effective_channel(&r, &s, phi);
            for j in 0..cfg.j_antennas {
                let mut acc = if r.sides[phi] == Side::Reflection {
                    r.h_direct[phi][j]
                } else {
                    C64::new(0.0, 0.0)
                };
                for q in 0..cfg.q_elements {
                    for k in 0..cfg.q_elements {
                        let diag = if q == k { theta[q] } else { C64::new(0.0, 0.0) };
                        acc += r.h_sr[(j, q)] * diag * r.h_r[phi][k];
                    }
                }
                assert!((acc - got[j]).norm() <= 1e-12 * acc.norm().max(1e-30));
            }
            let via_cascade = r.direct(phi) + r.cascade(phi) * s.coeff(r.sides[phi]);
            assert!((via_cascade - &got).norm() <= 1e-12 * got.norm());
        }
    }

    #[test]
    fn dual_ris_is_passive_and_split() {
        let s = AstarsState::dual_ris(&phases(5, 1), &phases(5, 2)).unwrap();
        assert_eq!(s.amp_n, vec![1.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.amp_m, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(s.coeff_n().iter().chain(s.coeff_m().iter()).all(|z| z.norm() <= 1.0 + 1e-15));
    }

    #[test]
    fn csv_dump_has_every_entry() {
        let (cfg, r) = setup(4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ch.csv");
        r.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let rows = text.lines().count() - 1;
        let (j, q, u) = (cfg.j_antennas, cfg.q_elements, r.users());
        assert_eq!(rows, j * q + u * (j + q));
    }

    proptest! {
        #[test]
        fn gauge_rotation_preserves_norm(seed in 0u64..200, psi in 0.0f64..TAU) {
            let (cfg, r) = setup(seed);
            let tm = phases(cfg.q_elements, seed);
            let s = AstarsState::for_config(&cfg, &phases(cfg.q_elements, seed + 1), &tm).unwrap();
            let rot: Vec<f64> = tm.iter().map(|p| p + psi).collect();
            let s2 = s.with_phases(&s.theta_n, &rot).unwrap();
            let mut r2 = r.clone();
            let phi = r.users() - 1;
            r2.h_r[phi] *= C64::from_polar(1.0, -psi);
            let a = effective_channel(&r, &s, phi).norm();
            let b = effective_channel(&r2, &s2, phi).norm();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-30));
        }

        #[test]
        fn lambda_scales_cascade_only(seed in 0u64..200, c in 0.1f64..50.0) {
            let (cfg, r) = setup(seed);
            let (tn, tm) = (phases(cfg.q_elements, seed), phases(cfg.q_elements, seed + 7));
            let s1 = AstarsState::stars(&tn, &tm, 2.0, 0.7, 0.3).unwrap();
            let s2 = AstarsState::stars(&tn, &tm, 2.0 * c, 0.7, 0.3).unwrap();
            for phi in 0..r.users() {
                let d = r.direct(phi);
                let e2 = effective_channel(&r, &s2, phi);
                let c1 = effective_channel(&r, &s1, phi) - &d;
                let c2 = &e2 - &d;
                // Rounding is relative to the larger operand of the subtraction.
                let scale = e2.norm() + d.norm();
                prop_assert!((c2 - c1 * C64::from(c.sqrt())).norm() <= 1e-12 * scale.max(1e-30));
            }
        }
    }
}
