//! Multiplier subproblem on the weighted simplex {ζ ≥ 0, Σ K_φ² ζ_φ = 1}.
//!
//! With ξ_φ = K_φ² ζ_φ the feasible set becomes the standard simplex and the
//! objective reads
//! h(ξ) = 2‖Σ ξ b̃‖ + 2Σ_q aₙ_q|(Σ ξ c̃)_q| + 2Σ_q aₘ_q|(Σ ξ d̃)_q| − Σ ξ ã,
//! where x̃ = x/K² and aₙ, aₘ are the per-element moduli. h is convex and
//! solved by restarted, normalized projected subgradient descent, followed by
//! a backtracking projected-gradient polish. h is differentiable at its
//! minimizer in the generic case, and the primal point recovered from ξ is
//! only as balanced as ξ is accurate, hence the polish.

use nalgebra::{DMatrix, DVector};

use super::SurrogateCoeffs;
use crate::error::{Error, Result};
use crate::C64;

/// Coefficients divided by K², ready for the ξ parametrization.
#[derive(Debug, Clone)]
pub struct ZetaProblem {
    pub a: Vec<f64>,
    pub b: Vec<DVector<C64>>,
    pub c: Vec<DVector<C64>>,
    pub d: Vec<DVector<C64>>,
    pub amp_n: Vec<f64>,
    pub amp_m: Vec<f64>,
}

impl ZetaProblem {
    pub fn new(co: &SurrogateCoeffs, k2: &[f64], amp_n: &[f64], amp_m: &[f64]) -> Self {
        let div = |v: &[DVector<C64>]| -> Vec<DVector<C64>> {
            v.iter().zip(k2).map(|(x, k)| x / C64::from(*k)).collect()
        };
        Self {
            a: co.a.iter().zip(k2).map(|(a, k)| a / k).collect(),
            b: div(&co.b),
            c: div(&co.c),
            d: div(&co.d),
            amp_n: amp_n.to_vec(),
            amp_m: amp_m.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    fn combine(v: &[DVector<C64>], xi: &[f64]) -> DVector<C64> {
        let mut out = DVector::zeros(v[0].len());
        for (x, w) in v.iter().zip(xi) {
            if *w != 0.0 {
                out.axpy(C64::from(*w), x, C64::from(1.0));
            }
        }
        out
    }

    fn l1(s: &DVector<C64>, amp: &[f64]) -> f64 {
        s.iter().zip(amp).map(|(z, a)| a * z.norm()).sum()
    }

    /// h(ξ).
    pub fn value(&self, xi: &[f64]) -> f64 {
        let bb = Self::combine(&self.b, xi);
        let cc = Self::combine(&self.c, xi);
        let dd = Self::combine(&self.d, xi);
        let lin: f64 = self.a.iter().zip(xi).map(|(a, x)| a * x).sum();
        2.0 * bb.norm() + 2.0 * Self::l1(&cc, &self.amp_n) + 2.0 * Self::l1(&dd, &self.amp_m) - lin
    }

    /// h at the vertex e_φ.
    fn vertex_value(&self, phi: usize) -> f64 {
        2.0 * self.b[phi].norm()
            + 2.0 * Self::l1(&self.c[phi], &self.amp_n)
            + 2.0 * Self::l1(&self.d[phi], &self.amp_m)
            - self.a[phi]
    }

    /// Hessian of h at ξ where it exists (terms at a kink are skipped).
    pub fn hessian(&self, xi: &[f64]) -> DMatrix<f64> {
        let n = self.len();
        let mut h = DMatrix::zeros(n, n);
        // Adds w·∇²|Σ ξ_φ col_φ| for the complex columns given by `get`.
        let mut add = |w: f64, get: &dyn Fn(usize) -> DVector<C64>| {
            let cols: Vec<DVector<C64>> = (0..n).map(get).collect();
            let mut s = DVector::<C64>::zeros(cols[0].len());
            for (c, x) in cols.iter().zip(xi) {
                s.axpy(C64::from(*x), c, C64::from(1.0));
            }
            let ns = s.norm();
            if !(ns > 0.0) || w == 0.0 {
                return;
            }
            let gr: Vec<f64> = cols.iter().map(|c| c.dotc(&s).re / ns).collect();
            for a in 0..n {
                for b in a..n {
                    let v = w * (cols[a].dotc(&cols[b]).re - gr[a] * gr[b]) / ns;
                    h[(a, b)] += v;
                    if a != b {
                        h[(b, a)] += v;
                    }
                }
            }
        };
        add(2.0, &|p| self.b[p].clone());
        for (q, amp) in self.amp_n.iter().enumerate() {
            add(2.0 * amp, &|p| DVector::from_element(1, self.c[p][q]));
        }
        for (q, amp) in self.amp_m.iter().enumerate() {
            add(2.0 * amp, &|p| DVector::from_element(1, self.d[p][q]));
        }
        h
    }

    /// A subgradient of h at ξ.
    pub fn subgradient(&self, xi: &[f64]) -> Vec<f64> {
        let bb = Self::combine(&self.b, xi);
        let cc = Self::combine(&self.c, xi);
        let dd = Self::combine(&self.d, xi);
        let nb = bb.norm();
        let unit = |s: &DVector<C64>, amp: &[f64]| -> DVector<C64> {
            DVector::from_iterator(
                s.len(),
                s.iter().zip(amp).map(|(z, a)| {
                    let n = z.norm();
                    if n > 0.0 {
                        z / n * *a
                    } else {
                        C64::new(0.0, 0.0)
                    }
                }),
            )
        };
        let (uc, ud) = (unit(&cc, &self.amp_n), unit(&dd, &self.amp_m));
        (0..self.len())
            .map(|phi| {
                let gb = if nb > 0.0 { self.b[phi].dotc(&bb).re / nb } else { 0.0 };
                2.0 * gb + 2.0 * self.c[phi].dotc(&uc).re + 2.0 * self.d[phi].dotc(&ud).re
                    - self.a[phi]
            })
            .collect()
    }
}

/// Euclidean projection onto {x ≥ 0, Σx = 1} by the sorted-threshold rule.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        css += uj;
        let t = (css - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    let mut x: Vec<f64> = v.iter().map(|vi| (vi - theta).max(0.0)).collect();
    // Absorb rounding so the sum is 1 to machine precision.
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        x.iter_mut().for_each(|xi| *xi /= s);
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZetaOptions {
    pub iters: usize,
    pub stages: usize,
    /// Initial step length (the simplex has diameter √2).
    pub step0: f64,
}

impl Default for ZetaOptions {
    fn default() -> Self {
        Self {
            iters: 300,
            stages: 5,
            step0: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZetaSolution {
    /// ζ_φ = ξ_φ / K_φ².
    pub zeta: Vec<f64>,
    pub xi: Vec<f64>,
    pub value: f64,
}

/// Active-set Newton on the simplex, started from `x`. Falls back to a
/// projected-gradient step when the reduced system is singular.
fn polish(prob: &ZetaProblem, x: &mut Vec<f64>, hx: &mut f64, iters: usize) {
    let n = x.len();
    let mut admitted: Option<usize> = None;
    for _ in 0..iters {
        let active: Vec<bool> = (0..n).map(|i| x[i] > 0.0 || admitted == Some(i)).collect();
        let g = prob.subgradient(x);
        let idx: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
        let lam = idx.iter().map(|&i| g[i]).sum::<f64>() / idx.len() as f64;
        let dir = newton_direction(prob, x, &g, &idx);
        let mut moved = false;
        if let Some(d) = dir {
            // Largest feasible step; the blocking coordinate leaves the set.
            let mut t_max = f64::INFINITY;
            let mut block = None;
            for (i, di) in d.iter().enumerate() {
                if *di < 0.0 && x[i] / -di < t_max {
                    t_max = x[i] / -di;
                    block = Some(i);
                }
            }
            let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            let mut t = t_max.min(1.0);
            while slope < 0.0 && t > 1e-12 {
                let mut y: Vec<f64> = x.iter().zip(&d).map(|(a, b)| (a + t * b).max(0.0)).collect();
                if t == t_max {
                    if let Some(b) = block {
                        y[b] = 0.0;
                    }
                }
                let sum: f64 = y.iter().sum();
                y.iter_mut().for_each(|v| *v /= sum);
                let hy = prob.value(&y);
                if hy <= *hx + 1e-4 * t * slope {
                    moved = hy < *hx;
                    *x = y;
                    *hx = hy;
                    break;
                }
                t *= 0.5;
            }
        }
        if !moved && !pg_step(prob, x, hx, &g) {
            // Stationary on the current face: admit the worst KKT violator.
            let cand = (0..n)
                .filter(|&i| !active[i] && g[i] < lam - 1e-12 * lam.abs().max(1.0))
                .min_by(|&a, &b| g[a].total_cmp(&g[b]));
            match cand {
                Some(i) => admitted = Some(i),
                None => return,
            }
        } else {
            admitted = None;
        }
    }
}

/// Newton direction restricted to `idx` with Σd = 0, equilibrated by the
/// Hessian diagonal.
fn newton_direction(prob: &ZetaProblem, x: &[f64], g: &[f64], idx: &[usize]) -> Option<Vec<f64>> {
    let m = idx.len();
    if m < 2 {
        return None;
    }
    let h = prob.hessian(x);
    let scale: Vec<f64> = idx.iter().map(|&i| 1.0 / h[(i, i)].max(1e-300).sqrt()).collect();
    let mut kkt = DMatrix::<f64>::zeros(m + 1, m + 1);
    let mut rhs = DVector::<f64>::zeros(m + 1);
    let mut trace = 0.0;
    for a in 0..m {
        for b in 0..m {
            kkt[(a, b)] = h[(idx[a], idx[b])] * scale[a] * scale[b];
        }
        trace += kkt[(a, a)];
        kkt[(a, m)] = scale[a];
        kkt[(m, a)] = scale[a];
        rhs[a] = -g[idx[a]] * scale[a];
    }
    for a in 0..m {
        kkt[(a, a)] += 1e-12 * trace / m as f64;
    }
    let sol = kkt.lu().solve(&rhs)?;
    let mut d = vec![0.0; x.len()];
    for a in 0..m {
        d[idx[a]] = sol[a] * scale[a];
    }
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// One backtracking projected-gradient step; false if no decrease.
fn pg_step(prob: &ZetaProblem, x: &mut Vec<f64>, hx: &mut f64, g: &[f64]) -> bool {
    let mut step = 1.0;
    while step > 1e-20 {
        let y = project_simplex(&x.iter().zip(g).map(|(a, b)| a - step * b).collect::<Vec<_>>());
        let hy = prob.value(&y);
        if hy < *hx {
            *x = y;
            *hx = hy;
            return true;
        }
        step *= 0.25;
    }
    false
}

/// Minimize h over the simplex. `warm` (a ξ vector) seeds the search.
pub fn solve_zeta(
    prob: &ZetaProblem,
    k2: &[f64],
    opts: &ZetaOptions,
    warm: Option<&[f64]>,
) -> Result<ZetaSolution> {
    let phi = prob.len();
    if phi == 0 {
        return Err(Error::Dimension("empty multiplier problem".into()));
    }
    if prob.a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite surrogate coefficients".into()));
    }
    let mut best = match warm {
        Some(w) if w.len() == phi => project_simplex(w),
        _ => vec![1.0 / phi as f64; phi],
    };
    let mut best_val = prob.value(&best);
    for v in 0..phi {
        let hv = prob.vertex_value(v);
        if hv < best_val {
            best_val = hv;
            best = vec![0.0; phi];
            best[v] = 1.0;
        }
    }
    if phi > 1 {
        for s in 0..opts.stages {
            let mut x = best.clone();
            let step = opts.step0 * 0.5f64.powi(s as i32);
            for k in 1..=opts.iters {
                let g = prob.subgradient(&x);
                let mean = g.iter().sum::<f64>() / phi as f64;
                let gn = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
                if !(gn > 0.0) {
                    break;
                }
                let a = step / (k as f64).sqrt() / gn;
                let y: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - a * gi).collect();
                x = project_simplex(&y);
                let hx = prob.value(&x);
                if hx < best_val {
                    best_val = hx;
                    best.clone_from(&x);
                }
            }
        }
        polish(prob, &mut best, &mut best_val, opts.iters);
    }
    let resid = (best.iter().sum::<f64>() - 1.0).abs();
    if resid > 1e-10 || best.iter().any(|v| *v < 0.0) {
        return Err(Error::Config(format!("multiplier infeasible (residual {resid:e})")));
    }
    Ok(ZetaSolution {
        zeta: best.iter().zip(k2).map(|(x, k)| x / k).collect(),
        xi: best,
        value: best_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{cn, stream};
    use proptest::prelude::*;
    use rand::Rng;

    pub(crate) fn random_problem(seed: u64, phi: usize, j: usize, q: usize) -> ZetaProblem {
        let mut rng = stream(seed, &[]);
        let v = |n: usize, rng: &mut crate::rng::StreamRng| DVector::from_fn(n, |_, _| cn(rng, 1.0));
        ZetaProblem {
            a: (0..phi).map(|_| 3.0 + 4.0 * rng.random::<f64>()).collect(),
            b: (0..phi).map(|_| v(j, &mut rng)).collect(),
            c: (0..phi).map(|_| v(q, &mut rng)).collect(),
            d: (0..phi).map(|_| v(q, &mut rng)).collect(),
            amp_n: vec![1.2; q],
            amp_m: vec![0.7; q],
        }
    }

    #[test]
    fn single_multiplier_is_forced() {
        let p = random_problem(1, 1, 3, 4);
        let s = solve_zeta(&p, &[49.0], &ZetaOptions::default(), None).unwrap();
        assert_eq!(s.xi, vec![1.0]);
        assert!((s.zeta[0] - 1.0 / 49.0).abs() < 1e-18);
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[1.0, 1.0]);
        assert!((p[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_line_search_on_two_multipliers() {
        for seed in 0..10 {
            let p = random_problem(seed, 2, 3, 5);
            let s = solve_zeta(&p, &[100.0, 400.0], &ZetaOptions { iters: 2000, ..Default::default() }, None)
                .unwrap();
            let n = 200_000;
            let oracle = (0..=n)
                .map(|i| {
                    let t = i as f64 / n as f64;
                    p.value(&[t, 1.0 - t])
                })
                .fold(f64::INFINITY, f64::min);
            assert!(s.value - oracle <= 1e-4, "seed {seed}: {} vs {oracle}", s.value);
        }
    }

    #[test]
    fn subgradient_matches_finite_difference_where_smooth() {
        let p = random_problem(3, 4, 3, 5);
        let x = [0.1, 0.2, 0.3, 0.4];
        let g = p.subgradient(&x);
        let eps = 1e-6;
        for i in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (p.value(&xp) - p.value(&xm)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-5, "{fd} vs {}", g[i]);
        }
    }

    proptest! {
        #[test]
        fn projection_contract(v in proptest::collection::vec(-5.0f64..5.0, 1..30)) {
            let x = project_simplex(&v);
            prop_assert!((x.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(x.iter().all(|&xi| xi >= 0.0));
            // Optimality: x is closer to v than random feasible points.
            let d0: f64 = x.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
            let n = v.len();
            let uni = vec![1.0 / n as f64; n];
            let d1: f64 = uni.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!(d0 <= d1 + 1e-12);
        }

        #[test]
        fn solution_is_feasible(seed in 0u64..100, phi in 1usize..12) {
            let p = random_problem(seed, phi, 2, 3);
            let k2: Vec<f64> = (0..phi).map(|i| ((i + 1) * 100) as f64).collect();
            let s = solve_zeta(&p, &k2, &ZetaOptions { iters: 50, stages: 2, step0: 0.5 }, None).unwrap();
            let r: f64 = s.zeta.iter().zip(&k2).map(|(z, k)| z * k).sum();
            prop_assert!((r - 1.0).abs() <= 1e-10);
            prop_assert!(s.zeta.iter().all(|&z| z >= -1e-12));
        }
    }
}
