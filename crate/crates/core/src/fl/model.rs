//! Differentiable models. Parameters are flat `Vec<f64>`; matrices are
//! stored row-major inside them.

use nalgebra::DMatrix;
use rand::Rng;

use super::data::LocalDataset;
use crate::error::{Error, Result};
use crate::rng::normal;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    /// Multinomial logistic regression with ρ/2‖w‖² on all weights.
    LogReg { dim: usize, classes: usize, rho: f64 },
    /// One tanh hidden layer, softmax output, ρ/2‖w‖².
    TinyMlp { dim: usize, hidden: usize, classes: usize, rho: f64 },
    /// F(w) = ρ/2‖w‖², ignoring the data.
    Quadratic { dim: usize, rho: f64 },
}

/// A parameter vector together with its model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub w: Vec<f64>,
}

fn one_hot_residual(z: &mut DMatrix<f64>, y: &[usize]) -> f64 {
    // Turn logits into softmax minus one-hot in place; return summed CE.
    let mut ce = 0.0;
    for (r, &label) in y.iter().enumerate() {
        let mut row = z.row_mut(r);
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        ce += s.ln() - row[label].ln();
        row /= s;
        row[label] -= 1.0;
    }
    ce
}

fn flatten_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl ModelKind {
    pub fn num_params(&self) -> usize {
        match *self {
            ModelKind::LogReg { dim, classes, .. } => classes * (dim + 1),
            ModelKind::TinyMlp { dim, hidden, classes, .. } => {
                hidden * (dim + 1) + classes * (hidden + 1)
            }
            ModelKind::Quadratic { dim, .. } => dim,
        }
    }

    pub fn rho(&self) -> f64 {
        match *self {
            ModelKind::LogReg { rho, .. }
            | ModelKind::TinyMlp { rho, .. }
            | ModelKind::Quadratic { rho, .. } => rho,
        }
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self, ModelKind::TinyMlp { .. })
    }

    /// Zeros for convex models, small Gaussian weights for the MLP.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match *self {
            ModelKind::TinyMlp { dim, .. } => {
                let s = 1.0 / ((dim + 1) as f64).sqrt();
                (0..self.num_params()).map(|_| s * normal(rng)).collect()
            }
            _ => vec![0.0; self.num_params()],
        }
    }

    /// Mean loss over `data` plus regularizer, and its gradient.
    pub fn loss_grad(&self, w: &[f64], data: &LocalDataset) -> (f64, Vec<f64>) {
        let reg = 0.5 * self.rho() * w.iter().map(|v| v * v).sum::<f64>();
        match *self {
            ModelKind::Quadratic { rho, .. } => (reg, w.iter().map(|v| rho * v).collect()),
            ModelKind::LogReg { dim, classes, rho } => {
                let n = data.len() as f64;
                let wm = DMatrix::from_row_slice(classes, dim + 1, w);
                let mut z = &data.x * wm.transpose();
                let ce = one_hot_residual(&mut z, &data.y);
                let mut g = z.transpose() * &data.x;
                g /= n;
                g += &wm * rho;
                (ce / n + reg, flatten_row_major(&g))
            }
            ModelKind::TinyMlp { dim, hidden, classes, rho } => {
                let n = data.len() as f64;
                let split = hidden * (dim + 1);
                let w1 = DMatrix::from_row_slice(hidden, dim + 1, &w[..split]);
                let w2 = DMatrix::from_row_slice(classes, hidden + 1, &w[split..]);
                let a = (&data.x * w1.transpose()).map(f64::tanh);
                let a1 = a.clone().insert_column(hidden, 1.0);
                let mut z = &a1 * w2.transpose();
                let ce = one_hot_residual(&mut z, &data.y);
                z /= n;
                let mut g2 = z.transpose() * &a1;
                let da = &z * w2.columns(0, hidden);
                let dh = da.zip_map(&a, |d, av| d * (1.0 - av * av));
                let mut g1 = dh.transpose() * &data.x;
                g1 += &w1 * rho;
                g2 += &w2 * rho;
                let mut g = flatten_row_major(&g1);
                g.extend(flatten_row_major(&g2));
                (ce / n + reg, g)
            }
        }
    }

    pub fn loss(&self, w: &[f64], data: &LocalDataset) -> f64 {
        self.loss_grad(w, data).0
    }

    /// ‖∇f(w; x_k, y_k)‖² for every sample (regularizer included).
    pub fn per_sample_grad_norms2(&self, w: &[f64], data: &LocalDataset) -> Result<Vec<f64>> {
        match *self {
            ModelKind::LogReg { dim, classes, rho } => {
                let wm = DMatrix::from_row_slice(classes, dim + 1, w);
                let mut z = &data.x * wm.transpose();
                one_hot_residual(&mut z, &data.y);
                // ∇f_k = r_k x_kᵀ + ρW, so ‖∇f_k‖² = ‖r_k‖²‖x_k‖² + 2ρ r_kᵀWx_k + ρ²‖W‖².
                let wx = &data.x * wm.transpose();
                let w2 = wm.norm_squared();
                Ok((0..data.len())
                    .map(|k| {
                        let r = z.row(k);
                        let x2 = data.x.row(k).norm_squared();
                        r.norm_squared() * x2 + 2.0 * rho * r.dot(&wx.row(k)) + rho * rho * w2
                    })
                    .collect())
            }
            ModelKind::Quadratic { rho, .. } => {
                let v = rho * rho * w.iter().map(|x| x * x).sum::<f64>();
                Ok(vec![v; data.len()])
            }
            ModelKind::TinyMlp { .. } => Err(Error::Config("bounds require convex model".into())),
        }
    }

    /// Top-1 accuracy on `data`.
    pub fn accuracy(&self, w: &[f64], data: &LocalDataset) -> f64 {
        if data.is_empty() {
            return f64::NAN;
        }
        let z = match *self {
            ModelKind::LogReg { dim, classes, .. } => {
                &data.x * DMatrix::from_row_slice(classes, dim + 1, w).transpose()
            }
            ModelKind::TinyMlp { dim, hidden, classes, .. } => {
                let split = hidden * (dim + 1);
                let w1 = DMatrix::from_row_slice(hidden, dim + 1, &w[..split]);
                let w2 = DMatrix::from_row_slice(classes, hidden + 1, &w[split..]);
                let a1 = (&data.x * w1.transpose()).map(f64::tanh).insert_column(hidden, 1.0);
                a1 * w2.transpose()
            }
            ModelKind::Quadratic { .. } => return f64::NAN,
        };
        let hits = (0..data.len())
            .filter(|&r| z.row(r).transpose().argmax().0 == data.y[r])
            .count();
        hits as f64 / data.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::data::gen_synthetic;
    use crate::rng::stream;
    use nalgebra::SymmetricEigen;
    use rand::Rng;

    fn toy(seed: u64) -> LocalDataset {
        LocalDataset::whole(&gen_synthetic(3, 4, 8, 2.0, &mut stream(seed, &[])).unwrap())
    }

    fn fd_check(kind: ModelKind, data: &LocalDataset, seed: u64) {
        let mut rng = stream(seed, &[1]);
        let w: Vec<f64> = (0..kind.num_params()).map(|_| 0.3 * normal(&mut rng)).collect();
        let (_, g) = kind.loss_grad(&w, data);
        let eps = 1e-5;
        for d in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[d] += eps;
            wm[d] -= eps;
            let fd = (kind.loss(&wp, data) - kind.loss(&wm, data)) / (2.0 * eps);
            assert!((fd - g[d]).abs() < 1e-5, "coord {d}: fd {fd} vs {}", g[d]);
        }
    }

    #[test]
    fn logreg_finite_differences() {
        fd_check(ModelKind::LogReg { dim: 4, classes: 3, rho: 0.7 }, &toy(1), 1);
    }

    #[test]
    fn mlp_finite_differences() {
        fd_check(ModelKind::TinyMlp { dim: 4, hidden: 5, classes: 3, rho: 0.1 }, &toy(2), 2);
    }

    #[test]
    fn duplicated_data_same_gradient() {
        let kind = ModelKind::LogReg { dim: 4, classes: 3, rho: 1.0 };
        let half = toy(3);
        let both = LocalDataset::concat(&[half.clone(), half.clone()]);
        let w: Vec<f64> = (0..kind.num_params()).map(|i| (i as f64 * 0.37).sin()).collect();
        let (a, ga) = kind.loss_grad(&w, &half);
        let (b, gb) = kind.loss_grad(&w, &both);
        assert!((a - b).abs() < 1e-12);
        assert!(ga.iter().zip(&gb).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn unregularized_optimum_is_stationary() {
        // Two points, two classes, non-separable by label noise: the CE
        // minimizer is finite. Run Newton-free GD to convergence.
        let pool = crate::fl::Dataset {
            dim: 1,
            classes: 2,
            x: vec![-1.0, 1.0, 1.0, -1.0],
            y: vec![0, 1, 0, 1],
        };
        let data = LocalDataset::whole(&pool);
        let kind = ModelKind::LogReg { dim: 1, classes: 2, rho: 0.0 };
        let mut w = vec![0.1, -0.2, 0.3, 0.05];
        for _ in 0..20_000 {
            let (_, g) = kind.loss_grad(&w, &data);
            w.iter_mut().zip(&g).for_each(|(a, b)| *a -= 1.0 * b);
        }
        let g = kind.loss_grad(&w, &data).1;
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-6);
    }

    #[test]
    fn per_sample_norms_match_direct() {
        let kind = ModelKind::LogReg { dim: 4, classes: 3, rho: 0.5 };
        let data = toy(4);
        let mut rng = stream(4, &[]);
        let w: Vec<f64> = (0..kind.num_params()).map(|_| rng.random::<f64>() - 0.5).collect();
        let fast = kind.per_sample_grad_norms2(&w, &data).unwrap();
        for k in 0..data.len() {
            let one = LocalDataset {
                x: data.x.rows(k, 1).into_owned(),
                y: vec![data.y[k]],
                classes: 3,
            };
            let g = kind.loss_grad(&w, &one).1;
            let direct: f64 = g.iter().map(|v| v * v).sum();
            assert!((direct - fast[k]).abs() < 1e-10 * direct.max(1.0));
        }
    }

    #[test]
    fn logreg_hessian_at_least_rho() {
        let rho = 0.8;
        let kind = ModelKind::LogReg { dim: 2, classes: 3, rho };
        let data = LocalDataset::whole(&gen_synthetic(3, 2, 5, 1.0, &mut stream(5, &[])).unwrap());
        let n = kind.num_params();
        let mut rng = stream(5, &[1]);
        for _ in 0..5 {
            let w: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
            let eps = 1e-5;
            let mut h = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += eps;
                wm[j] -= eps;
                let (gp, gm) = (kind.loss_grad(&wp, &data).1, kind.loss_grad(&wm, &data).1);
                for i in 0..n {
                    h[(i, j)] = (gp[i] - gm[i]) / (2.0 * eps);
                }
            }
            let hs = (&h + h.transpose()) * 0.5;
            let min = SymmetricEigen::new(hs).eigenvalues.min();
            assert!(min >= rho - 1e-6, "{min}");
        }
    }

    #[test]
    fn quadratic_model() {
        let kind = ModelKind::Quadratic { dim: 3, rho: 1.0 };
        let data = toy(6);
        let (f, g) = kind.loss_grad(&[1.0, 2.0, 2.0], &data);
        assert_eq!(f, 4.5);
        assert_eq!(g, vec![1.0, 2.0, 2.0]);
    }
}
