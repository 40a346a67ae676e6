//! Federated gradient descent with pluggable aggregation.

use rayon::prelude::*;

use super::data::LocalDataset;
use super::model::ModelKind;
use crate::error::{Error, Result};
use crate::ota::{ota_round, weighted_sum, OtaLink};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Descent {
    Batch,
    /// Each round, every user sends `per_round` batch gradients, one OTA
    /// transmission each; the BS averages the estimates.
    MiniBatch { batch_size: usize, per_round: usize },
}

/// What the BS obtains from one aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct AggOutput {
    pub r_hat: Vec<f64>,
    pub e1_norm2: f64,
    pub e2_norm2: f64,
    pub mu: f64,
    pub closed_form: f64,
}

pub trait Aggregator {
    /// Turn local gradients with weights `k` into an estimate of Σ k_φ g_φ.
    fn aggregate(&mut self, round: usize, grads: &[Vec<f64>], k: &[f64]) -> Result<AggOutput>;
}

/// Exact sum, no channel.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdealAggregator;

impl Aggregator for IdealAggregator {
    fn aggregate(&mut self, _round: usize, grads: &[Vec<f64>], k: &[f64]) -> Result<AggOutput> {
        Ok(AggOutput {
            r_hat: weighted_sum(grads, k),
            e1_norm2: 0.0,
            e2_norm2: 0.0,
            mu: f64::NAN,
            closed_form: 0.0,
        })
    }
}

pub enum LinkSource<'a> {
    Fixed(OtaLink),
    /// Fresh link per round (channel redrawn).
    PerRound(Box<dyn FnMut(usize) -> Result<OtaLink> + Send + 'a>),
}

/// Aggregation through the simulated uplink.
pub struct OtaAggregator<'a> {
    pub links: LinkSource<'a>,
    pub rng: StreamRng,
}

impl Aggregator for OtaAggregator<'_> {
    fn aggregate(&mut self, round: usize, grads: &[Vec<f64>], k: &[f64]) -> Result<AggOutput> {
        let fresh;
        let link = match &mut self.links {
            LinkSource::Fixed(l) => &*l,
            LinkSource::PerRound(make) => {
                fresh = make(round)?;
                &fresh
            }
        };
        let out = ota_round(link, grads, k, None, &mut self.rng)?;
        Ok(AggOutput {
            r_hat: out.r_hat,
            e1_norm2: out.e1_norm2,
            e2_norm2: out.e2_norm2,
            mu: out.mu,
            closed_form: out.closed_form,
        })
    }
}

/// w' = w − (η/ΣK)·r̂.
pub fn global_update(w: &[f64], r_hat: &[f64], eta: f64, sum_k: f64) -> Vec<f64> {
    let s = eta / sum_k;
    w.iter().zip(r_hat).map(|(a, r)| a - s * r).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub round: usize,
    pub loss: f64,
    pub test_acc: f64,
    pub grad_norm2: f64,
    pub e1_norm2: f64,
    pub e2_norm2: f64,
    pub mu: f64,
    pub closed_form: f64,
    pub bound_rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// One row per round, describing w_t before its update.
    pub rows: Vec<HistoryRow>,
    pub final_w: Vec<f64>,
    pub final_loss: f64,
    pub final_acc: f64,
}

pub struct TrainSetup<'a> {
    pub model: ModelKind,
    pub w0: Vec<f64>,
    pub locals: &'a [LocalDataset],
    pub test: &'a LocalDataset,
    pub descent: Descent,
    pub eta: f64,
    pub rounds: usize,
}

/// Per-user (loss, gradient) at `w`.
pub fn local_grads(model: &ModelKind, w: &[f64], data: &[LocalDataset]) -> Vec<(f64, Vec<f64>)> {
    data.par_iter().map(|d| model.loss_grad(w, d)).collect()
}

/// Global loss and gradient: K-weighted means of the local ones.
pub fn global_loss_grad(model: &ModelKind, w: &[f64], data: &[LocalDataset]) -> (f64, Vec<f64>) {
    let k: Vec<f64> = data.iter().map(|d| d.len() as f64).collect();
    let sum_k: f64 = k.iter().sum();
    let lg = local_grads(model, w, data);
    let loss = lg.iter().zip(&k).map(|((l, _), kk)| l * kk).sum::<f64>() / sum_k;
    let grads: Vec<Vec<f64>> = lg.into_iter().map(|(_, g)| g).collect();
    let g = weighted_sum(&grads, &k).into_iter().map(|v| v / sum_k).collect();
    (loss, g)
}

pub fn train(setup: &TrainSetup<'_>, agg: &mut dyn Aggregator) -> Result<TrainHistory> {
    let k: Vec<f64> = setup.locals.iter().map(|d| d.len() as f64).collect();
    let sum_k: f64 = k.iter().sum();
    let batches: Vec<Vec<LocalDataset>> = match setup.descent {
        Descent::Batch => Vec::new(),
        Descent::MiniBatch { batch_size, .. } => {
            setup.locals.iter().map(|d| d.batches(batch_size)).collect()
        }
    };
    let mut w = setup.w0.clone();
    let mut rows = Vec::with_capacity(setup.rounds);
    for t in 0..setup.rounds {
        let lg = local_grads(&setup.model, &w, setup.locals);
        let loss = lg.iter().zip(&k).map(|((l, _), kk)| l * kk).sum::<f64>() / sum_k;
        if !loss.is_finite() {
            return Err(Error::NonFinite { round: t });
        }
        let full: Vec<Vec<f64>> = lg.into_iter().map(|(_, g)| g).collect();
        let grad_norm2 = weighted_sum(&full, &k)
            .iter()
            .map(|v| (v / sum_k).powi(2))
            .sum::<f64>();
        let test_acc = setup.model.accuracy(&w, setup.test);

        let (r_hat, e1, e2, mu, cf) = match setup.descent {
            Descent::Batch => {
                let o = agg.aggregate(t, &full, &k)?;
                (o.r_hat, o.e1_norm2, o.e2_norm2, o.mu, o.closed_form)
            }
            Descent::MiniBatch { per_round, .. } => {
                let per_round = per_round.max(1);
                let mut acc = vec![0.0; w.len()];
                let (mut e1, mut e2, mut mu, mut cf) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..per_round {
                    let grads: Vec<Vec<f64>> = batches
                        .par_iter()
                        .map(|b| setup.model.loss_grad(&w, &b[(t * per_round + i) % b.len()]).1)
                        .collect();
                    let o = agg.aggregate(t * per_round + i, &grads, &k)?;
                    acc.iter_mut().zip(&o.r_hat).for_each(|(a, r)| *a += r);
                    e1 += o.e1_norm2;
                    e2 += o.e2_norm2;
                    mu += o.mu;
                    cf += o.closed_form;
                }
                let n = per_round as f64;
                acc.iter_mut().for_each(|a| *a /= n);
                (acc, e1 / n, e2 / n, mu / n, cf / n)
            }
        };
        rows.push(HistoryRow {
            round: t,
            loss,
            test_acc,
            grad_norm2,
            e1_norm2: e1,
            e2_norm2: e2,
            mu,
            closed_form: cf,
            bound_rhs: f64::NAN,
        });
        w = global_update(&w, &r_hat, setup.eta, sum_k);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { round: t });
        }
    }
    let (final_loss, _) = global_loss_grad(&setup.model, &w, setup.locals);
    let final_acc = setup.model.accuracy(&w, setup.test);
    Ok(TrainHistory {
        rows,
        final_w: w,
        final_loss,
        final_acc,
    })
}
