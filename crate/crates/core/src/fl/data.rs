//! Sample pools, MNIST IDX ingestion, synthetic blobs and user partitions.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::normal;

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub classes: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

/// A user's local samples as a design matrix with a trailing bias column.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    pub x: DMatrix<f64>,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl LocalDataset {
    pub fn from_indices(pool: &Dataset, idx: &[usize]) -> Self {
        let d = pool.dim;
        let x = DMatrix::from_fn(idx.len(), d + 1, |r, c| {
            if c == d {
                1.0
            } else {
                pool.x[idx[r] * d + c]
            }
        });
        Self {
            x,
            y: idx.iter().map(|&i| pool.y[i]).collect(),
            classes: pool.classes,
        }
    }

    pub fn whole(pool: &Dataset) -> Self {
        Self::from_indices(pool, &(0..pool.len()).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Feature dimension without the bias column.
    pub fn dim(&self) -> usize {
        self.x.ncols() - 1
    }

    /// Contiguous batches of at most `size` rows.
    pub fn batches(&self, size: usize) -> Vec<LocalDataset> {
        let size = size.max(1);
        (0..self.len())
            .step_by(size)
            .map(|s| {
                let n = size.min(self.len() - s);
                LocalDataset {
                    x: self.x.rows(s, n).into_owned(),
                    y: self.y[s..s + n].to_vec(),
                    classes: self.classes,
                }
            })
            .collect()
    }

    /// Stack several local datasets into one.
    pub fn concat(parts: &[LocalDataset]) -> LocalDataset {
        let n: usize = parts.iter().map(LocalDataset::len).sum();
        let cols = parts.first().map_or(1, |p| p.x.ncols());
        let mut x = DMatrix::zeros(n, cols);
        let mut y = Vec::with_capacity(n);
        let mut r = 0;
        for p in parts {
            x.rows_mut(r, p.len()).copy_from(&p.x);
            y.extend_from_slice(&p.y);
            r += p.len();
        }
        LocalDataset {
            x,
            y,
            classes: parts.first().map_or(0, |p| p.classes),
        }
    }
}

/// Gaussian blobs with unit covariance. Class means sit `margin` apart along
/// coordinate axes (random unit directions when `dim < classes`).
pub fn gen_synthetic<R: Rng + ?Sized>(
    classes: usize,
    dim: usize,
    per_class: usize,
    margin: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config("synthetic data needs at least 2 classes".into()));
    }
    if per_class == 0 || dim == 0 {
        return Err(Error::Config("empty pool: per_class and dim must be positive".into()));
    }
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            if dim >= classes {
                (0..dim)
                    .map(|i| if i == c { margin / std::f64::consts::SQRT_2 } else { 0.0 })
                    .collect()
            } else {
                let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                v.iter().map(|a| a / n * margin / 2.0).collect()
            }
        })
        .collect();
    let mut x = Vec::with_capacity(classes * per_class * dim);
    let mut y = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (c, m) in means.iter().enumerate() {
            x.extend(m.iter().map(|mu| mu + normal(rng)));
            y.push(c);
        }
    }
    Ok(Dataset { dim, classes, x, y })
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Data {
                path: path.into(),
                msg: format!("gzip: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]])
}

fn data_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Data {
        path: path.into(),
        msg: msg.into(),
    }
}

/// Read an IDX image/label pair (optionally gzipped). Pixels are scaled to
/// [0, 1]; `limit` keeps the first samples only.
pub fn load_mnist_idx(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Dataset> {
    let ib = read_maybe_gz(images)?;
    let lb = read_maybe_gz(labels)?;
    if ib.len() < 16 {
        return Err(data_err(images, "truncated header"));
    }
    if be_u32(&ib, 0) != 0x0000_0803 {
        return Err(data_err(images, format!("bad magic {:#010x}", be_u32(&ib, 0))));
    }
    if lb.len() < 8 {
        return Err(data_err(labels, "truncated header"));
    }
    if be_u32(&lb, 0) != 0x0000_0801 {
        return Err(data_err(labels, format!("bad magic {:#010x}", be_u32(&lb, 0))));
    }
    let n = be_u32(&ib, 4) as usize;
    let (rows, cols) = (be_u32(&ib, 8) as usize, be_u32(&ib, 12) as usize);
    let nl = be_u32(&lb, 4) as usize;
    if n != nl {
        return Err(data_err(
            labels,
            format!("{nl} labels but {n} images in {}", images.display()),
        ));
    }
    let dim = rows * cols;
    if ib.len() < 16 + n * dim {
        return Err(data_err(images, "truncated pixel data"));
    }
    if lb.len() < 8 + n {
        return Err(data_err(labels, "truncated label data"));
    }
    let take = limit.map_or(n, |l| l.min(n));
    let x = ib[16..16 + take * dim].iter().map(|&p| p as f64 / 255.0).collect();
    let y: Vec<usize> = lb[8..8 + take].iter().map(|&l| l as usize).collect();
    let classes = y.iter().max().map_or(0, |m| m + 1).max(10);
    Ok(Dataset { dim, classes, x, y })
}

/// Header counts of an IDX image file: (count, rows, cols).
pub fn idx_image_header(images: &Path) -> Result<(usize, usize, usize)> {
    let ib = read_maybe_gz(images)?;
    if ib.len() < 16 || be_u32(&ib, 0) != 0x0000_0803 {
        return Err(data_err(images, "not an IDX image file"));
    }
    Ok((
        be_u32(&ib, 4) as usize,
        be_u32(&ib, 8) as usize,
        be_u32(&ib, 12) as usize,
    ))
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub locals: Vec<LocalDataset>,
    pub test: LocalDataset,
    /// Actual local sizes, used as aggregation weights.
    pub k: Vec<usize>,
}

/// Split `total` into integer parts proportional to `target`, each ≥ 1, by
/// largest remainder.
pub fn apportion(target: &[usize], total: usize) -> Result<Vec<usize>> {
    let phi = target.len();
    if total < phi {
        return Err(Error::Config(format!(
            "{total} training samples cannot cover {phi} users"
        )));
    }
    let sum: usize = target.iter().sum();
    if sum <= total {
        return Ok(target.to_vec());
    }
    // Reserve one sample per user, spread the rest proportionally.
    let spare = (total - phi) as f64;
    let quota: Vec<f64> = target.iter().map(|&t| spare * t as f64 / sum as f64).collect();
    let mut out: Vec<usize> = quota.iter().map(|q| 1 + q.floor() as usize).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..phi).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quota[a] - quota[a].floor(), quota[b] - quota[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    Ok(out)
}

/// Shuffle the pool, hold out `test_frac` for testing, then give each user a
/// disjoint slice sized by `target_k` (scaled down when the pool is smaller).
pub fn partition<R: Rng + ?Sized>(
    pool: &Dataset,
    target_k: &[usize],
    test_frac: f64,
    rng: &mut R,
) -> Result<Partition> {
    if pool.is_empty() {
        return Err(Error::Config("empty pool".into()));
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(rng);
    let n_test = ((pool.len() as f64) * test_frac).round() as usize;
    let (test_idx, train_idx) = idx.split_at(n_test.min(pool.len()));
    let k = apportion(target_k, train_idx.len())?;
    let mut locals = Vec::with_capacity(k.len());
    let mut at = 0;
    for &kk in &k {
        locals.push(LocalDataset::from_indices(pool, &train_idx[at..at + kk]));
        at += kk;
    }
    Ok(Partition {
        locals,
        test: LocalDataset::from_indices(pool, test_idx),
        k,
    })
}
