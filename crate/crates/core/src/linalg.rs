//! Dense kernels used by the acquisition strategies: PCA subspaces and
//! reconstruction error, cosine similarity, nearest-center distances.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{invalid, Error, Result};

/// Principal subspace of one sample cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    mean: Array1<f64>,
    /// `d x q`, orthonormal columns.
    basis: Array2<f64>,
    /// Fraction of total variance captured by `basis`.
    explained: f64,
    zero_variance: bool,
}

impl Pca {
    pub fn mean(&self) -> ArrayView1<'_, f64> {
        self.mean.view()
    }

    pub fn basis(&self) -> ArrayView2<'_, f64> {
        self.basis.view()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn components(&self) -> usize {
        self.basis.ncols()
    }

    pub fn explained_variance(&self) -> f64 {
        self.explained
    }

    /// Set when every input row was identical; the basis is then an
    /// arbitrary unit vector.
    pub fn is_zero_variance(&self) -> bool {
        self.zero_variance
    }

    /// `mu + B B^T (z - mu)`: forward transform followed by its pseudo-inverse.
    pub fn reconstruct(&self, z: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.check_dim(z.len())?;
        let centered = &z - &self.mean;
        let coords = self.basis.t().dot(&centered);
        Ok(&self.mean + &self.basis.dot(&coords))
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

/// Fits the mean and the smallest principal basis whose cumulative explained
/// variance reaches `variance_fraction`. The component count is capped at
/// `d - 1` (for `d > 1`) so the reconstruction error does not vanish
/// identically.
pub fn pca_fit(x: ArrayView2<'_, f64>, variance_fraction: f64) -> Result<Pca> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(invalid(format!("PCA needs at least 2 samples, got {n}")));
    }
    if d == 0 {
        return Err(invalid("PCA needs dimension >= 1"));
    }
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(invalid(format!("variance fraction {variance_fraction} outside (0, 1]")));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;

    let scale = 1.0 + mean.dot(&mean);
    let total: f64 = cov.diag().sum();
    let max_q = if d > 1 { d - 1 } else { 1 };

    if total <= 1e-24 * scale {
        let mut basis = Array2::zeros((d, 1));
        basis[[0, 0]] = 1.0;
        return Ok(Pca {
            mean,
            basis,
            explained: 1.0,
            zero_variance: true,
        });
    }

    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let sum: f64 = values.iter().sum();

    let mut q = 0;
    let mut acc = 0.0;
    while q < d {
        acc += values[q];
        q += 1;
        if acc >= variance_fraction * sum {
            break;
        }
    }
    let q = q.clamp(1, max_q);
    let explained = values[..q].iter().sum::<f64>() / sum;

    let basis = Array2::from_shape_fn((d, q), |(i, c)| eig.eigenvectors[(i, order[c])]);
    Ok(Pca {
        mean,
        basis,
        explained,
        zero_variance: false,
    })
}

/// Feature reconstruction error `||(z - mu) - B B^T (z - mu)||_2`.
pub fn fre(pca: &Pca, z: ArrayView1<'_, f64>) -> Result<f64> {
    pca.check_dim(z.len())?;
    let centered = &z - &pca.mean;
    let coords = pca.basis.t().dot(&centered);
    let residual = centered - pca.basis.dot(&coords);
    Ok(residual.dot(&residual).sqrt())
}

/// Row-wise [`fre`] for an `n x d` batch.
pub fn fre_batch(pca: &Pca, z: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    pca.check_dim(z.ncols())?;
    let centered = &z - &pca.mean;
    let projected = centered.dot(&pca.basis).dot(&pca.basis.t());
    let residual = centered - projected;
    Ok(residual.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect())
}

/// One [`Pca`] per class; classes with fewer than two samples have none.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassConditionalPca {
    entries: Vec<Option<Pca>>,
    variance_fraction: f64,
}

impl ClassConditionalPca {
    pub fn fit(
        features: ArrayView2<'_, f64>,
        labels: &[usize],
        num_classes: usize,
        variance_fraction: f64,
    ) -> Result<Self> {
        if labels.len() != features.nrows() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(invalid(format!("label {l} >= num_classes {num_classes}")));
            }
            members[l].push(i);
        }
        let entries = members
            .iter()
            .map(|idx| {
                if idx.len() < 2 {
                    Ok(None)
                } else {
                    pca_fit(features.select(Axis(0), idx).view(), variance_fraction).map(Some)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            entries,
            variance_fraction,
        })
    }

    pub fn class(&self, k: usize) -> Option<&Pca> {
        self.entries.get(k).and_then(Option::as_ref)
    }

    pub fn num_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn variance_fraction(&self) -> f64 {
        self.variance_fraction
    }
}

pub fn cosine_similarity(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(invalid("cosine similarity of a zero vector"));
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Scales every row to unit Euclidean norm; zero rows stay zero.
pub fn normalize_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
}

fn euclidean(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Entry `i` is the Euclidean distance from candidate `i` to its nearest center.
pub fn pairwise_min_distances(candidates: ArrayView2<'_, f64>, centers: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if centers.nrows() == 0 {
        return Err(invalid("no centers"));
    }
    if candidates.ncols() != centers.ncols() {
        return Err(Error::DimensionMismatch {
            expected: centers.ncols(),
            got: candidates.ncols(),
        });
    }
    Ok(candidates
        .rows()
        .into_iter()
        .map(|c| {
            centers
                .rows()
                .into_iter()
                .map(|m| euclidean(c, m))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Lowers `dists[i]` to the distance between candidate `i` and `center`.
pub(crate) fn relax_min_distances(dists: &mut [f64], candidates: ArrayView2<'_, f64>, center: ArrayView1<'_, f64>) {
    for (d, c) in dists.iter_mut().zip(candidates.rows()) {
        let e = euclidean(c, center);
        if e < *d {
            *d = e;
        }
    }
}
