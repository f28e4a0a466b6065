//! Cross-entropy and supervised contrastive losses with analytic gradients.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`, and its
/// gradient `(softmax - onehot) / n` with respect to the logits.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if n == 0 {
        return Err(invalid("cross-entropy of an empty batch"));
    }
    let mut grad = Array2::zeros((n, k));
    let mut loss = 0.0;
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        if y >= k {
            return Err(invalid(format!("label {y} >= {k} classes")));
        }
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        for (j, &v) in row.iter().enumerate() {
            grad[[i, j]] = (v - lse).exp();
        }
        grad[[i, y]] -= 1.0;
    }
    let scale = 1.0 / n as f64;
    grad.mapv_inplace(|g| g * scale);
    Ok((loss * scale, grad))
}

/// Two-view batch of unit-norm embeddings for the supervised contrastive loss.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    embeddings: Array2<f64>,
    labels: Vec<usize>,
    temperature: f64,
}

impl ContrastiveBatch {
    /// `embeddings` holds `2n` rows: rows `0..n` are the first views and rows
    /// `n..2n` the second views of the same samples, so `labels` must repeat
    /// with period `n`.
    pub fn new(embeddings: Array2<f64>, labels: Vec<usize>, temperature: f64) -> Result<Self> {
        let m = embeddings.nrows();
        if labels.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: labels.len(),
            });
        }
        if m < 2 || !m.is_multiple_of(2) {
            return Err(invalid(format!(
                "contrastive batch needs 2 views per sample, got {m} rows"
            )));
        }
        let half = m / 2;
        if labels[..half] != labels[half..] {
            return Err(invalid("second-view labels must mirror the first view"));
        }
        for (i, row) in embeddings.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(invalid(format!("embedding {i} has norm {norm}")));
            }
        }
        check_temperature(temperature)?;
        Ok(Self {
            embeddings,
            labels,
            temperature,
        })
    }

    pub fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.embeddings.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid(format!("temperature must be > 0, got {t}")));
    }
    Ok(())
}

/// Supervised contrastive loss of a validated two-view batch.
pub fn supcon_loss(batch: &ContrastiveBatch) -> Result<(f64, Array2<f64>)> {
    supcon_loss_raw(batch.embeddings.view(), &batch.labels, batch.temperature)
}

/// Supervised contrastive loss over arbitrary rows `z` (no norm check).
///
/// For anchor `i` with positives `P(i)` (same label, other index) and
/// candidates `A(i)` (every other index):
///
/// `l_i = -1/|P(i)| * sum_p log( exp(z_i.z_p/T) / sum_a exp(z_i.z_a/T) )`
///
/// Anchors without positives are skipped; the result is the mean over the
/// remaining anchors, returned with its gradient with respect to `z`.
pub fn supcon_loss_raw(z: ArrayView2<'_, f64>, labels: &[usize], temperature: f64) -> Result<(f64, Array2<f64>)> {
    let m = z.nrows();
    if labels.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: labels.len(),
        });
    }
    if m < 2 {
        return Err(invalid("contrastive loss needs at least 2 rows"));
    }
    check_temperature(temperature)?;

    let inv_t = 1.0 / temperature;
    let sim = z.dot(&z.t()) * inv_t;
    // coef[i][a] = q_ia - [a in P(i)]/|P(i)| for counted anchors, 0 otherwise.
    let mut coef = Array2::<f64>::zeros((m, m));
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..m {
        let positives = (0..m).filter(|&p| p != i && labels[p] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        counted += 1;
        let row = sim.row(i);
        let max = (0..m)
            .filter(|&a| a != i)
            .map(|a| row[a])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..m).filter(|&a| a != i).map(|a| (row[a] - max).exp()).sum();
        let log_denom = max + denom.ln();

        let inv_p = 1.0 / positives as f64;
        let mut pos_sum = 0.0;
        for a in 0..m {
            if a == i {
                continue;
            }
            coef[[i, a]] = (row[a] - log_denom).exp();
            if labels[a] == labels[i] {
                pos_sum += row[a];
                coef[[i, a]] -= inv_p;
            }
        }
        total += log_denom - pos_sum * inv_p;
    }
    if counted == 0 {
        return Err(invalid("no anchor in the batch has a positive"));
    }
    let scale = 1.0 / counted as f64;
    coef.mapv_inplace(|c| c * inv_t * scale);
    let grad = coef.dot(&z) + coef.t().dot(&z);
    Ok((total * scale, grad))
}

/// Second view of a feature batch: `x + Normal(0, sigma^2)` per coordinate.
pub fn jitter_view<R: Rng + ?Sized>(x: ArrayView2<'_, f64>, sigma: f64, rng: &mut R) -> Result<Array2<f64>> {
    if !(sigma >= 0.0) {
        return Err(invalid(format!("jitter sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.to_owned());
    }
    let noise = Normal::new(0.0, sigma).expect("sigma validated");
    Ok(x.mapv(|v| v + noise.sample(rng)))
}

/// Stacks the two views row-wise and repeats the labels.
pub fn stack_views(
    first: ArrayView2<'_, f64>,
    second: ArrayView2<'_, f64>,
    labels: &[usize],
) -> (Array2<f64>, Vec<usize>) {
    let x = ndarray::concatenate(Axis(0), &[first, second]).expect("views share a width");
    let mut y = labels.to_vec();
    y.extend_from_slice(labels);
    (x, y)
}
