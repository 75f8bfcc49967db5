use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ResolveError;

pub const CRITERIA: [&str; 5] = ["authority", "recency", "relevance", "specificity", "consistency"];
pub const CRITERIA_COUNT: usize = CRITERIA.len();

/// Below this total dispersion every column is treated as uninformative.
const DEGENERATE_DISPERSION: f64 = 1e-12;

/// Per-document criterion scores, one row per document, columns in
/// [`CRITERIA`] order, every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; CRITERIA_COUNT]>", into = "Vec<[f64; CRITERIA_COUNT]>")]
pub struct CriteriaMatrix(Array2<f64>);

impl CriteriaMatrix {
    pub fn new(rows: Vec<[f64; CRITERIA_COUNT]>) -> Result<Self, ResolveError> {
        if rows.is_empty() {
            return Err(ResolveError::EmptyMatrix);
        }
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(v) {
                    return Err(ResolveError::ScoreRange {
                        row: i,
                        criterion: CRITERIA[j],
                        value: *v,
                    });
                }
            }
        }
        let m = rows.len();
        Ok(Self(Array2::from_shape_fn((m, CRITERIA_COUNT), |(i, j)| rows[i][j])))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn row(&self, i: usize) -> [f64; CRITERIA_COUNT] {
        std::array::from_fn(|j| self.0[[i, j]])
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    /// Copy with one criterion set to zero everywhere, which makes its
    /// entropy weight zero.
    pub fn without_criterion(&self, criterion: usize) -> Self {
        let mut m = self.0.clone();
        m.column_mut(criterion).fill(0.0);
        Self(m)
    }

    /// Comma-separated dump: a `document` column followed by one column per criterion.
    pub fn write_csv<W: std::io::Write>(&self, out: W, document_ids: &[&str]) -> Result<(), ResolveError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["document"];
        header.extend(CRITERIA);
        w.write_record(&header)?;
        for i in 0..self.rows() {
            let id = document_ids.get(i).copied().unwrap_or_default();
            let mut record = vec![id.to_string()];
            record.extend(self.row(i).iter().map(f64::to_string));
            w.write_record(&record)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

impl TryFrom<Vec<[f64; CRITERIA_COUNT]>> for CriteriaMatrix {
    type Error = ResolveError;

    fn try_from(rows: Vec<[f64; CRITERIA_COUNT]>) -> Result<Self, Self::Error> {
        Self::new(rows)
    }
}

impl From<CriteriaMatrix> for Vec<[f64; CRITERIA_COUNT]> {
    fn from(m: CriteriaMatrix) -> Self {
        (0..m.rows()).map(|i| m.row(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; CRITERIA_COUNT]", into = "[f64; CRITERIA_COUNT]")]
pub struct CriteriaWeights([f64; CRITERIA_COUNT]);

impl CriteriaWeights {
    pub fn new(w: [f64; CRITERIA_COUNT]) -> Result<Self, ResolveError> {
        let sum: f64 = w.iter().sum();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(ResolveError::Weights(w.to_vec()));
        }
        Ok(Self(w))
    }

    pub fn equal() -> Self {
        Self([1.0 / CRITERIA_COUNT as f64; CRITERIA_COUNT])
    }

    pub fn as_array(&self) -> [f64; CRITERIA_COUNT] {
        self.0
    }

    /// Component-wise mean, e.g. the corpus-level view of per-set weights.
    pub fn mean(all: &[CriteriaWeights]) -> Option<Self> {
        if all.is_empty() {
            return None;
        }
        let n = all.len() as f64;
        Some(Self(std::array::from_fn(|j| all.iter().map(|w| w.0[j]).sum::<f64>() / n)))
    }
}

impl TryFrom<[f64; CRITERIA_COUNT]> for CriteriaWeights {
    type Error = ResolveError;

    fn try_from(w: [f64; CRITERIA_COUNT]) -> Result<Self, Self::Error> {
        Self::new(w)
    }
}

impl From<CriteriaWeights> for [f64; CRITERIA_COUNT] {
    fn from(w: CriteriaWeights) -> Self {
        w.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopsisRanking {
    pub closeness: Vec<f64>,
    /// Row indices by descending closeness, lower index first on ties.
    pub order: Vec<usize>,
}

impl TopsisRanking {
    pub fn best(&self) -> usize {
        self.order[0]
    }
}

/// Entropy weights for a matrix with any number of columns.
///
/// Constant and all-zero columns get entropy 1. With one row, or when no
/// column discriminates, every column gets the same weight.
pub fn entropy_weights_of(x: ArrayView2<'_, f64>) -> Vec<f64> {
    let (m, n) = x.dim();
    let equal = vec![1.0 / n as f64; n];
    if m < 2 {
        return equal;
    }
    let ln_m = (m as f64).ln();
    let dispersion: Vec<f64> = x
        .columns()
        .into_iter()
        .map(|col| {
            let sum: f64 = col.sum();
            let first = col[0];
            if sum <= 0.0 || col.iter().all(|&v| v == first) {
                return 0.0;
            }
            let h: f64 = col
                .iter()
                .map(|&v| {
                    let p = v / sum;
                    if p > 0.0 {
                        p * p.ln()
                    } else {
                        0.0
                    }
                })
                .sum();
            (1.0 + h / ln_m).max(0.0)
        })
        .collect();
    let total: f64 = dispersion.iter().sum();
    if total < DEGENERATE_DISPERSION {
        return equal;
    }
    dispersion.into_iter().map(|d| d / total).collect()
}

/// Closeness to the ideal for a matrix with any number of columns.
/// Weights need not be normalized.
pub fn topsis_closeness(x: ArrayView2<'_, f64>, weights: &[f64]) -> Vec<f64> {
    let (m, n) = x.dim();
    assert_eq!(weights.len(), n, "one weight per criterion");
    if m == 1 {
        return vec![1.0];
    }
    let v = Array2::from_shape_fn((m, n), |(i, j)| weights[j] * x[[i, j]]);
    let ideal: Vec<f64> = v.columns().into_iter().map(|c| c.fold(f64::NEG_INFINITY, |a, &b| a.max(b))).collect();
    let anti: Vec<f64> = v.columns().into_iter().map(|c| c.fold(f64::INFINITY, |a, &b| a.min(b))).collect();
    v.rows()
        .into_iter()
        .map(|row| {
            let (mut dp, mut dm) = (0.0, 0.0);
            for j in 0..n {
                dp += (row[j] - ideal[j]).powi(2);
                dm += (row[j] - anti[j]).powi(2);
            }
            let (dp, dm) = (dp.sqrt(), dm.sqrt());
            if dp + dm == 0.0 {
                0.5
            } else {
                dm / (dp + dm)
            }
        })
        .collect()
}

pub fn rank_order(closeness: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..closeness.len()).collect();
    order.sort_by(|&a, &b| closeness[b].total_cmp(&closeness[a]));
    order
}

pub fn entropy_weights(matrix: &CriteriaMatrix) -> CriteriaWeights {
    let w = entropy_weights_of(matrix.view());
    CriteriaWeights(std::array::from_fn(|j| w[j]))
}

pub fn topsis_rank(matrix: &CriteriaMatrix, weights: &CriteriaWeights) -> TopsisRanking {
    let closeness = topsis_closeness(matrix.view(), &weights.0);
    let order = rank_order(&closeness);
    TopsisRanking { closeness, order }
}

/// Fraction of `trials` in which multiplying each weight by an independent
/// factor from `[1 − f, 1 + f]` and renormalizing changes the top-ranked row.
pub fn sensitivity(
    matrix: &CriteriaMatrix,
    weights: &CriteriaWeights,
    perturbation: f64,
    trials: usize,
    seed: u64,
) -> Result<f64, ResolveError> {
    if !(0.0..1.0).contains(&perturbation) {
        return Err(ResolveError::Perturbation(perturbation));
    }
    if trials == 0 {
        return Ok(0.0);
    }
    let baseline = topsis_rank(matrix, weights).best();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut changed = 0usize;
    for _ in 0..trials {
        let mut w: [f64; CRITERIA_COUNT] =
            std::array::from_fn(|j| weights.0[j] * rng.gen_range(1.0 - perturbation..=1.0 + perturbation));
        let sum: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= sum);
        if topsis_rank(matrix, &CriteriaWeights(w)).best() != baseline {
            changed += 1;
        }
    }
    Ok(changed as f64 / trials as f64)
}
