//! Summary statistics, weighted Fleiss' kappa and Welch's t-test.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("rating table has no items")]
    NoItems,
    #[error("rating table needs at least 2 raters per item, found {0}")]
    TooFewRaters(usize),
    #[error("row {row} has {found} ratings, expected {expected}")]
    NotRectangular { row: usize, expected: usize, found: usize },
    #[error("rating {value} at row {row} outside 1..={categories}")]
    CategoryOutOfRange { row: usize, value: u32, categories: u32 },
    #[error("need at least 2 categories, found {0}")]
    TooFewCategories(u32),
    #[error("each sample needs at least 2 observations (got {a} and {b})")]
    TooFewObservations { a: usize, b: usize },
    #[error("sample contains a non-finite value")]
    NonFinite,
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

/// Arithmetic mean with one correction pass, exact for constant input.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let first = values.iter().sum::<f64>() / n;
    let correction = values.iter().map(|x| x - first).sum::<f64>() / n;
    Some(first + correction)
}

/// Population standard deviation around `mean`.
pub fn population_std(values: &[f64], mean: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|x| (x - mean) * (x - mean)).sum();
    libm::sqrt(ss / values.len() as f64)
}

fn sample_variance(values: &[f64], mean: f64) -> f64 {
    let ss: f64 = values.iter().map(|x| (x - mean) * (x - mean)).sum();
    ss / (values.len() - 1) as f64
}

/// Kappa agreement weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaWeights {
    #[default]
    Linear,
    Quadratic,
}

impl KappaWeights {
    /// Agreement weight between categories `i` and `j` (1-based) out of `c`.
    pub fn weight(self, i: u32, j: u32, c: u32) -> f64 {
        let d = (f64::from(i) - f64::from(j)).abs() / f64::from(c - 1);
        match self {
            KappaWeights::Linear => 1.0 - d,
            KappaWeights::Quadratic => 1.0 - d * d,
        }
    }
}

/// Items × raters matrix of ordinal ratings in `1..=categories`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingTable {
    rows: Vec<Vec<u32>>,
    categories: u32,
}

impl RatingTable {
    pub fn new(rows: Vec<Vec<u32>>, categories: u32) -> Result<Self, StatsError> {
        if categories < 2 {
            return Err(StatsError::TooFewCategories(categories));
        }
        let raters = rows.first().ok_or(StatsError::NoItems)?.len();
        if raters < 2 {
            return Err(StatsError::TooFewRaters(raters));
        }
        for (row, ratings) in rows.iter().enumerate() {
            if ratings.len() != raters {
                return Err(StatsError::NotRectangular { row, expected: raters, found: ratings.len() });
            }
            if let Some(&value) = ratings.iter().find(|&&v| v == 0 || v > categories) {
                return Err(StatsError::CategoryOutOfRange { row, value, categories });
            }
        }
        Ok(RatingTable { rows, categories })
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn categories(&self) -> u32 {
        self.categories
    }

    pub fn raters(&self) -> usize {
        self.rows[0].len()
    }
}

/// Weighted Fleiss' kappa: `1 - observed / expected` weighted disagreement.
///
/// Returns exactly 1 when every rating falls in one category.
pub fn weighted_fleiss_kappa(table: &RatingTable, weights: KappaWeights) -> f64 {
    let c = table.categories as usize;
    let n = table.raters() as f64;
    let items = table.rows.len() as f64;
    let disagreement = |j: usize, k: usize| 1.0 - weights.weight(j as u32 + 1, k as u32 + 1, table.categories);

    let mut totals = vec![0.0f64; c];
    let mut observed = 0.0;
    let mut counts = vec![0.0f64; c];
    for row in &table.rows {
        counts.iter_mut().for_each(|x| *x = 0.0);
        for &r in row {
            counts[r as usize - 1] += 1.0;
        }
        let mut item = 0.0;
        for j in 0..c {
            for k in 0..c {
                if j != k {
                    item += disagreement(j, k) * counts[j] * counts[k];
                }
            }
            totals[j] += counts[j];
        }
        observed += item / (n * (n - 1.0));
    }
    observed /= items;

    let total = items * n;
    let mut expected = 0.0;
    for j in 0..c {
        for k in 0..c {
            if j != k {
                expected += disagreement(j, k) * (totals[j] / total) * (totals[k] / total);
            }
        }
    }
    if expected == 0.0 {
        return 1.0;
    }
    1.0 - observed / expected
}

/// Result of a two-sided Welch t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Both samples had zero variance; `p` is 1 for equal means, else 0.
    pub degenerate: bool,
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewObservations { a: a.len(), b: b.len() });
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a).unwrap_or(0.0), mean(b).unwrap_or(0.0));
    let (sa, sb) = (sample_variance(a, ma) / na, sample_variance(b, mb) / nb);
    let se2 = sa + sb;
    let diff = ma - mb;
    if se2 == 0.0 {
        let t = if diff == 0.0 { 0.0 } else { diff * f64::INFINITY };
        let p = if diff == 0.0 { 1.0 } else { 0.0 };
        return Ok(WelchResult { t, df: na + nb - 2.0, p, degenerate: true });
    }
    let t = diff / libm::sqrt(se2);
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let p = student_t_two_sided(t, df);
    Ok(WelchResult { t, df, p, degenerate: false })
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let t2 = t * t;
    let x = df / (df + t2);
    let one_minus_x = t2 / (df + t2);
    regularized_incomplete_beta(df / 2.0, 0.5, x, one_minus_x).clamp(0.0, 1.0)
}

/// `I_x(a, b)`, given both `x` and `1 - x` to avoid cancellation.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64, one_minus_x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if one_minus_x <= 0.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * libm::log(x)
        + b * libm::log(one_minus_x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, one_minus_x) / b
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = f64::from(m);
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
