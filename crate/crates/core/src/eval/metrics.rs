use crate::error::{Error, Result};
use crate::tensor::{expect_same_shape, Element, Tensor};

/// `1` where `s > threshold`, else `0`. The inequality is strict, so a
/// threshold of 1 always yields the empty mask.
pub fn binarize<T: Element>(s: &Tensor<T>, threshold: f64) -> Tensor<T> {
    s.map(|v| if v.to_f64() > threshold { T::from_f64(1.0) } else { T::from_f64(0.0) })
}

/// Integer pixel counts behind precision and recall.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Counts {
    /// `|M ∩ G|`
    pub hits: u64,
    /// `|M|`
    pub predicted: u64,
    /// `|G|`
    pub actual: u64,
}

impl Counts {
    /// Counts set pixels; any non-zero value is a member.
    pub fn of<T: Element>(m: &Tensor<T>, g: &Tensor<T>) -> Result<Self> {
        expect_same_shape("precision/recall", m, g)?;
        let mut c = Counts::default();
        for (a, b) in m.data().iter().zip(g.data()) {
            let (a, b) = (a.to_f64() != 0.0, b.to_f64() != 0.0);
            c.hits += (a && b) as u64;
            c.predicted += a as u64;
            c.actual += b as u64;
        }
        Ok(c)
    }

    /// `(precision, recall)` with the empty-set conventions:
    /// nothing predicted and nothing present is a perfect score, an empty
    /// prediction against a non-empty truth scores zero on both, and any
    /// prediction against an empty truth has precision 0 and recall 1.
    pub fn precision_recall(&self) -> (f64, f64) {
        match (self.predicted, self.actual) {
            (0, 0) => (1.0, 1.0),
            (0, _) => (0.0, 0.0),
            (_, 0) => (0.0, 1.0),
            (p, a) => (self.hits as f64 / p as f64, self.hits as f64 / a as f64),
        }
    }
}

pub fn precision_recall<T: Element>(m: &Tensor<T>, g: &Tensor<T>) -> Result<(f64, f64)> {
    Ok(Counts::of(m, g)?.precision_recall())
}

/// Weighted harmonic mean `(1+β²)·P·R / (β²·P + R)`; zero when both inputs are zero.
pub fn f_measure(precision: f64, recall: f64, beta_squared: f64) -> f64 {
    let den = beta_squared * precision + recall;
    if den == 0.0 {
        return 0.0;
    }
    (1.0 + beta_squared) * precision * recall / den
}

/// Mean absolute difference between a continuous map and its ground truth.
pub fn mae<T: Element>(s: &Tensor<T>, g: &Tensor<T>) -> Result<f64> {
    expect_same_shape("mae", s, g)?;
    let sum: f64 = s
        .data()
        .iter()
        .zip(g.data())
        .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
        .sum();
    Ok(sum / s.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// The `k`-th of `n` thresholds spaced uniformly over `[0, 1]`.
pub fn sweep_threshold(k: usize, n: usize) -> f64 {
    k as f64 / (n - 1) as f64
}

/// Precision and recall at `n` thresholds `0, 1/(n−1), …, 1`.
///
/// Sorts the map once and reads every threshold's counts off prefix sums,
/// so each point equals `precision_recall(binarize(s, t), g)` exactly.
pub fn pr_curve<T: Element>(s: &Tensor<T>, g: &Tensor<T>, n: usize) -> Result<Vec<PrPoint>> {
    if n < 2 {
        return Err(Error::config("pr_thresholds", format!("need at least 2 points, got {n}")));
    }
    expect_same_shape("pr curve", s, g)?;
    let mut px: Vec<(f64, bool)> = s
        .data()
        .iter()
        .zip(g.data())
        .map(|(a, b)| (a.to_f64(), b.to_f64() != 0.0))
        .collect();
    px.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    // hits_above[i] = ground-truth pixels among the i largest scores
    let mut hits_above = Vec::with_capacity(px.len() + 1);
    hits_above.push(0u64);
    for &(_, fg) in &px {
        hits_above.push(hits_above.last().unwrap() + fg as u64);
    }
    let actual = *hits_above.last().unwrap();
    Ok((0..n)
        .map(|k| {
            let t = sweep_threshold(k, n);
            let above = px.partition_point(|&(v, _)| v > t);
            let c = Counts { hits: hits_above[above], predicted: above as u64, actual };
            let (precision, recall) = c.precision_recall();
            PrPoint { threshold: t, precision, recall }
        })
        .collect())
}
