//! Welch's t-test and the TVLA threshold.

use serde::Serialize;

use super::{LeakageError, TraceSet};

pub const TVLA_THRESHOLD: f64 = 4.5;

/// Per-sample running mean and sum of squared deviations (Welford).
#[derive(Clone, Debug, Default)]
pub struct WelchAccumulator {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl WelchAccumulator {
    pub fn new(n_samples: usize) -> WelchAccumulator {
        WelchAccumulator {
            n: 0,
            mean: vec![0.0; n_samples],
            m2: vec![0.0; n_samples],
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn n_samples(&self) -> usize {
        self.mean.len()
    }

    pub fn push(&mut self, row: impl IntoIterator<Item = f64>) {
        self.n += 1;
        let n = self.n as f64;
        for ((v, m), s) in row.into_iter().zip(&mut self.mean).zip(&mut self.m2) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample variance per sample.
    pub fn variance(&self) -> Vec<f64> {
        let d = (self.n.max(2) - 1) as f64;
        self.m2.iter().map(|s| s / d).collect()
    }

    /// Welch t of `self` against `other` with denominator
    /// `sqrt(s1^2/n1 + s2^2/n2)`.
    pub fn t_against(&self, other: &WelchAccumulator) -> Result<TScoreSeries, LeakageError> {
        self.t_with(other, 1)
    }

    fn t_with(&self, other: &WelchAccumulator, power: i32) -> Result<TScoreSeries, LeakageError> {
        if self.n < 2 || other.n < 2 {
            return Err(LeakageError::TooFew { n1: self.n, n2: other.n });
        }
        if self.n_samples() != other.n_samples() {
            return Err(LeakageError::Shape(format!(
                "{} samples against {}",
                self.n_samples(),
                other.n_samples()
            )));
        }
        let (n1, n2) = ((self.n as f64).powi(power), (other.n as f64).powi(power));
        let (v1, v2) = (self.variance(), other.variance());
        let t = (0..self.n_samples())
            .map(|i| {
                let diff = self.mean[i] - other.mean[i];
                let den = (v1[i] / n1 + v2[i] / n2).sqrt();
                if den > 0.0 {
                    diff / den
                } else if diff == 0.0 {
                    0.0
                } else {
                    diff.signum() * f64::INFINITY
                }
            })
            .collect();
        Ok(TScoreSeries {
            t,
            n1: self.n,
            n2: other.n,
            threshold: TVLA_THRESHOLD,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TScoreSeries {
    pub t: Vec<f64>,
    pub n1: u64,
    pub n2: u64,
    pub threshold: f64,
}

fn accumulate(s: &TraceSet) -> WelchAccumulator {
    let mut acc = WelchAccumulator::new(s.n_samples);
    for row in s.traces() {
        acc.push(row.iter().map(|&v| v as f64));
    }
    acc
}

pub fn welch_t(a: &TraceSet, b: &TraceSet) -> Result<TScoreSeries, LeakageError> {
    if a.n_samples != b.n_samples {
        return Err(LeakageError::Shape(format!("{} samples against {}", a.n_samples, b.n_samples)));
    }
    accumulate(a).t_against(&accumulate(b))
}

/// The variant with `n^2` in the denominator, kept only for comparison.
#[cfg(feature = "squared-n-welch")]
pub fn welch_t_squared_n(a: &TraceSet, b: &TraceSet) -> Result<TScoreSeries, LeakageError> {
    if a.n_samples != b.n_samples {
        return Err(LeakageError::Shape(format!("{} samples against {}", a.n_samples, b.n_samples)));
    }
    accumulate(a).t_with(&accumulate(b), 2)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TvlaVerdict {
    pub pass: bool,
    pub max_abs_t: f64,
    /// Sample with the largest `|t|`.
    pub max_index: Option<usize>,
    /// Samples over the threshold.
    pub offending: Vec<usize>,
}

/// Fails iff some `|t|` exceeds the threshold.
pub fn tvla_verdict(series: &TScoreSeries) -> TvlaVerdict {
    let offending: Vec<usize> = (0..series.t.len()).filter(|&i| series.t[i].abs() > series.threshold).collect();
    let max_index = (0..series.t.len()).max_by(|&i, &j| series.t[i].abs().total_cmp(&series.t[j].abs()));
    TvlaVerdict {
        pass: offending.is_empty(),
        max_abs_t: max_index.map_or(0.0, |i| series.t[i].abs()),
        max_index,
        offending,
    }
}
