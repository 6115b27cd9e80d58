//! Knee-point threshold on the descending ranked-score curve.
//!
//! Both axes are min-max normalized. A centered moving average locates the
//! region of maximum curvature, and the knee is then the maximum-curvature
//! point of the unsmoothed curve within one window of that region, so sharp
//! drops are not displaced by the smoothing.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CURVE_HEADER: &str = "rank,score,smoothed";

/// Smallest curve on which a knee is searched for.
pub const MIN_CURVE_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCurve {
    /// Scores sorted in descending order.
    pub scores: Vec<f64>,
    /// Moving average of the normalized scores.
    pub smoothed: Vec<f64>,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdResult {
    /// Number of ranks strictly above the knee.
    pub knee_index: usize,
    pub threshold: f64,
    pub flagged_count: usize,
    pub method: String,
}

/// Window `max(5, round(n/200))`, bumped to the next odd number.
pub fn smoothing_window(n: usize) -> usize {
    let w = 5usize.max((n as f64 / 200.0).round() as usize);
    if w.is_multiple_of(2) {
        w + 1
    } else {
        w
    }
}

/// Centered moving average with point-reflected ends, which keeps straight
/// segments straight up to the boundary.
pub fn moving_average(y: &[f64], window: usize) -> Vec<f64> {
    let n = y.len();
    let half = window / 2;
    let at = |i: isize| -> f64 {
        let last = n as isize - 1;
        if i < 0 {
            2.0 * y[0] - y[(-i).min(last) as usize]
        } else if i > last {
            2.0 * y[last as usize] - y[(2 * last - i).max(0) as usize]
        } else {
            y[i as usize]
        }
    };
    (0..n as isize)
        .map(|i| (i - half as isize..=i + half as isize).map(at).sum::<f64>() / window as f64)
        .collect()
}

/// `|y″| / (1 + y′²)^{3/2}` at interior points by central differences on a
/// unit-interval grid; the endpoints are zero.
pub fn curvature(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut k = vec![0.0; n];
    if n < 3 {
        return k;
    }
    let h = 1.0 / (n - 1) as f64;
    for i in 1..n - 1 {
        let d1 = (y[i + 1] - y[i - 1]) / (2.0 * h);
        let d2 = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h);
        k[i] = d2.abs() / (1.0 + d1 * d1).powf(1.5);
    }
    k
}

/// First index in `lo..=hi` whose value is within rounding of the maximum.
fn first_max(values: &[f64], lo: usize, hi: usize) -> usize {
    let max = values[lo..=hi]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 + 1e-9 * max.abs();
    (lo..=hi).find(|&i| values[i] >= max - tol).unwrap_or(lo)
}

impl ScoreCurve {
    pub fn new(scores: &[f64]) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numerical(format!("non-finite score at node {i}")));
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let window = smoothing_window(sorted.len());
        let smoothed = moving_average(&normalize(&sorted), window);
        Ok(Self {
            scores: sorted,
            smoothed,
            window,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        for (i, (s, m)) in self.scores.iter().zip(&self.smoothed).enumerate() {
            let _ = writeln!(out, "{},{s},{m}", i + 1);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn normalize(sorted_desc: &[f64]) -> Vec<f64> {
    let (hi, lo) = (sorted_desc[0], sorted_desc[sorted_desc.len() - 1]);
    let span = hi - lo;
    sorted_desc
        .iter()
        .map(|s| if span > 0.0 { (s - lo) / span } else { 0.0 })
        .collect()
}

pub fn select_threshold(scores: &[f64]) -> Result<ThresholdResult> {
    let n = scores.len();
    if n < MIN_CURVE_LEN {
        return Err(Error::InsufficientNodes {
            needed: MIN_CURVE_LEN,
            available: n,
        });
    }
    let curve = ScoreCurve::new(scores)?;
    let raw = &curve.scores;
    if raw[0] == raw[n - 1] {
        return Ok(ThresholdResult {
            knee_index: 0,
            threshold: raw[0],
            flagged_count: 0,
            method: "degenerate".into(),
        });
    }
    let coarse = first_max(&curvature(&curve.smoothed), 1, n - 2);
    let lo = coarse.saturating_sub(curve.window).max(1);
    let hi = (coarse + curve.window).min(n - 2);
    let knee_index = first_max(&curvature(&normalize(raw)), lo, hi);
    let threshold = raw[knee_index - 1];
    let flagged_count = raw.iter().filter(|&&s| s >= threshold).count();
    Ok(ThresholdResult {
        knee_index,
        threshold,
        flagged_count,
        method: "curvature".into(),
    })
}

/// How nodes are selected as anomalous.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector<'a> {
    Threshold(&'a ThresholdResult),
    /// The `k` highest scores, ties broken by lower node index.
    TopK(usize),
}

impl<'a> Selector<'a> {
    /// Exactly one of the two selectors must be given.
    pub fn from_options(
        threshold: Option<&'a ThresholdResult>,
        top_k: Option<usize>,
    ) -> Result<Self> {
        match (threshold, top_k) {
            (Some(t), None) => Ok(Selector::Threshold(t)),
            (None, Some(k)) => Ok(Selector::TopK(k)),
            _ => Err(Error::ConflictingSelectors),
        }
    }
}

pub fn classify(scores: &[f64], selector: Selector) -> Vec<u8> {
    match selector {
        Selector::Threshold(t) if t.flagged_count == 0 => vec![0; scores.len()],
        Selector::Threshold(t) => scores.iter().map(|&s| u8::from(s >= t.threshold)).collect(),
        Selector::TopK(k) => {
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            let mut flags = vec![0; scores.len()];
            for &i in order.iter().take(k) {
                flags[i] = 1;
            }
            flags
        }
    }
}
