//! Causal taper functions and the smoothed values they produce.
//!
//! A filter is born at sample index `birth` and assigns zero weight to every
//! earlier sample. Two shapes are supported: exponential forgetting with rate
//! `alpha`, whose weight on sample `t` at horizon `end` is
//! `alpha * (1 - alpha)^(end - t)`, and the uniform running mean.
//!
//! Smoothed values always use weights normalised over `birth..=end`, so a
//! filter born late reports on the same scale as one born at the start.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterKind {
    Exponential { alpha: f64 },
    Uniform,
}

impl FilterKind {
    pub fn exponential(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(FilterKind::Exponential { alpha })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FilterKind::Exponential { alpha } => check_alpha(alpha),
            FilterKind::Uniform => Ok(()),
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterKind::Exponential { alpha } => write!(f, "exp({alpha})"),
            FilterKind::Uniform => f.write_str("unif"),
        }
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    /// Accepts `unif`, `exp(0.1)` and `exp:0.1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("unif") || s.eq_ignore_ascii_case("uniform") {
            return Ok(FilterKind::Uniform);
        }
        let rate = s
            .strip_prefix("exp(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("exp:"))
            .ok_or_else(|| Error::param("base_filters", format!("unknown filter `{s}`")))?;
        let alpha: f64 = rate
            .trim()
            .parse()
            .map_err(|_| Error::param("base_filters", format!("bad rate in `{s}`")))?;
        FilterKind::exponential(alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::param(
            "alpha",
            format!("must lie in (0, 1], got {alpha}"),
        ))
    }
}

/// A taper shape anchored at its birth sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub birth: i64,
}

/// How weights truncated at the birth sample are brought back to unit mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by the truncated weight sum.
    #[default]
    Renormalized,
    /// Give the first sample the leftover mass `(1 - alpha)^(end - birth)`;
    /// this is what the plain recursion seeded with the first sample computes.
    FirstSample,
}

/// Unnormalised exponential weight `alpha (1 - alpha)^(end - t)`; zero before `birth`.
pub fn exp_filter_weight(alpha: f64, t: i64, end: i64, birth: i64) -> Result<f64> {
    check_alpha(alpha)?;
    if t < birth || t > end {
        return Ok(0.0);
    }
    Ok(alpha * (1.0 - alpha).powi(lag(end, t)))
}

/// `1 / (end - birth + 1)` on `birth..=end`, zero elsewhere.
pub fn uniform_filter_weight(t: i64, end: i64, birth: i64) -> f64 {
    if t < birth || t > end {
        0.0
    } else {
        1.0 / (end - birth + 1) as f64
    }
}

fn lag(end: i64, t: i64) -> i32 {
    i32::try_from(end - t).unwrap_or(i32::MAX)
}

impl FilterSpec {
    pub fn new(kind: FilterKind, birth: i64) -> Result<Self> {
        kind.validate()?;
        Ok(FilterSpec { kind, birth })
    }

    /// Raw taper value g(t, end; birth).
    pub fn weight(&self, t: i64, end: i64) -> f64 {
        match self.kind {
            FilterKind::Exponential { alpha } => {
                if t < self.birth || t > end {
                    0.0
                } else {
                    alpha * (1.0 - alpha).powi(lag(end, t))
                }
            }
            FilterKind::Uniform => uniform_filter_weight(t, end, self.birth),
        }
    }

    /// Weights for `birth..=end`, summing to one.
    pub fn normalized_weights(&self, end: i64, norm: Normalization) -> Vec<f64> {
        if end < self.birth {
            return Vec::new();
        }
        let mut w: Vec<f64> = (self.birth..=end).map(|t| self.weight(t, end)).collect();
        match (norm, self.kind) {
            (Normalization::FirstSample, FilterKind::Exponential { alpha }) => {
                w[0] = (1.0 - alpha).powi(lag(end, self.birth));
            }
            _ => {
                let total: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= total);
            }
        }
        w
    }
}

/// Taper-weighted average of `series`, where `series[0]` sits at `spec.birth`.
pub fn smoothed_value(spec: &FilterSpec, series: &[f64], norm: Normalization) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Domain("cannot smooth an empty series".into()));
    }
    let end = spec.birth + series.len() as i64 - 1;
    let w = spec.normalized_weights(end, norm);
    Ok(w.iter().zip(series).map(|(w, x)| w * x).sum())
}

/// One step of `alpha * x + (1 - alpha) * prev`.
pub fn exp_recursive_update(prev: f64, x: f64, alpha: f64) -> f64 {
    alpha * x + (1.0 - alpha) * prev
}

/// Running state of a filter fed one sample at a time.
///
/// Tracks the unnormalised weighted sum and the matching weight mass; their
/// ratio is exactly the renormalised batch smoothed value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FilterRecursion {
    numer: f64,
    mass: f64,
    seen: u64,
}

impl FilterRecursion {
    pub fn absorb(&mut self, kind: FilterKind, x: f64) {
        let (gain, decay) = match kind {
            FilterKind::Exponential { alpha } => (alpha, 1.0 - alpha),
            FilterKind::Uniform => (1.0, 1.0),
        };
        self.numer = gain * x + decay * self.numer;
        self.mass = gain + decay * self.mass;
        self.seen += 1;
    }

    pub fn value(&self) -> Option<f64> {
        (self.seen > 0).then(|| self.numer / self.mass)
    }

    pub fn samples(&self) -> u64 {
        self.seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn exp(alpha: f64, birth: i64) -> FilterSpec {
        FilterSpec::new(FilterKind::exponential(alpha).unwrap(), birth).unwrap()
    }

    #[test]
    fn exponential_weight_examples() {
        assert_abs_diff_eq!(exp_filter_weight(0.1, 10, 10, 3).unwrap(), 0.1);
        assert_abs_diff_eq!(
            exp_filter_weight(0.1, 9, 10, 3).unwrap(),
            0.09,
            epsilon = 1e-15
        );
        assert_eq!(exp_filter_weight(0.1, 2, 10, 3).unwrap(), 0.0);
        assert!(exp_filter_weight(0.0, 1, 1, 1).is_err());
        assert!(exp_filter_weight(1.5, 1, 1, 1).is_err());
        assert_eq!(exp_filter_weight(1.0, 5, 5, 1).unwrap(), 1.0);
    }

    #[test]
    fn uniform_weight_examples() {
        assert_eq!(uniform_filter_weight(1, 1, 1), 1.0);
        for t in 5..=9 {
            assert_abs_diff_eq!(uniform_filter_weight(t, 9, 5), 0.2);
        }
        assert_eq!(uniform_filter_weight(4, 9, 5), 0.0);
    }

    #[test]
    fn smoothed_value_examples() {
        let unif = FilterSpec::new(FilterKind::Uniform, 1).unwrap();
        assert_abs_diff_eq!(
            smoothed_value(&unif, &[1.0, 2.0, 3.0], Normalization::Renormalized).unwrap(),
            2.0
        );
        // normalised weights (0.125, 0.25, 0.5) / 0.875
        let v =
            smoothed_value(&exp(0.5, 1), &[0.0, 0.0, 1.0], Normalization::Renormalized).unwrap();
        assert_abs_diff_eq!(v, 4.0 / 7.0, epsilon = 1e-15);
        let v = smoothed_value(&exp(0.5, 1), &[0.0, 0.0, 1.0], Normalization::FirstSample).unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        assert!(smoothed_value(&unif, &[], Normalization::Renormalized).is_err());
    }

    #[test]
    fn recursion_examples() {
        assert_eq!(exp_recursive_update(3.5, 3.5, 0.37), 3.5);
        assert_abs_diff_eq!(exp_recursive_update(0.0, 1.0, 0.2), 0.2);
        let series = [0.0, 0.0, 1.0];
        let mut acc = series[0];
        for &x in &series[1..] {
            acc = exp_recursive_update(acc, x, 0.5);
        }
        assert_abs_diff_eq!(acc, 0.5, epsilon = 1e-12);
        let batch = smoothed_value(&exp(0.5, 1), &series, Normalization::FirstSample).unwrap();
        assert_abs_diff_eq!(acc, batch, epsilon = 1e-12);
    }

    #[test]
    fn running_uniform_is_running_mean() {
        let mut r = FilterRecursion::default();
        assert_eq!(r.value(), None);
        let mut out = Vec::new();
        for x in [1.0, 2.0, 3.0] {
            r.absorb(FilterKind::Uniform, x);
            out.push(r.value().unwrap());
        }
        assert_eq!(out, vec![1.0, 1.5, 2.0]);
    }

    #[test]
    fn filter_kind_text_forms() {
        assert_eq!("unif".parse::<FilterKind>().unwrap(), FilterKind::Uniform);
        assert_eq!(
            "exp(0.2)".parse::<FilterKind>().unwrap(),
            FilterKind::Exponential { alpha: 0.2 }
        );
        assert_eq!(
            "exp:0.1".parse::<FilterKind>().unwrap(),
            FilterKind::Exponential { alpha: 0.1 }
        );
        assert!("exp(2)".parse::<FilterKind>().is_err());
        assert!("gauss".parse::<FilterKind>().is_err());
        let k = FilterKind::Exponential { alpha: 0.1 };
        assert_eq!(k.to_string().parse::<FilterKind>().unwrap(), k);
    }

    fn any_kind() -> impl Strategy<Value = FilterKind> {
        prop_oneof![
            Just(FilterKind::Uniform),
            (0.001f64..=1.0).prop_map(|alpha| FilterKind::Exponential { alpha }),
        ]
    }

    proptest! {
        #[test]
        fn weights_form_probability_vector(kind in any_kind(), birth in -50i64..50, len in 1i64..300) {
            let spec = FilterSpec::new(kind, birth).unwrap();
            for norm in [Normalization::Renormalized, Normalization::FirstSample] {
                let w = spec.normalized_weights(birth + len - 1, norm);
                prop_assert!(w.iter().all(|&x| x >= 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            prop_assert_eq!(spec.weight(birth - 1, birth + len), 0.0);
        }

        #[test]
        fn smoothed_value_is_bounded_and_monotone(
            kind in any_kind(),
            series in prop::collection::vec(-100.0f64..100.0, 1..200),
            bumps in prop::collection::vec(0.0f64..10.0, 200),
        ) {
            let spec = FilterSpec::new(kind, 0).unwrap();
            let v = smoothed_value(&spec, &series, Normalization::Renormalized).unwrap();
            let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            let upper: Vec<f64> = series.iter().zip(&bumps).map(|(x, b)| x + b).collect();
            let vu = smoothed_value(&spec, &upper, Normalization::Renormalized).unwrap();
            prop_assert!(vu >= v - 1e-9);
        }

        #[test]
        fn recursion_matches_batch(
            alpha in 0.001f64..=1.0,
            series in prop::collection::vec(-10.0f64..10.0, 1..=201),
        ) {
            let spec = exp(alpha, 7);
            let mut run = FilterRecursion::default();
            let mut seeded = series[0];
            for (n, &x) in series.iter().enumerate() {
                run.absorb(spec.kind, x);
                if n > 0 {
                    seeded = exp_recursive_update(seeded, x, alpha);
                }
            }
            let renorm = smoothed_value(&spec, &series, Normalization::Renormalized).unwrap();
            let first = smoothed_value(&spec, &series, Normalization::FirstSample).unwrap();
            prop_assert!((run.value().unwrap() - renorm).abs() < 1e-10);
            prop_assert!((seeded - first).abs() < 1e-10);
        }
    }
}
