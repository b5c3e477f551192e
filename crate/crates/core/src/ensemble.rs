//! Expanding fixed-shares ensemble of smoothing filters.
//!
//! Each expert is a [`FilterSpec`] with its own running smoothed value. On
//! every sample the ensemble scores each expert's standing value against the
//! new observation, multiplies its weight by `exp(-gamma * loss)`, and then
//! redistributes a `beta` fraction of the total mass uniformly. Every `tau`
//! samples a fresh copy of the base set is born, so the pool can restart
//! after an abrupt change in the observed level.

use crate::error::{Error, Result};
use crate::filters::{FilterKind, FilterRecursion, FilterSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleHyper {
    /// Spawn period in samples.
    pub tau: usize,
    /// Share rate in `[0, 1]`.
    pub beta: f64,
    /// Loss scale, strictly positive.
    pub gamma: f64,
    pub base_set: Vec<FilterKind>,
    /// Optional cap on the pool size; `None` grows without bound.
    pub max_experts: Option<usize>,
}

impl Default for EnsembleHyper {
    fn default() -> Self {
        EnsembleHyper {
            tau: 10,
            beta: 0.01,
            gamma: 1.0,
            base_set: vec![
                FilterKind::Exponential { alpha: 0.1 },
                FilterKind::Exponential { alpha: 0.2 },
                FilterKind::Uniform,
            ],
            max_experts: None,
        }
    }
}

impl EnsembleHyper {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::param("tau", "spawn period must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::param(
                "beta",
                format!("must lie in [0, 1], got {}", self.beta),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::param(
                "gamma",
                format!("must be positive, got {}", self.gamma),
            ));
        }
        if self.base_set.is_empty() {
            return Err(Error::param("base_filters", "base set is empty"));
        }
        for kind in &self.base_set {
            kind.validate()?;
        }
        if self.max_experts == Some(0) {
            return Err(Error::param("max_experts", "cap must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertState {
    pub spec: FilterSpec,
    pub weight: f64,
    run: FilterRecursion,
}

impl ExpertState {
    fn new(kind: FilterKind, birth: i64, weight: f64) -> Self {
        ExpertState {
            spec: FilterSpec { kind, birth },
            weight,
            run: FilterRecursion::default(),
        }
    }

    /// Current smoothed value, `None` until the first sample arrives.
    pub fn value(&self) -> Option<f64> {
        self.run.value()
    }

    fn absorb(&mut self, x: f64) {
        self.run.absorb(self.spec.kind, x);
    }
}

/// Result of one [`EnsembleState::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    /// Forecast made before the sample was seen; `None` on the first step.
    pub prediction: Option<f64>,
    /// Ensemble smoothed value after absorbing the sample.
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    hyper: EnsembleHyper,
    experts: Vec<ExpertState>,
    origin: i64,
    /// Time of the most recently absorbed sample.
    last: Option<i64>,
    cap_reached: bool,
}

impl EnsembleState {
    /// One expert per base template, all born at `t0` with uniform weight.
    pub fn new(hyper: EnsembleHyper, t0: i64) -> Result<Self> {
        hyper.validate()?;
        let n = hyper.base_set.len();
        let experts = hyper
            .base_set
            .iter()
            .map(|&k| ExpertState::new(k, t0, 1.0 / n as f64))
            .collect();
        Ok(EnsembleState {
            hyper,
            experts,
            origin: t0,
            last: None,
            cap_reached: false,
        })
    }

    pub fn hyper(&self) -> &EnsembleHyper {
        &self.hyper
    }

    pub fn experts(&self) -> &[ExpertState] {
        &self.experts
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.experts.iter().map(|e| e.weight).collect()
    }

    /// Whether a spawn was ever skipped because of `max_experts`.
    pub fn cap_reached(&self) -> bool {
        self.cap_reached
    }

    /// Time index the next [`step`](Self::step) will be assigned.
    pub fn next_time(&self) -> i64 {
        self.last.map_or(self.origin, |t| t + 1)
    }

    fn weighted_value(&self) -> Result<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for e in &self.experts {
            let y = e
                .value()
                .ok_or_else(|| Error::State("expert has not absorbed any sample".into()))?;
            num += e.weight * y;
            den += e.weight;
        }
        Ok(num / den)
    }

    /// Weighted forecast from the experts' current values.
    pub fn predict(&self) -> Result<f64> {
        if self.last.is_none() {
            return Err(Error::State("predict called before any sample".into()));
        }
        self.weighted_value()
    }

    /// Fixed-shares reweighting against `observed`, scored on each expert's
    /// standing value. Weights are left summing to one.
    pub fn share_update(&mut self, observed: f64) -> Result<()> {
        if !observed.is_finite() {
            return Err(Error::Domain(format!(
                "observation must be finite, got {observed}"
            )));
        }
        let gamma = self.hyper.gamma;
        // log v_i = log w_i - gamma * loss_i, shifted by its max before exp.
        // The update is homogeneous in v, so the shift cancels on renormalisation.
        let mut log_v = Vec::with_capacity(self.experts.len());
        for e in &self.experts {
            let y = e
                .value()
                .ok_or_else(|| Error::State("expert has no prediction to score".into()))?;
            let loss = (y - observed).powi(2);
            log_v.push(e.weight.ln() - gamma * loss);
        }
        let top = log_v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let n = self.experts.len() as f64;
        if !top.is_finite() {
            self.experts.iter_mut().for_each(|e| e.weight = 1.0 / n);
            return Ok(());
        }
        let v: Vec<f64> = log_v.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = v.iter().sum();
        let beta = self.hyper.beta;
        let mut norm = 0.0;
        for (e, vi) in self.experts.iter_mut().zip(&v) {
            e.weight = (1.0 - beta) * vi + beta / n * total;
            norm += e.weight;
        }
        self.experts.iter_mut().for_each(|e| e.weight /= norm);
        Ok(())
    }

    /// Adds one newborn expert per base template at time `t`, each taking the
    /// current mean weight before renormalisation. Returns `false` without
    /// touching the pool when the cap would be exceeded.
    pub fn spawn_experts(&mut self, t: i64) -> Result<bool> {
        let tau = self.hyper.tau as i64;
        if t <= self.origin || (t - self.origin) % tau != 0 {
            return Err(Error::State(format!(
                "t={t} is not a spawn time (origin {}, tau {tau})",
                self.origin
            )));
        }
        let grow = self.hyper.base_set.len();
        if let Some(cap) = self.hyper.max_experts {
            if self.experts.len() + grow > cap {
                self.cap_reached = true;
                return Ok(false);
            }
        }
        let mean = self.experts.iter().map(|e| e.weight).sum::<f64>() / self.experts.len() as f64;
        for &kind in &self.hyper.base_set {
            self.experts.push(ExpertState::new(kind, t, mean));
        }
        let total: f64 = self.experts.iter().map(|e| e.weight).sum();
        self.experts.iter_mut().for_each(|e| e.weight /= total);
        Ok(true)
    }

    /// Feeds one observation: forecast, score and share, absorb, spawn if due,
    /// then report the ensemble value.
    pub fn step(&mut self, observed: f64) -> Result<StepOutput> {
        if !observed.is_finite() {
            return Err(Error::Domain(format!(
                "observation must be finite, got {observed}"
            )));
        }
        let t = self.next_time();
        let prediction = match self.last {
            Some(_) => {
                let p = self.predict()?;
                self.share_update(observed)?;
                Some(p)
            }
            None => None,
        };
        self.experts.iter_mut().for_each(|e| e.absorb(observed));
        self.last = Some(t);

        let tau = self.hyper.tau as i64;
        if t > self.origin && (t - self.origin) % tau == 0 {
            let before = self.experts.len();
            if self.spawn_experts(t)? {
                self.experts[before..]
                    .iter_mut()
                    .for_each(|e| e.absorb(observed));
            }
        }
        Ok(StepOutput {
            prediction,
            estimate: self.weighted_value()?,
        })
    }
}
