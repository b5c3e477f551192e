//! Piecewise-constant synthetic experiments for the ensemble's MSE bound.
//!
//! Times are 1-based throughout: index `k` of a series holds sample `t = k + 1`,
//! and the first changepoint is always `t = 1`.

use std::fmt::Write as _;
use std::io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ensemble::{EnsembleHyper, EnsembleState};
use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseSpec {
    pub horizon: usize,
    /// Segment starts, `1 = t_1 < t_2 < ... <= horizon`.
    pub changepoints: Vec<usize>,
    pub levels: Vec<f64>,
    /// Noise standard deviation per segment.
    pub noise_sd: Vec<f64>,
    pub seed: u64,
}

impl PiecewiseSpec {
    /// Evenly spaced segments with a shared noise level.
    pub fn even(horizon: usize, levels: Vec<f64>, sigma: f64, seed: u64) -> Result<Self> {
        let m = levels.len();
        if m == 0 || m > horizon {
            return Err(Error::param(
                "levels",
                format!("need 1..={horizon} segments, got {m}"),
            ));
        }
        let changepoints = (0..m).map(|k| 1 + k * horizon / m).collect();
        let spec = PiecewiseSpec {
            horizon,
            changepoints,
            levels,
            noise_sd: vec![sigma; m],
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        if self.changepoints.first() != Some(&1) {
            return Err(Error::param("changepoints", "first changepoint must be 1"));
        }
        if self.changepoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("changepoints", "must be strictly increasing"));
        }
        if self.changepoints.last().is_some_and(|&c| c > self.horizon) {
            return Err(Error::param("changepoints", "must not exceed the horizon"));
        }
        let m = self.changepoints.len();
        if self.levels.len() != m || self.noise_sd.len() != m {
            return Err(Error::param(
                "levels",
                format!(
                    "{m} segments but {} levels and {} noise levels",
                    self.levels.len(),
                    self.noise_sd.len()
                ),
            ));
        }
        if self.levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::param("levels", "must be finite"));
        }
        if self.noise_sd.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::param(
                "sigma",
                "noise levels must be finite and non-negative",
            ));
        }
        Ok(())
    }

    pub fn segments(&self) -> usize {
        self.changepoints.len()
    }

    /// Largest per-segment noise level.
    pub fn sigma_star(&self) -> f64 {
        self.noise_sd.iter().copied().fold(0.0, f64::max)
    }

    /// Segment index active at 1-based time `t`.
    pub fn segment_of(&self, t: usize) -> usize {
        self.changepoints.partition_point(|&c| c <= t) - 1
    }
}

/// Truth and noisy observation for one trial. Each trial draws from its own
/// ChaCha stream of the master seed, so trials are independent of scheduling.
pub fn gen_piecewise(spec: &PiecewiseSpec, trial: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(trial);
    let noise: Vec<Normal<f64>> = spec
        .noise_sd
        .iter()
        .map(|&s| Normal::new(0.0, s).map_err(|e| Error::param("sigma", e.to_string())))
        .collect::<Result<_>>()?;
    let mut truth = Vec::with_capacity(spec.horizon);
    let mut observed = Vec::with_capacity(spec.horizon);
    for t in 1..=spec.horizon {
        let k = spec.segment_of(t);
        let level = spec.levels[k];
        truth.push(level);
        observed.push(level + noise[k].sample(&mut rng));
    }
    Ok((truth, observed))
}

/// Running mean of `observed` restarted at every changepoint.
pub fn oracle_mean(observed: &[f64], changepoints: &[usize]) -> Result<Vec<f64>> {
    if changepoints.first().is_some_and(|&c| c != 1)
        || changepoints.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::param(
            "changepoints",
            "must start at 1 and increase strictly",
        ));
    }
    let mut out = Vec::with_capacity(observed.len());
    let (mut mean, mut count) = (0.0, 0usize);
    for (k, &x) in observed.iter().enumerate() {
        if changepoints.binary_search(&(k + 1)).is_ok() {
            mean = 0.0;
            count = 0;
        }
        count += 1;
        mean += (x - mean) / count as f64;
        out.push(mean);
    }
    Ok(out)
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Tracking regret `Σ(est - truth)² - Σ(oracle - truth)²`.
pub fn regret(estimates: &[f64], oracle: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() || oracle.len() != truth.len() {
        return Err(Error::param(
            "series",
            format!(
                "length mismatch: estimates {}, oracle {}, truth {}",
                estimates.len(),
                oracle.len(),
                truth.len()
            ),
        ));
    }
    Ok(squared_error(estimates, truth) - squared_error(oracle, truth))
}

/// The four terms of the MSE bound and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    /// `(m / γ) ln n_T`
    pub experts: f64,
    /// `-(1 / γ) ln(β^m (1 - β)^(T - m))`
    pub sharing: f64,
    /// `γ T / 8`
    pub learning: f64,
    /// `m σ*² ln(T / e)`
    pub noise: f64,
    pub total: f64,
}

impl BoundTerms {
    /// The bound is infinite when β is 0 (with m > 0) or 1.
    pub fn is_infinite(&self) -> bool {
        self.total.is_infinite()
    }

    /// The regret part alone, without the noise term.
    pub fn regret_bound(&self) -> f64 {
        self.experts + self.sharing + self.learning
    }
}

/// Evaluates the bound for `m` segments, a horizon `t_max`, and `n_experts`
/// experts alive at the horizon.
pub fn mse_bound(
    m: usize,
    gamma: f64,
    beta: f64,
    t_max: usize,
    n_experts: usize,
    sigma_star: f64,
) -> Result<BoundTerms> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::param(
            "gamma",
            format!("must be positive, got {gamma}"),
        ));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::param(
            "beta",
            format!("must lie in [0, 1], got {beta}"),
        ));
    }
    if t_max <= m {
        return Err(Error::param(
            "horizon",
            format!("must exceed m = {m}, got {t_max}"),
        ));
    }
    if n_experts == 0 {
        return Err(Error::param("n_experts", "need at least one expert"));
    }
    if !(sigma_star >= 0.0 && sigma_star.is_finite()) {
        return Err(Error::param(
            "sigma",
            format!("must be non-negative, got {sigma_star}"),
        ));
    }
    let (mf, tf) = (m as f64, t_max as f64);
    // 0 · ln 0 is taken as 0 so that m = 0 stays finite at β = 0.
    let xlny = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * y.ln() };
    let experts = mf / gamma * (n_experts as f64).ln();
    let sharing = -(xlny(mf, beta) + xlny(tf - mf, 1.0 - beta)) / gamma;
    let learning = gamma * tf / 8.0;
    let noise = mf * sigma_star * sigma_star * (tf.ln() - 1.0);
    Ok(BoundTerms {
        experts,
        sharing,
        learning,
        noise,
        total: experts + sharing + learning + noise,
    })
}

/// `Σ_k Σ_t 1 / (t - t_k + 1)` over the segments of a partition of `1..=horizon`.
pub fn harmonic_sum(changepoints: &[usize], horizon: usize) -> f64 {
    let ends = changepoints
        .iter()
        .skip(1)
        .copied()
        .chain(std::iter::once(horizon + 1));
    changepoints
        .iter()
        .zip(ends)
        .map(|(&start, end)| (1..=end - start).map(|n| 1.0 / n as f64).sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub estimates: Vec<f64>,
    pub truth: Vec<f64>,
    pub observed: Vec<f64>,
    pub n_experts: usize,
}

impl TrialResult {
    pub fn cumulative_se(&self) -> f64 {
        squared_error(&self.estimates, &self.truth)
    }
}

/// Runs the ensemble from `t = 1` over one trial's observations.
pub fn run_trial(spec: &PiecewiseSpec, hyper: &EnsembleHyper, trial: u64) -> Result<TrialResult> {
    let (truth, observed) = gen_piecewise(spec, trial)?;
    let mut state = EnsembleState::new(hyper.clone(), 1)?;
    let estimates = observed
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            state
                .step(x)
                .map(|o| o.estimate)
                .map_err(|e| e.at(k as i64 + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialResult {
        estimates,
        truth,
        observed,
        n_experts: state.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub horizon: usize,
    pub segments: usize,
    pub sigma_star: f64,
    pub tau: usize,
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
    pub trials: usize,
    /// Pool size at the horizon.
    pub n_experts: usize,
    /// Mean over trials of `Σ_t (estimate - truth)²`.
    pub empirical_mse: f64,
    pub stderr: f64,
    /// Mean tracking regret against the oracle mean.
    pub mean_regret: f64,
    /// Bound with `m` = number of segments (counting `t_1 = 1`).
    pub bound: BoundTerms,
    /// Bound with `m` = number of changes (segments minus one).
    pub bound_transitions: BoundTerms,
    pub pass: bool,
}

impl BoundReport {
    pub fn flagged_infinite(&self) -> bool {
        self.bound.is_infinite()
    }

    pub fn render(&self) -> String {
        let b = &self.bound;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "T={} segments={} sigma*={} tau={} beta={} gamma={} trials={} seed={}",
            self.horizon,
            self.segments,
            self.sigma_star,
            self.tau,
            self.beta,
            self.gamma,
            self.trials,
            self.seed
        );
        let _ = writeln!(s, "experts at T: {}", self.n_experts);
        let _ = writeln!(
            s,
            "empirical cumulative MSE: {} (stderr {}), mean regret {}",
            self.empirical_mse, self.stderr, self.mean_regret
        );
        let _ = writeln!(
            s,
            "bound: {} = {} (experts) + {} (sharing) + {} (learning) + {} (noise)",
            b.total, b.experts, b.sharing, b.learning, b.noise
        );
        let _ = writeln!(
            s,
            "bound counting changes only: {}",
            self.bound_transitions.total
        );
        if self.flagged_infinite() {
            let _ = writeln!(s, "note: bound is infinite (beta at 0 or 1)");
        }
        let _ = writeln!(s, "{}", if self.pass { "PASS" } else { "FAIL" });
        s
    }
}

/// Monte-Carlo check of the bound: mean cumulative squared error over
/// `trials` noise draws plus two standard errors must not exceed it.
pub fn run_bound_experiment(
    spec: &PiecewiseSpec,
    hyper: &EnsembleHyper,
    trials: usize,
    exec: Exec,
) -> Result<BoundReport> {
    spec.validate()?;
    hyper.validate()?;
    if trials == 0 {
        return Err(Error::param("trials", "need at least one trial"));
    }
    let outcomes = exec.map_range(trials, |k| -> Result<(f64, f64, usize)> {
        let r = run_trial(spec, hyper, k as u64)?;
        let oracle = oracle_mean(&r.observed, &spec.changepoints)?;
        let reg = regret(&r.estimates, &oracle, &r.truth)?;
        Ok((r.cumulative_se(), reg, r.n_experts))
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let n = trials as f64;
    let mean = outcomes.iter().map(|o| o.0).sum::<f64>() / n;
    let mean_regret = outcomes.iter().map(|o| o.1).sum::<f64>() / n;
    let stderr = if trials > 1 {
        let var = outcomes.iter().map(|o| (o.0 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let n_experts = outcomes[0].2;
    let m = spec.segments();
    let sigma_star = spec.sigma_star();
    let bound = mse_bound(
        m,
        hyper.gamma,
        hyper.beta,
        spec.horizon,
        n_experts,
        sigma_star,
    )?;
    let bound_transitions = mse_bound(
        m - 1,
        hyper.gamma,
        hyper.beta,
        spec.horizon,
        n_experts,
        sigma_star,
    )?;
    Ok(BoundReport {
        horizon: spec.horizon,
        segments: m,
        sigma_star,
        tau: hyper.tau,
        beta: hyper.beta,
        gamma: hyper.gamma,
        seed: spec.seed,
        trials,
        n_experts,
        empirical_mse: mean,
        stderr,
        mean_regret,
        bound,
        bound_transitions,
        pass: mean + 2.0 * stderr <= bound.total,
    })
}

pub const BOUND_CSV_HEADER: [&str; 20] = [
    "horizon",
    "segments",
    "sigma_star",
    "tau",
    "beta",
    "gamma",
    "seed",
    "trials",
    "n_experts",
    "empirical_mse",
    "stderr",
    "mean_regret",
    "term_experts",
    "term_sharing",
    "term_learning",
    "term_noise",
    "bound",
    "bound_transitions",
    "infinite",
    "pass",
];

pub fn write_bound_csv<W: io::Write>(reports: &[BoundReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BOUND_CSV_HEADER)?;
    for r in reports {
        w.write_record([
            r.horizon.to_string(),
            r.segments.to_string(),
            r.sigma_star.to_string(),
            r.tau.to_string(),
            r.beta.to_string(),
            r.gamma.to_string(),
            r.seed.to_string(),
            r.trials.to_string(),
            r.n_experts.to_string(),
            r.empirical_mse.to_string(),
            r.stderr.to_string(),
            r.mean_regret.to_string(),
            r.bound.experts.to_string(),
            r.bound.sharing.to_string(),
            r.bound.learning.to_string(),
            r.bound.noise.to_string(),
            r.bound.total.to_string(),
            r.bound_transitions.total.to_string(),
            r.flagged_infinite().to_string(),
            r.pass.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<bound csv>", e))?;
    Ok(())
}
