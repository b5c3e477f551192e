//! Kernel-weighted time-varying Gaussian model and the log-determinant
//! conditional mutual information estimator.
//!
//! Samples are rows of a data matrix, each tagged with an integer sample time.
//! The mean and covariance at time `t` are RBF-weighted averages over rows
//! whose time lies within `support_cutoff * h` of `t`. The scatter is taken
//! around each row's own kernel mean (per-sample centering) by default, which
//! strips slow trends out of the covariance; [`Centering::PerWindow`] centres
//! on the mean at `t` instead.
//!
//! For a joint Gaussian, `I(X; Y | Z) = ½ ln |Σ_{Y|Z}| / |Σ_{Y|Z,X}|` in nats,
//! with conditional covariances given by Schur complements.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `exp(-u² / 2h²)`.
pub fn rbf_kernel(u: f64, h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    Ok((-(u * u) / (2.0 * h * h)).exp())
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && !h.is_nan() {
        Ok(())
    } else {
        Err(Error::param(
            "bandwidth",
            format!("must be positive, got {h}"),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowMode {
    /// Use samples on both sides of `t`.
    #[default]
    Offline,
    /// Only samples at or before `t`.
    Causal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    #[default]
    PerSample,
    PerWindow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptions {
    pub bandwidth: f64,
    pub mode: WindowMode,
    pub centering: Centering,
    /// Kernel support half-width in bandwidths.
    pub support_cutoff: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions {
            bandwidth: 5.0,
            mode: WindowMode::Offline,
            centering: Centering::PerSample,
            support_cutoff: 4.0,
        }
    }
}

impl KernelOptions {
    pub fn validate(&self) -> Result<()> {
        check_bandwidth(self.bandwidth)?;
        if !(self.support_cutoff > 0.0) {
            return Err(Error::param("support_cutoff", "must be positive"));
        }
        Ok(())
    }

    fn in_support(&self, row_time: i64, t: i64) -> bool {
        if self.mode == WindowMode::Causal && row_time > t {
            return false;
        }
        ((row_time - t).abs() as f64) <= self.support_cutoff * self.bandwidth
    }

    /// Row indices and kernel weights of the window centred at `t`.
    fn window(&self, times: &[i64], t: i64) -> Vec<(usize, f64)> {
        let h = self.bandwidth;
        times
            .iter()
            .enumerate()
            .filter(|(_, &s)| self.in_support(s, t))
            .map(|(r, &s)| {
                let u = (s - t) as f64;
                (r, (-(u * u) / (2.0 * h * h)).exp())
            })
            .collect()
    }
}

fn check_shape(data: &DMatrix<f64>, times: &[i64]) -> Result<()> {
    if data.nrows() != times.len() {
        return Err(Error::Domain(format!(
            "{} rows but {} sample times",
            data.nrows(),
            times.len()
        )));
    }
    if data.nrows() == 0 {
        return Err(Error::Domain("empty data matrix".into()));
    }
    Ok(())
}

fn weighted_mean(data: &DMatrix<f64>, window: &[(usize, f64)]) -> Option<DVector<f64>> {
    let total: f64 = window.iter().map(|(_, w)| w).sum();
    if window.is_empty() || total <= 0.0 {
        return None;
    }
    let mut mean = DVector::zeros(data.ncols());
    for &(r, w) in window {
        mean.axpy(w / total, &data.row(r).transpose(), 1.0);
    }
    Some(mean)
}

/// Kernel-weighted mean row at time `t`.
pub fn kernel_mean(
    data: &DMatrix<f64>,
    times: &[i64],
    t: i64,
    opts: &KernelOptions,
) -> Result<DVector<f64>> {
    opts.validate()?;
    check_shape(data, times)?;
    weighted_mean(data, &opts.window(times, t))
        .ok_or_else(|| Error::Domain(format!("no samples in the kernel support of t={t}")))
}

/// Kernel-weighted covariance at time `t`, plus `ridge` on the diagonal.
pub fn kernel_cov(
    data: &DMatrix<f64>,
    times: &[i64],
    t: i64,
    ridge: f64,
    opts: &KernelOptions,
) -> Result<DMatrix<f64>> {
    opts.validate()?;
    check_shape(data, times)?;
    if !(ridge >= 0.0) {
        return Err(Error::param(
            "ridge",
            format!("must be non-negative, got {ridge}"),
        ));
    }
    let window = opts.window(times, t);
    if window.len() < 2 {
        return Err(Error::Domain(format!(
            "kernel covariance at t={t} needs at least 2 samples, found {}",
            window.len()
        )));
    }
    let total: f64 = window.iter().map(|(_, w)| w).sum();
    let d = data.ncols();
    let window_mean = match opts.centering {
        Centering::PerWindow => weighted_mean(data, &window),
        Centering::PerSample => None,
    };
    let mut cov = DMatrix::zeros(d, d);
    for &(r, w) in &window {
        let centre = match &window_mean {
            Some(m) => m.clone(),
            None => weighted_mean(data, &opts.window(times, times[r]))
                .expect("a row lies in its own window"),
        };
        let dev = data.row(r).transpose() - centre;
        cov.ger(w / total, &dev, &dev, 1.0);
    }
    symmetrize(&mut cov);
    for k in 0..d {
        cov[(k, k)] += ridge;
    }
    Ok(cov)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Diagonal loading applied before any inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    Fixed(f64),
    /// `max(scale * trace(Σ) / D, floor)`.
    TraceScaled {
        scale: f64,
        floor: f64,
    },
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::TraceScaled {
            scale: 1e-6,
            floor: 1e-9,
        }
    }
}

impl Ridge {
    pub fn resolve(&self, cov: &DMatrix<f64>) -> f64 {
        match *self {
            Ridge::Fixed(r) => r,
            Ridge::TraceScaled { scale, floor } => {
                let d = cov.nrows().max(1) as f64;
                (scale * cov.trace() / d).max(floor)
            }
        }
    }
}

/// Kernel mean and ridge-loaded covariance at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianWindow {
    pub t: i64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub bandwidth: f64,
    pub ridge: f64,
}

impl GaussianWindow {
    pub fn fit(
        data: &DMatrix<f64>,
        times: &[i64],
        t: i64,
        opts: &KernelOptions,
        ridge: Ridge,
    ) -> Result<Self> {
        let mean = kernel_mean(data, times, t, opts)?;
        let mut cov = kernel_cov(data, times, t, 0.0, opts)?;
        let lambda = ridge.resolve(&cov);
        for k in 0..cov.nrows() {
            cov[(k, k)] += lambda;
        }
        Ok(GaussianWindow {
            t,
            mean,
            cov,
            bandwidth: opts.bandwidth,
            ridge: lambda,
        })
    }
}

/// Ordered coordinates of the joint vector playing one role in a CMI query.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain(format!("repeated index in {indices:?}")));
        }
        Ok(IndexSet(indices))
    }

    pub fn range(range: std::ops::Range<usize>) -> Self {
        IndexSet(range.collect())
    }

    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_disjoint(&self, other: &IndexSet) -> bool {
        self.0.iter().all(|i| !other.0.contains(i))
    }

    pub fn union(&self, other: &IndexSet) -> IndexSet {
        let mut v = self.0.clone();
        v.extend(other.0.iter().filter(|i| !self.0.contains(i)));
        IndexSet(v)
    }

    fn check_bounds(&self, dim: usize) -> Result<()> {
        match self.0.iter().find(|&&i| i >= dim) {
            Some(i) => Err(Error::Domain(format!(
                "index {i} out of range for dimension {dim}"
            ))),
            None => Ok(()),
        }
    }
}

fn block(cov: &DMatrix<f64>, rows: &IndexSet, cols: &IndexSet) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| cov[(rows.0[r], cols.0[c])])
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let eig = m.clone().symmetric_eigenvalues();
    let hi = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let lo = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Schur complement `Σ_YY − Σ_YZ Σ_ZZ⁻¹ Σ_ZY`.
pub fn conditional_cov(cov: &DMatrix<f64>, y: &IndexSet, z: &IndexSet) -> Result<DMatrix<f64>> {
    let dim = cov.nrows();
    if cov.ncols() != dim {
        return Err(Error::Domain("covariance must be square".into()));
    }
    y.check_bounds(dim)?;
    z.check_bounds(dim)?;
    if !y.is_disjoint(z) {
        return Err(Error::Domain(
            "conditioned and conditioning sets overlap".into(),
        ));
    }
    let syy = block(cov, y, y);
    if z.is_empty() {
        return Ok(syy);
    }
    let szz = block(cov, z, z);
    let chol = szz.clone().cholesky().ok_or_else(|| Error::Numerical {
        message: "conditioning block is not positive definite".into(),
        condition: condition_estimate(&szz),
        time: None,
    })?;
    let szy = block(cov, z, y);
    let w = chol
        .l()
        .solve_lower_triangular(&szy)
        .expect("cholesky factor has a positive diagonal");
    let mut s = syy - w.transpose() * w;
    symmetrize(&mut s);
    Ok(s)
}

fn log_det_pd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    let chol = m.clone().cholesky().ok_or_else(|| Error::Numerical {
        message: format!("{what} is not positive definite"),
        condition: condition_estimate(m),
        time: None,
    })?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// `I(X; Y | Z)` in nats under the Gaussian model with covariance `cov`.
pub fn gaussian_cmi(cov: &DMatrix<f64>, x: &IndexSet, y: &IndexSet, z: &IndexSet) -> Result<f64> {
    if !(x.is_disjoint(y) && x.is_disjoint(z) && y.is_disjoint(z)) {
        return Err(Error::Domain("X, Y and Z must be pairwise disjoint".into()));
    }
    if y.is_empty() {
        return Err(Error::Domain("target set Y is empty".into()));
    }
    let given_z = conditional_cov(cov, y, z)?;
    let given_zx = conditional_cov(cov, y, &z.union(x))?;
    let ld_z = log_det_pd(&given_z, "Σ_{Y|Z}")?;
    let ld_zx = log_det_pd(&given_zx, "Σ_{Y|Z,X}")?;
    let cmi = 0.5 * (ld_z - ld_zx);
    if cmi >= 0.0 {
        Ok(cmi)
    } else if cmi > -1e-9 * (1.0 + ld_z.abs()) {
        Ok(0.0)
    } else {
        Err(Error::Numerical {
            message: format!("negative conditional mutual information {cmi:.3e}"),
            condition: condition_estimate(cov),
            time: None,
        })
    }
}
