//! Sensing-side estimation pipeline: least-squares channel estimation on the
//! observed cells, low-rank matrix completion of the unobserved ones, a
//! linear-interpolation baseline, the delay-Doppler transform, multi-peak
//! detection with sub-bin refinement, and a tiny-scale exhaustive maximum
//! likelihood reference.
//!
//! Delay-Doppler conventions: with centered indices m_c = m - floor(M/2),
//! n_c = n - floor(N/2), the transform is H~ = Theta_M * H * Theta_N^H with
//!
//! ```text
//! Theta_M[i, m] = exp(+j*2*pi*i*m_c/M) / sqrt(M)
//! Theta_N[j, n] = exp(+j*2*pi*j*n_c/N) / sqrt(N)
//! ```
//!
//! Both factors are unitary, so the transform preserves Frobenius norm and
//! is inverted by the adjoint pair. A target at delay tau and Doppler nu
//! peaks at delay bin i = tau*B and Doppler bin j = nu*N*T (j read modulo N
//! with the upper half as negative frequencies), with magnitude
//! |beta|*sqrt(M*N) on a fully observed grid.

use crate::grid::{AllocationMask, ResourceGrid};
use ndarray::{s, Array1, Array2};
use ndarray_linalg::SVD;
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("waveform is zero on allocated cell ({m}, {n})")]
    ZeroWaveform { m: usize, n: usize },
    #[error("matrix shapes disagree: {0}")]
    ShapeMismatch(String),
    #[error("completion requires at least one observed cell")]
    EmptyObservation,
    #[error("invalid completion settings: {0}")]
    BadCompletion(String),
    #[error("singular value decomposition failed")]
    SvdFailure,
    #[error(
        "maximum-likelihood search needs {points} candidate evaluations on a \
         {cells}-cell grid; caps are {max_points} and {max_cells}"
    )]
    SearchTooLarge { points: usize, cells: usize, max_points: usize, max_cells: usize },
    #[error("maximum-likelihood reference supports 1 or 2 targets, got {k}")]
    UnsupportedTargets { k: usize },
}

/// Channel estimate defined only on observed cells; zeros elsewhere.
#[derive(Debug, Clone)]
pub struct PartialChannel {
    pub values: Array2<Complex64>,
    pub observed: Array2<bool>,
}

impl PartialChannel {
    /// Builds a partial channel, forcing unobserved entries to zero.
    pub fn new(mut values: Array2<Complex64>, observed: Array2<bool>) -> Result<Self, EstimatorError> {
        if values.dim() != observed.dim() {
            return Err(EstimatorError::ShapeMismatch(format!(
                "values {:?} vs observed {:?}",
                values.dim(),
                observed.dim()
            )));
        }
        values.zip_mut_with(&observed, |v, &o| {
            if !o {
                *v = Complex64::new(0.0, 0.0);
            }
        });
        Ok(Self { values, observed })
    }

    pub fn num_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }
}

/// Per-cell least squares: values = R/X on allocated cells, zero elsewhere.
pub fn ls_channel_estimate(
    r: &Array2<Complex64>,
    x: &Array2<Complex64>,
    mask: &AllocationMask,
) -> Result<PartialChannel, EstimatorError> {
    let observed = mask.union();
    if r.dim() != x.dim() || r.dim() != observed.dim() {
        return Err(EstimatorError::ShapeMismatch(format!(
            "rx {:?}, waveform {:?}, mask {:?}",
            r.dim(),
            x.dim(),
            observed.dim()
        )));
    }
    let mut values = Array2::from_elem(r.dim(), Complex64::new(0.0, 0.0));
    for ((m, n), &obs) in observed.indexed_iter() {
        if obs {
            let xs = x[[m, n]];
            if xs.norm_sqr() == 0.0 {
                return Err(EstimatorError::ZeroWaveform { m, n });
            }
            values[[m, n]] = r[[m, n]] / xs;
        }
    }
    Ok(PartialChannel { values, observed })
}

/// Settings for Schatten p-norm completion.
#[derive(Debug, Clone, Copy)]
pub struct CompletionConfig {
    /// Schatten exponent in (0, 1]; 1 recovers nuclear-norm thresholding.
    pub p: f64,
    /// Initial threshold; `None` derives 0.9 x largest singular value of the
    /// zero-filled input.
    pub lambda0: Option<f64>,
    /// Geometric decay of the threshold per iteration, in (0, 1).
    pub rho: f64,
    pub max_iters: usize,
    /// Relative Frobenius-change stopping threshold.
    pub tol: f64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self { p: 0.5, lambda0: None, rho: 0.9, max_iters: 200, tol: 1e-4 }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(EstimatorError::BadCompletion(format!("p = {} outside (0, 1]", self.p)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(EstimatorError::BadCompletion(format!(
                "decay rho = {} outside (0, 1)",
                self.rho
            )));
        }
        if !(self.tol > 0.0) {
            return Err(EstimatorError::BadCompletion(format!("tol = {} not positive", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(EstimatorError::BadCompletion("max_iters = 0".into()));
        }
        if let Some(l0) = self.lambda0 {
            if !(l0 > 0.0) {
                return Err(EstimatorError::BadCompletion(format!(
                    "lambda0 = {l0} not positive"
                )));
            }
        }
        Ok(())
    }
}

/// Output of [`schatten_complete`].
#[derive(Debug, Clone)]
pub struct CompletionResult {
    pub matrix: Array2<Complex64>,
    pub iterations: usize,
    pub converged: bool,
    /// Schatten p-norm surrogate (sum of sigma_i^p) after each thresholding
    /// step, for convergence diagnostics.
    pub surrogates: Vec<f64>,
}

fn svd_reconstruct(
    u: &Array2<Complex64>,
    sv: &Array1<f64>,
    vt: &Array2<Complex64>,
) -> Array2<Complex64> {
    let r = sv.len();
    let mut us = u.slice(s![.., ..r]).to_owned();
    for (k, mut col) in us.columns_mut().into_iter().enumerate() {
        col.map_inplace(|v| *v *= Complex64::new(sv[k], 0.0));
    }
    us.dot(&vt.slice(s![..r, ..]))
}

/// One completion step: p-shrinkage of the singular values followed by exact
/// re-imposition of the observed entries. Returns the new iterate and the
/// surrogate value (sum sigma_i^p) right after thresholding. Exposed as a
/// building block so convergence behavior can be checked step by step.
pub fn schatten_step(
    x: &Array2<Complex64>,
    partial: &PartialChannel,
    lambda: f64,
    p: f64,
) -> Result<(Array2<Complex64>, f64), EstimatorError> {
    let (u, sv, vt) = x.svd(true, true).map_err(|_| EstimatorError::SvdFailure)?;
    let (u, vt) = (u.expect("requested"), vt.expect("requested"));
    let shrunk: Array1<f64> = sv.mapv(|sig| {
        if sig > 0.0 {
            // p = 1 reduces to plain soft thresholding sigma - lambda
            (sig - lambda * sig.powf(p - 1.0)).max(0.0)
        } else {
            0.0
        }
    });
    let surrogate = shrunk.iter().map(|&sig| sig.powf(p)).sum();
    let mut next = svd_reconstruct(&u, &shrunk, &vt);
    for ((m, n), &obs) in partial.observed.indexed_iter() {
        if obs {
            next[[m, n]] = partial.values[[m, n]];
        }
    }
    Ok((next, surrogate))
}

/// Completes a partially observed matrix by iterative singular-value
/// p-shrinkage with a geometrically decaying threshold, re-imposing the
/// observed entries after every step. Observed cells of the output are
/// bit-equal to the input.
pub fn schatten_complete(
    partial: &PartialChannel,
    cfg: &CompletionConfig,
) -> Result<CompletionResult, EstimatorError> {
    cfg.validate()?;
    if partial.num_observed() == 0 {
        return Err(EstimatorError::EmptyObservation);
    }
    let lambda0 = match cfg.lambda0 {
        Some(l0) => l0,
        None => {
            let (_, sv, _) =
                partial.values.svd(false, false).map_err(|_| EstimatorError::SvdFailure)?;
            0.9 * sv[0]
        }
    };
    if !(lambda0 > 0.0) {
        // all-zero observed input: already complete
        return Ok(CompletionResult {
            matrix: partial.values.clone(),
            iterations: 0,
            converged: true,
            surrogates: Vec::new(),
        });
    }

    let mut x = partial.values.clone();
    let mut surrogates = Vec::new();
    for t in 0..cfg.max_iters {
        let lambda = lambda0 * cfg.rho.powi(t as i32);
        let (next, surrogate) = schatten_step(&x, partial, lambda, cfg.p)?;
        surrogates.push(surrogate);
        let prev_norm = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let change = (&next - &x).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        x = next;
        if change <= cfg.tol * prev_norm.max(f64::MIN_POSITIVE) {
            return Ok(CompletionResult {
                matrix: x,
                iterations: t + 1,
                converged: true,
                surrogates,
            });
        }
    }
    Ok(CompletionResult {
        matrix: x,
        iterations: cfg.max_iters,
        converged: false,
        surrogates,
    })
}

/// Output of [`linear_interp_baseline`].
#[derive(Debug, Clone)]
pub struct InterpResult {
    pub matrix: Array2<Complex64>,
    /// Rows with zero observed samples, left as zeros.
    pub empty_rows: Vec<usize>,
}

/// Linear interpolation along the time axis, per subcarrier row: observed
/// samples anchor a piecewise-linear fill (real and imaginary parts
/// separately) with flat extension beyond the first and last anchors. A row
/// with a single observed sample falls back to the nearest observed cell
/// along the frequency axis (same symbol), keeping its own sample where no
/// column neighbor exists. Rows with no observations stay zero and are
/// reported.
pub fn linear_interp_baseline(partial: &PartialChannel) -> InterpResult {
    let (m_dim, n_dim) = partial.values.dim();
    let mut out = partial.values.clone();
    let mut empty_rows = Vec::new();
    for m in 0..m_dim {
        let anchors: Vec<usize> = (0..n_dim).filter(|&n| partial.observed[[m, n]]).collect();
        match anchors.len() {
            0 => empty_rows.push(m),
            1 => {
                let own = partial.values[[m, anchors[0]]];
                for n in 0..n_dim {
                    if partial.observed[[m, n]] {
                        continue;
                    }
                    // nearest observed cell in this column, ties toward lower m
                    let nearest = (0..m_dim)
                        .filter(|&mm| partial.observed[[mm, n]])
                        .min_by_key(|&mm| (mm.abs_diff(m), mm));
                    out[[m, n]] = match nearest {
                        Some(mm) => partial.values[[mm, n]],
                        None => own,
                    };
                }
            }
            _ => {
                for n in 0..anchors[0] {
                    out[[m, n]] = partial.values[[m, anchors[0]]];
                }
                for w in anchors.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    let (va, vb) = (partial.values[[m, a]], partial.values[[m, b]]);
                    for n in a + 1..b {
                        let t = (n - a) as f64 / (b - a) as f64;
                        out[[m, n]] = va + (vb - va) * Complex64::new(t, 0.0);
                    }
                }
                for n in anchors[anchors.len() - 1] + 1..n_dim {
                    out[[m, n]] = partial.values[[m, anchors[anchors.len() - 1]]];
                }
            }
        }
    }
    InterpResult { matrix: out, empty_rows }
}

/// Delay-Doppler representation of a frequency-time channel matrix.
#[derive(Debug, Clone)]
pub struct DdMap {
    pub values: Array2<Complex64>,
    /// Delay per bin: 1/B.
    pub delta_tau_bin: f64,
    /// Doppler per bin: 1/(N*T).
    pub delta_nu_bin: f64,
}

impl DdMap {
    pub fn num_delay_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_doppler_bins(&self) -> usize {
        self.values.ncols()
    }

    /// Doppler bin as a signed frequency index: bins at or above
    /// ceil(N/2) wrap to negative frequencies.
    pub fn signed_doppler_bin(&self, j: usize) -> f64 {
        let n = self.num_doppler_bins();
        if j < n.div_ceil(2) {
            j as f64
        } else {
            j as f64 - n as f64
        }
    }

    pub fn tau_of_bin(&self, i: f64) -> f64 {
        i * self.delta_tau_bin
    }

    pub fn nu_of_signed_bin(&self, j: f64) -> f64 {
        j * self.delta_nu_bin
    }
}

fn fft_cols(values: &mut Array2<Complex64>, inverse: bool) {
    let (m, n) = values.dim();
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse { planner.plan_fft_inverse(m) } else { planner.plan_fft_forward(m) };
    let mut scratch = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..n {
        for i in 0..m {
            scratch[i] = values[[i, j]];
        }
        fft.process(&mut scratch);
        for i in 0..m {
            values[[i, j]] = scratch[i];
        }
    }
}

fn fft_rows(values: &mut Array2<Complex64>, inverse: bool) {
    let (m, n) = values.dim();
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..m {
        for j in 0..n {
            scratch[j] = values[[i, j]];
        }
        fft.process(&mut scratch);
        for j in 0..n {
            values[[i, j]] = scratch[j];
        }
    }
}

/// Maps a frequency-time channel into the delay-Doppler domain. The centered
/// phase reference appears as per-row and per-column phase corrections around
/// plain FFTs; the result is unitary (norm-preserving).
pub fn dd_transform(grid: &ResourceGrid, h: &Array2<Complex64>) -> DdMap {
    let (m, n) = (grid.num_subcarriers(), grid.num_symbols());
    assert_eq!(h.dim(), (m, n), "channel matrix must match the grid");
    let mut v = h.clone();
    // rows: sum_m exp(+j*2*pi*i*m_c/M) H[m, n] = phase(i) * unnormalized IDFT
    fft_cols(&mut v, true);
    let m2 = (m / 2) as f64;
    for (i, mut row) in v.rows_mut().into_iter().enumerate() {
        let ph = Complex64::from_polar(1.0, -TAU * i as f64 * m2 / m as f64);
        row.map_inplace(|x| *x *= ph);
    }
    // columns: sum_n exp(-j*2*pi*j*n_c/N) H[m, n] = phase(j) * forward DFT
    fft_rows(&mut v, false);
    let n2 = (n / 2) as f64;
    for (j, mut col) in v.columns_mut().into_iter().enumerate() {
        let ph = Complex64::from_polar(1.0, TAU * j as f64 * n2 / n as f64);
        col.map_inplace(|x| *x *= ph);
    }
    let scale = Complex64::new(1.0 / (m as f64* n as f64).sqrt(), 0.0);
    v.map_inplace(|x| *x *= scale);
    DdMap {
        values: v,
        delta_tau_bin: grid.delay_resolution(),
        delta_nu_bin: 1.0 / grid.burst_duration(),
    }
}

/// Inverse of [`dd_transform`]; round trips to the input within numerical
/// precision.
pub fn inverse_dd_transform(grid: &ResourceGrid, map: &DdMap) -> Array2<Complex64> {
    let (m, n) = (grid.num_subcarriers(), grid.num_symbols());
    assert_eq!(map.values.dim(), (m, n), "map must match the grid");
    let mut v = map.values.clone();
    let m2 = (m / 2) as f64;
    for (i, mut row) in v.rows_mut().into_iter().enumerate() {
        let ph = Complex64::from_polar(1.0, TAU * i as f64 * m2 / m as f64);
        row.map_inplace(|x| *x *= ph);
    }
    fft_cols(&mut v, false);
    let n2 = (n / 2) as f64;
    for (j, mut col) in v.columns_mut().into_iter().enumerate() {
        let ph = Complex64::from_polar(1.0, -TAU * j as f64 * n2 / n as f64);
        col.map_inplace(|x| *x *= ph);
    }
    fft_rows(&mut v, true);
    let scale = Complex64::new(1.0 / (m as f64 * n as f64).sqrt(), 0.0);
    v.map_inplace(|x| *x *= scale);
    v
}

/// Peak detection settings.
#[derive(Debug, Clone, Copy)]
pub struct PeakConfig {
    /// Chebyshev radius (bins) suppressed around each accepted peak.
    pub guard: usize,
    /// Three-point parabolic sub-bin refinement per axis.
    pub refine: bool,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self { guard: 2, refine: true }
    }
}

/// Delay/Doppler estimates from peak picking.
#[derive(Debug, Clone)]
pub struct Detection {
    pub tau_hat: Vec<f64>,
    pub nu_hat: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub refined: bool,
    /// Set when fewer than the requested number of peaks exist.
    pub shortfall: bool,
}

fn parabolic_offset(y_minus: f64, y0: f64, y_plus: f64) -> f64 {
    let denom = y_minus - 2.0 * y0 + y_plus;
    if denom.abs() <= 1e-12 * y0.abs().max(f64::MIN_POSITIVE) {
        return 0.0;
    }
    (0.5 * (y_minus - y_plus) / denom).clamp(-0.5, 0.5)
}

/// Picks the `k` strongest strict local maxima of |map| (8-neighborhood,
/// cyclic at the borders since the DD domain is periodic), each suppressing
/// its guard neighborhood. Bin positions are optionally refined per axis by
/// parabolic interpolation, then converted to delay/Doppler.
pub fn detect_peaks(map: &DdMap, k: usize, cfg: &PeakConfig) -> Detection {
    assert!(k >= 1, "ask for at least one peak");
    let (m, n) = map.values.dim();
    let mag = map.values.mapv(|v| v.norm());
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let v = mag[[i, j]];
            let mut is_peak = v > 0.0;
            'nb: for di in [m - 1, 0, 1] {
                for dj in [n - 1, 0, 1] {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    if mag[[(i + di) % m, (j + dj) % n]] >= v {
                        is_peak = false;
                        break 'nb;
                    }
                }
            }
            if is_peak {
                candidates.push((v, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).expect("finite magnitudes").then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });

    let cyc_dist = |a: usize, b: usize, len: usize| {
        let d = a.abs_diff(b);
        d.min(len - d)
    };
    let mut picked: Vec<(f64, usize, usize)> = Vec::new();
    for &(v, i, j) in &candidates {
        if picked.len() == k {
            break;
        }
        let masked = picked.iter().any(|&(_, pi, pj)| {
            cyc_dist(i, pi, m) <= cfg.guard && cyc_dist(j, pj, n) <= cfg.guard
        });
        if !masked {
            picked.push((v, i, j));
        }
    }

    let mut detection = Detection {
        tau_hat: Vec::with_capacity(picked.len()),
        nu_hat: Vec::with_capacity(picked.len()),
        magnitudes: Vec::with_capacity(picked.len()),
        refined: cfg.refine,
        shortfall: picked.len() < k,
    };
    let nu_max = 0.5 * n as f64 * map.delta_nu_bin;
    for &(v, i, j) in &picked {
        let (mut di, mut dj) = (0.0, 0.0);
        if cfg.refine {
            di = parabolic_offset(mag[[(i + m - 1) % m, j]], v, mag[[(i + 1) % m, j]]);
            dj = parabolic_offset(mag[[i, (j + n - 1) % n]], v, mag[[i, (j + 1) % n]]);
        }
        let tau = map
            .tau_of_bin(i as f64 + di)
            .clamp(0.0, (m as f64 - 0.5) * map.delta_tau_bin);
        let nu = map
            .nu_of_signed_bin(map.signed_doppler_bin(j) + dj)
            .clamp(-nu_max, nu_max);
        detection.tau_hat.push(tau);
        detection.nu_hat.push(nu);
        detection.magnitudes.push(v);
    }
    detection
}

/// Caps for [`ml_estimate`].
pub const ML_MAX_CELLS: usize = 4096;
pub const ML_MAX_POINTS: usize = 10_000;

/// Exhaustive maximum-likelihood reference for one or two targets: scans the
/// candidate delay/Doppler grid, fits amplitudes per candidate by linear
/// least squares on the allocated cells, and returns the residual-minimizing
/// combination. Deliberately brute force; guarded by size caps.
pub fn ml_estimate(
    r: &Array2<Complex64>,
    x: &Array2<Complex64>,
    grid: &ResourceGrid,
    k: usize,
    delays: &[f64],
    dopplers: &[f64],
) -> Result<Detection, EstimatorError> {
    if r.dim() != x.dim() {
        return Err(EstimatorError::ShapeMismatch(format!("rx {:?} vs waveform {:?}", r.dim(), x.dim())));
    }
    let cells = grid.num_resources();
    let points = delays.len() * dopplers.len();
    let evals = match k {
        1 => points,
        2 => points * points.saturating_sub(1) / 2,
        _ => return Err(EstimatorError::UnsupportedTargets { k }),
    };
    if cells > ML_MAX_CELLS || evals > ML_MAX_POINTS || evals == 0 {
        return Err(EstimatorError::SearchTooLarge {
            points: evals,
            cells,
            max_points: ML_MAX_POINTS,
            max_cells: ML_MAX_CELLS,
        });
    }

    let allocated: Vec<(usize, usize)> = x
        .indexed_iter()
        .filter_map(|((m, n), v)| (v.norm_sqr() > 0.0).then_some((m, n)))
        .collect();
    let t_sym = grid.symbol_duration();
    // candidate responses on the allocated cells, premultiplied by X
    let response = |tau: f64, nu: f64| -> Vec<Complex64> {
        allocated
            .iter()
            .map(|&(m, n)| {
                let phase = TAU
                    * (nu * grid.centered_time(n) * t_sym
                        - tau * grid.centered_freq(m) * grid.delta_f());
                x[[m, n]] * Complex64::from_polar(1.0, phase)
            })
            .collect()
    };
    let rv: Vec<Complex64> = allocated.iter().map(|&(m, n)| r[[m, n]]).collect();

    let candidates: Vec<(f64, f64)> = delays
        .iter()
        .flat_map(|&tau| dopplers.iter().map(move |&nu| (tau, nu)))
        .collect();
    let responses: Vec<Vec<Complex64>> = candidates
        .iter()
        .map(|&(tau, nu)| response(tau, nu))
        .collect();

    let dot = |a: &[Complex64], b: &[Complex64]| -> Complex64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    };

    let mut best: Option<(f64, Vec<usize>, Vec<Complex64>)> = None;
    let mut consider = |ids: Vec<usize>| {
        let betas: Vec<Complex64> = match ids.len() {
            1 => {
                let a = &responses[ids[0]];
                let g = dot(a, a).re;
                if g <= 0.0 {
                    return;
                }
                vec![dot(a, &rv) / g]
            }
            2 => {
                let (a1, a2) = (&responses[ids[0]], &responses[ids[1]]);
                let g11 = dot(a1, a1).re;
                let g22 = dot(a2, a2).re;
                let g12 = dot(a1, a2);
                let det = g11 * g22 - g12.norm_sqr();
                if det <= 1e-12 * g11 * g22 {
                    return; // candidates indistinguishable on these cells
                }
                let b1 = dot(a1, &rv);
                let b2 = dot(a2, &rv);
                vec![(b1 * g22 - g12 * b2) / det, (b2 * g11 - g12.conj() * b1) / det]
            }
            _ => unreachable!(),
        };
        // residual = ||r - A beta||^2, computed directly for robustness
        let mut residual = 0.0;
        for (c, &rvc) in rv.iter().enumerate() {
            let mut fit = Complex64::new(0.0, 0.0);
            for (t, &id) in ids.iter().enumerate() {
                fit += betas[t] * responses[id][c];
            }
            residual += (rvc - fit).norm_sqr();
        }
        if best.as_ref().map_or(true, |(b, _, _)| residual < *b) {
            best = Some((residual, ids, betas));
        }
    };

    match k {
        1 => {
            for id in 0..candidates.len() {
                consider(vec![id]);
            }
        }
        2 => {
            for a in 0..candidates.len() {
                for b in a + 1..candidates.len() {
                    consider(vec![a, b]);
                }
            }
        }
        _ => unreachable!(),
    }

    let (_, ids, betas) = best.expect("at least one candidate was evaluated");
    Ok(Detection {
        tau_hat: ids.iter().map(|&id| candidates[id].0).collect(),
        nu_hat: ids.iter().map(|&id| candidates[id].1).collect(),
        magnitudes: betas.iter().map(|b| b.norm()).collect(),
        refined: false,
        shortfall: false,
    })
}
