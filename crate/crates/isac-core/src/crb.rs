//! Fisher information and Cramer-Rao bounds for joint delay/Doppler
//! estimation of K coupled targets observed through an allocation mask.
//!
//! With centered indices m_c, n_c and the per-pair coupled responses
//!
//! ```text
//! u_kl[m] = exp(-j*2*pi*m_c*delta_f*(tau_l - tau_k))
//! v_kl[n] = exp(+j*2*pi*n_c*T*(nu_l - nu_k))
//! z_kl(m, n) = conj(beta_k)*beta_l*u_kl[m]*v_kl[n]
//! ```
//!
//! the blocks of the 2K x 2K information matrix, summed over allocated
//! cells with c = 2*sigma^2/sigma_w^2, are
//!
//! ```text
//! F_tau[k,l]    = c * 4pi^2 * delta_f^2 * sum m_c^2       * Re(z_kl)
//! F_nu[k,l]     = c * 4pi^2 * T^2       * sum n_c^2       * Re(z_kl)
//! F_nu_tau[k,l] = -c * 4pi^2 * delta_f*T * sum m_c * n_c  * Re(z_kl)
//! ```
//!
//! F_nu_tau[k,l] couples nu_k (row) to tau_l (column). The signs follow
//! from differentiating the Gaussian log-likelihood of the receive model;
//! the finite-difference oracle in the test suite pins them down.

use crate::grid::{ResourceGrid, TargetParams};
use ndarray::Array2;
use ndarray_linalg::{Eigh, Inverse, UPLO};
use num_complex::Complex64;
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Condition-number cap above which a block is reported ill-conditioned
/// rather than silently inverted.
pub const MAX_CONDITION: f64 = 1.0e12;

#[derive(Debug, Error)]
pub enum CrbError {
    #[error("at least one target required")]
    NoTargets,
    #[error("mask shape {found:?} does not match grid {expected:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("{block} is singular")]
    Singular { block: &'static str },
    #[error("{block} is ill-conditioned (condition number {cond:.3e})")]
    IllConditioned { block: &'static str, cond: f64 },
}

/// Delay and Doppler phase responses of one target across the grid.
#[derive(Debug, Clone)]
pub struct SteeringPair {
    pub d_tau: Vec<Complex64>,
    pub d_nu: Vec<Complex64>,
}

/// d_tau[i] = exp(-j*2*pi*m_i*delta_f*tau), d_nu[i] = exp(+j*2*pi*n_i*T*nu)
/// over the centered index vectors of the grid.
pub fn steering_vectors(grid: &ResourceGrid, tau: f64, nu: f64) -> SteeringPair {
    let t = grid.symbol_duration();
    let d_tau = (0..grid.num_subcarriers())
        .map(|m| Complex64::from_polar(1.0, -TAU * grid.centered_freq(m) * grid.delta_f() * tau))
        .collect();
    let d_nu = (0..grid.num_symbols())
        .map(|n| Complex64::from_polar(1.0, TAU * grid.centered_time(n) * t * nu))
        .collect();
    SteeringPair { d_tau, d_nu }
}

/// Cross-coupled responses d_k (*) conj(d_l) for a target pair.
pub fn coupled_responses(
    pair_k: &SteeringPair,
    pair_l: &SteeringPair,
) -> (Vec<Complex64>, Vec<Complex64>) {
    assert_eq!(pair_k.d_tau.len(), pair_l.d_tau.len(), "steering pairs from different grids");
    assert_eq!(pair_k.d_nu.len(), pair_l.d_nu.len(), "steering pairs from different grids");
    let d_tau_kl = pair_k
        .d_tau
        .iter()
        .zip(&pair_l.d_tau)
        .map(|(a, b)| a * b.conj())
        .collect();
    let d_nu_kl = pair_k
        .d_nu
        .iter()
        .zip(&pair_l.d_nu)
        .map(|(a, b)| a * b.conj())
        .collect();
    (d_tau_kl, d_nu_kl)
}

/// K x K blocks of the Fisher information matrix.
#[derive(Debug, Clone)]
pub struct FimBlocks {
    pub f_tau: Array2<f64>,
    pub f_nu: Array2<f64>,
    /// Cross block; entry (k, l) couples nu_k to tau_l.
    pub f_nu_tau: Array2<f64>,
    pub sigma2: f64,
    pub sigma_w2: f64,
    /// Number of allocated cells the blocks were accumulated over.
    pub allocated: usize,
}

impl FimBlocks {
    pub fn zeros(k: usize, sigma2: f64, sigma_w2: f64) -> Self {
        Self {
            f_tau: Array2::zeros((k, k)),
            f_nu: Array2::zeros((k, k)),
            f_nu_tau: Array2::zeros((k, k)),
            sigma2,
            sigma_w2,
            allocated: 0,
        }
    }

    pub fn num_targets(&self) -> usize {
        self.f_tau.nrows()
    }

    /// True when too few cells are allocated for the 2K x 2K matrix to be
    /// nonsingular; carried as a warning, inversion errors make it hard.
    pub fn degenerate(&self) -> bool {
        self.allocated < 2 * self.num_targets()
    }

    /// Assembles the full 2K x 2K matrix [[F_tau, F_nu_tau^T], [F_nu_tau, F_nu]]
    /// in the parameter order (tau_1..tau_K, nu_1..nu_K).
    pub fn assembled(&self) -> Array2<f64> {
        let k = self.num_targets();
        let mut f = Array2::zeros((2 * k, 2 * k));
        for i in 0..k {
            for j in 0..k {
                f[[i, j]] = self.f_tau[[i, j]];
                f[[k + i, k + j]] = self.f_nu[[i, j]];
                f[[k + i, j]] = self.f_nu_tau[[i, j]];
                f[[j, k + i]] = self.f_nu_tau[[i, j]];
            }
        }
        f
    }

    pub fn add_assign(&mut self, other: &FimBlocks) {
        self.f_tau += &other.f_tau;
        self.f_nu += &other.f_nu;
        self.f_nu_tau += &other.f_nu_tau;
        self.allocated += other.allocated;
    }
}

/// Precomputed per-pair phasor tables; turns per-cell FIM contributions into
/// table lookups so masks can be scored cheaply.
pub struct FimAccumulator {
    k: usize,
    /// u[k*K + l][m], v[k*K + l][n], bb[k*K + l] = conj(beta_k)*beta_l
    u: Vec<Vec<Complex64>>,
    v: Vec<Vec<Complex64>>,
    bb: Vec<Complex64>,
    w_tau: f64,
    w_nu: f64,
    w_cross: f64,
    m_idx: Vec<f64>,
    n_idx: Vec<f64>,
    sigma2: f64,
    sigma_w2: f64,
}

impl FimAccumulator {
    pub fn new(
        grid: &ResourceGrid,
        targets: &[TargetParams],
        sigma2: f64,
        sigma_w2: f64,
    ) -> Result<Self, CrbError> {
        if targets.is_empty() {
            return Err(CrbError::NoTargets);
        }
        let k = targets.len();
        let (m, n) = (grid.num_subcarriers(), grid.num_symbols());
        let t_sym = grid.symbol_duration();
        let coef = 2.0 * sigma2 / sigma_w2;
        let mut u = Vec::with_capacity(k * k);
        let mut v = Vec::with_capacity(k * k);
        let mut bb = Vec::with_capacity(k * k);
        for a in targets {
            for b in targets {
                let dtau = b.tau - a.tau;
                let dnu = b.nu - a.nu;
                u.push(
                    (0..m)
                        .map(|i| {
                            Complex64::from_polar(
                                1.0,
                                -TAU * grid.centered_freq(i) * grid.delta_f() * dtau,
                            )
                        })
                        .collect(),
                );
                v.push(
                    (0..n)
                        .map(|j| {
                            Complex64::from_polar(1.0, TAU * grid.centered_time(j) * t_sym * dnu)
                        })
                        .collect(),
                );
                bb.push(a.beta.conj() * b.beta);
            }
        }
        Ok(Self {
            k,
            u,
            v,
            bb,
            w_tau: coef * 4.0 * PI * PI * grid.delta_f() * grid.delta_f(),
            w_nu: coef * 4.0 * PI * PI * t_sym * t_sym,
            w_cross: coef * 4.0 * PI * PI * grid.delta_f() * t_sym,
            m_idx: (0..m).map(|i| grid.centered_freq(i)).collect(),
            n_idx: (0..n).map(|j| grid.centered_time(j)).collect(),
            sigma2,
            sigma_w2,
        })
    }

    pub fn zero_blocks(&self) -> FimBlocks {
        FimBlocks::zeros(self.k, self.sigma2, self.sigma_w2)
    }

    /// Adds cell (m, n)'s information to the blocks.
    pub fn add_cell(&self, blocks: &mut FimBlocks, m: usize, n: usize) {
        let (mc, nc) = (self.m_idx[m], self.n_idx[n]);
        for k in 0..self.k {
            for l in 0..self.k {
                let p = k * self.k + l;
                let re = (self.bb[p] * self.u[p][m] * self.v[p][n]).re;
                blocks.f_tau[[k, l]] += self.w_tau * mc * mc * re;
                blocks.f_nu[[k, l]] += self.w_nu * nc * nc * re;
                blocks.f_nu_tau[[k, l]] -= self.w_cross * mc * nc * re;
            }
        }
        blocks.allocated += 1;
    }
}

/// Fisher information of the targets observed over the allocated cells of
/// `union`. Cells are accumulated in vectorization order (frequency fastest)
/// so results are bit-reproducible.
pub fn fim(
    grid: &ResourceGrid,
    union: &Array2<bool>,
    targets: &[TargetParams],
    sigma2: f64,
    sigma_w2: f64,
) -> Result<FimBlocks, CrbError> {
    let expected = (grid.num_subcarriers(), grid.num_symbols());
    if union.dim() != expected {
        return Err(CrbError::ShapeMismatch { expected, found: union.dim() });
    }
    let acc = FimAccumulator::new(grid, targets, sigma2, sigma_w2)?;
    let mut blocks = acc.zero_blocks();
    for n in 0..expected.1 {
        for m in 0..expected.0 {
            if union[[m, n]] {
                acc.add_cell(&mut blocks, m, n);
            }
        }
    }
    Ok(blocks)
}

/// Delay and Doppler CRB matrices (s^2 and Hz^-2 units).
#[derive(Debug, Clone)]
pub struct CrbMatrices {
    pub c_tau: Array2<f64>,
    pub c_nu: Array2<f64>,
}

impl CrbMatrices {
    pub fn tr_tau(&self) -> f64 {
        self.c_tau.diag().sum()
    }

    pub fn tr_nu(&self) -> f64 {
        self.c_nu.diag().sum()
    }
}

fn checked_inv(m: &Array2<f64>, block: &'static str) -> Result<Array2<f64>, CrbError> {
    // SVD-based condition estimate; LAPACK's LU happily inverts matrices
    // that are singular to working precision.
    use ndarray_linalg::SVD;
    let (_, s, _) = m.svd(false, false).map_err(|_| CrbError::Singular { block })?;
    let (smax, smin) = (s[0], s[s.len() - 1]);
    if smin <= 0.0 {
        return Err(CrbError::Singular { block });
    }
    let cond = smax / smin;
    if cond > MAX_CONDITION {
        return Err(CrbError::IllConditioned { block, cond });
    }
    m.inv().map_err(|_| CrbError::Singular { block })
}

/// CRB matrices from the FIM blocks via Schur complements. With
/// F = [[F_tau, F_nu_tau^T], [F_nu_tau, F_nu]], the delay and Doppler CRBs
/// are the corresponding diagonal blocks of F^-1:
///
/// ```text
/// C_tau = (F_tau - F_nu_tau^T * F_nu^-1  * F_nu_tau)^-1
/// C_nu  = (F_nu  - F_nu_tau   * F_tau^-1 * F_nu_tau^T)^-1
/// ```
pub fn crb(blocks: &FimBlocks) -> Result<CrbMatrices, CrbError> {
    let f_nu_inv = checked_inv(&blocks.f_nu, "F_nu")?;
    let f_tau_inv = checked_inv(&blocks.f_tau, "F_tau")?;
    let cross = &blocks.f_nu_tau;
    let schur_tau = &blocks.f_tau - &cross.t().dot(&f_nu_inv).dot(cross);
    let schur_nu = &blocks.f_nu - &cross.dot(&f_tau_inv).dot(&cross.t());
    let c_tau = checked_inv(&schur_tau, "delay Schur complement")?;
    let c_nu = checked_inv(&schur_nu, "Doppler Schur complement")?;
    Ok(CrbMatrices { c_tau, c_nu })
}

/// Weighted design objective: eps_tau * tr(C_tau)/dtau^2 + eps_nu * tr(C_nu)/dnu^2,
/// dimensionless by normalization with the delay/Doppler resolutions.
pub fn design_objective(
    c: &CrbMatrices,
    eps_tau: f64,
    eps_nu: f64,
    delta_tau: f64,
    delta_nu: f64,
) -> f64 {
    eps_tau * c.tr_tau() / (delta_tau * delta_tau) + eps_nu * c.tr_nu() / (delta_nu * delta_nu)
}

/// CRB gain of an optimized design over a baseline: tr(C_tau,base)/tr(C_tau,opt).
pub fn crb_gain(baseline: &CrbMatrices, optimized: &CrbMatrices) -> f64 {
    baseline.tr_tau() / optimized.tr_tau()
}

/// Verifies positive semidefiniteness of the assembled FIM up to a relative
/// eigenvalue tolerance. Exposed for tests and the validate subcommand.
pub fn assembled_is_psd(blocks: &FimBlocks, rel_tol: f64) -> bool {
    let f = blocks.assembled();
    let scale = f.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    match f.eigh(UPLO::Lower) {
        Ok((vals, _)) => vals.iter().all(|&v| v >= -rel_tol * scale.max(1e-300)),
        Err(_) => false,
    }
}

/// Column-major cell order helper: the l-th vectorized cell is (m, n) with
/// l = m + M*n.
pub fn vec_index(grid: &ResourceGrid, l: usize) -> (usize, usize) {
    let m = grid.num_subcarriers();
    (l % m, l / m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sensing_channel;
    use crate::grid::ResourceGrid;
    use crate::rng::derive_stream;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn grid(m: usize, n: usize) -> ResourceGrid {
        ResourceGrid::new(m, n, 1.0e6, 1.0e-6).unwrap()
    }

    fn full_mask(g: &ResourceGrid) -> Array2<bool> {
        Array2::from_elem((g.num_subcarriers(), g.num_symbols()), true)
    }

    fn random_mask(g: &ResourceGrid, fill: f64, seed: u64) -> Array2<bool> {
        let mut rng = derive_stream(seed, "test-mask", &[]);
        let mut mask = Array2::from_shape_simple_fn(
            (g.num_subcarriers(), g.num_symbols()),
            || rng.gen::<f64>() < fill,
        );
        mask[[0, 0]] = true; // never empty
        mask
    }

    fn random_targets(k: usize, g: &ResourceGrid, seed: u64) -> Vec<TargetParams> {
        let mut rng = derive_stream(seed, "test-targets", &[]);
        (0..k)
            .map(|_| {
                TargetParams::new(
                    Complex64::new(rng.gen_range(0.2..1.0), rng.gen_range(-1.0..1.0)),
                    rng.gen_range(0.05e-6..0.9e-6),
                    rng.gen_range(-3.0e5..3.0e5),
                )
            })
            .collect()
    }

    /// Finite-difference Fisher information from the exact Gaussian
    /// log-likelihood of the receive model: F_ij = (2/sigma_w^2) *
    /// Re{<d mu/d theta_i, d mu/d theta_j>} with mu = X (*) H(theta) and the
    /// derivatives taken by central differences on the noiseless mean.
    pub(super) fn fd_fim(
        g: &ResourceGrid,
        union: &Array2<bool>,
        targets: &[TargetParams],
        sigma2: f64,
        sigma_w2: f64,
    ) -> Array2<f64> {
        let k = targets.len();
        // all-ones symbols: a valid unit-modulus draw; the FIM only sees |X|^2
        let sigma = sigma2.sqrt();
        let x = Array2::from_shape_fn(union.dim(), |(m, n)| {
            if union[[m, n]] {
                Complex64::new(sigma, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let mu = |ts: &[TargetParams]| -> Array2<Complex64> {
            &x * &sensing_channel(g, ts).expect("perturbed targets stay in the valid window")
        };
        let h_tau = 1.0e-4 * g.delay_resolution();
        let h_nu = 1.0e-4 / g.burst_duration();
        let mut derivs: Vec<Array2<Complex64>> = Vec::with_capacity(2 * k);
        for i in 0..2 * k {
            let (j, h) = (i % k, if i < k { h_tau } else { h_nu });
            let mut plus = targets.to_vec();
            let mut minus = targets.to_vec();
            if i < k {
                plus[j].tau += h;
                minus[j].tau -= h;
            } else {
                plus[j].nu += h;
                minus[j].nu -= h;
            }
            let diff = (&mu(&plus) - &mu(&minus)) / Complex64::new(2.0 * h, 0.0);
            derivs.push(diff);
        }
        let mut f = Array2::zeros((2 * k, 2 * k));
        for i in 0..2 * k {
            for j in 0..2 * k {
                let inner: Complex64 =
                    derivs[i].iter().zip(derivs[j].iter()).map(|(a, b)| a.conj() * b).sum();
                f[[i, j]] = 2.0 / sigma_w2 * inner.re;
            }
        }
        f
    }

    #[test]
    fn steering_vectors_match_hand_values() {
        let g = ResourceGrid::new(4, 4, 1.0, 1.0).unwrap();
        let s = steering_vectors(&g, 0.25, 0.0);
        let expect = [
            Complex64::from_polar(1.0, std::f64::consts::PI),
            Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_2),
            Complex64::new(1.0, 0.0),
            Complex64::from_polar(1.0, -std::f64::consts::FRAC_PI_2),
        ];
        for (a, b) in s.d_tau.iter().zip(expect.iter()) {
            assert_relative_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }
        let zero = steering_vectors(&g, 0.0, 0.0);
        assert!(zero.d_tau.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        assert!(zero.d_nu.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        assert!(s.d_tau.iter().all(|v| (v.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn coupled_responses_match_scalar_loop() {
        let g = grid(8, 8);
        let a = steering_vectors(&g, 0.3e-6, 1.0e5);
        let b = steering_vectors(&g, 0.5e-6, -2.0e5);

        let (same_tau, same_nu) = coupled_responses(&a, &a);
        assert!(same_tau.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-14));
        assert!(same_nu.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-14));

        // adjacent-resolution spacing: d_tau_kl[i] = exp(-j*2*pi*m_i/M)
        let dt = g.delay_resolution();
        let c = steering_vectors(&g, 0.4e-6, 0.0);
        let d = steering_vectors(&g, 0.4e-6 - dt, 0.0);
        let (res, _) = coupled_responses(&c, &d);
        for (i, v) in res.iter().enumerate() {
            let expect = Complex64::from_polar(1.0, -TAU * g.centered_freq(i) / 8.0);
            assert_relative_eq!((v - expect).norm(), 0.0, epsilon = 1e-12);
        }

        let (dtau, dnu) = coupled_responses(&a, &b);
        for (i, v) in dtau.iter().enumerate() {
            let oracle = a.d_tau[i] * b.d_tau[i].conj();
            assert!((v - oracle).norm() < 1e-14);
        }
        for (j, v) in dnu.iter().enumerate() {
            let oracle = a.d_nu[j] * b.d_nu[j].conj();
            assert!((v - oracle).norm() < 1e-14);
        }
    }

    #[test]
    fn single_target_full_mask_fim_has_closed_form() {
        let g = grid(16, 12);
        let t = vec![TargetParams::new(Complex64::new(1.0, 0.0), 0.4e-6, 5.0e4)];
        let (sigma2, sigma_w2) = (2.0, 0.5);
        let blocks = fim(&g, &full_mask(&g), &t, sigma2, sigma_w2).unwrap();
        let coef = 2.0 * sigma2 / sigma_w2;
        let sum_m2: f64 = (0..16).map(|m| g.centered_freq(m).powi(2)).sum();
        let sum_n2: f64 = (0..12).map(|n| g.centered_time(n).powi(2)).sum();
        let sum_m: f64 = (0..16).map(|m| g.centered_freq(m)).sum();
        let sum_n: f64 = (0..12).map(|n| g.centered_time(n)).sum();
        let df = g.delta_f();
        let ts = g.symbol_duration();
        assert_relative_eq!(
            blocks.f_tau[[0, 0]],
            coef * 4.0 * PI * PI * df * df * 12.0 * sum_m2,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            blocks.f_nu[[0, 0]],
            coef * 4.0 * PI * PI * ts * ts * 16.0 * sum_n2,
            max_relative = 1e-12
        );
        // for even M, N the centered index sums are -M/2, -N/2: the cross
        // term is nonzero and equals -coef*4pi^2*df*T*sum_m*sum_n
        assert_relative_eq!(
            blocks.f_nu_tau[[0, 0]],
            -coef * 4.0 * PI * PI * df * ts * sum_m * sum_n,
            max_relative = 1e-12
        );
        assert_eq!(blocks.allocated, 16 * 12);
        assert!(!blocks.degenerate());
    }

    #[test]
    fn fim_matches_finite_difference_oracle_on_small_grids() {
        for (m, n, k, seed) in [(8, 8, 1, 1u64), (8, 8, 2, 2), (12, 8, 2, 3)] {
            let g = grid(m, n);
            let targets = random_targets(k, &g, seed);
            let mask = random_mask(&g, 0.4, seed);
            let (sigma2, sigma_w2) = (1.7, 0.3);
            let blocks = fim(&g, &mask, &targets, sigma2, sigma_w2).unwrap();
            let analytic = blocks.assembled();
            let numeric = fd_fim(&g, &mask, &targets, sigma2, sigma_w2);
            let scale = numeric.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            for (a, b) in analytic.iter().zip(numeric.iter()) {
                assert!(
                    (a - b).abs() <= 1e-4 * b.abs().max(1e-9 * scale),
                    "entry mismatch: analytic {a}, numeric {b} (grid {m}x{n}, K={k})"
                );
            }
        }
    }

    #[test]
    fn fim_rejects_bad_inputs_and_flags_degenerate_masks() {
        let g = grid(8, 8);
        let empty: Vec<TargetParams> = vec![];
        assert!(matches!(
            fim(&g, &full_mask(&g), &empty, 1.0, 1.0),
            Err(CrbError::NoTargets)
        ));
        let wrong = Array2::from_elem((4, 4), true);
        assert!(matches!(
            fim(&g, &wrong, &random_targets(1, &g, 4), 1.0, 1.0),
            Err(CrbError::ShapeMismatch { .. })
        ));
        let none = Array2::from_elem((8, 8), false);
        let blocks = fim(&g, &none, &random_targets(2, &g, 5), 1.0, 1.0).unwrap();
        assert!(blocks.degenerate());
        assert!(crb(&blocks).is_err());
    }

    #[test]
    fn assembled_fim_is_positive_semidefinite() {
        for seed in 0..6u64 {
            let g = grid(10, 8);
            let targets = random_targets(2, &g, 100 + seed);
            let mask = random_mask(&g, 0.3, 200 + seed);
            let blocks = fim(&g, &mask, &targets, 1.0, 0.1).unwrap();
            assert!(assembled_is_psd(&blocks, 1e-9));
        }
    }

    #[test]
    fn adding_a_cell_never_decreases_diagonal_information() {
        let g = grid(8, 8);
        let targets = random_targets(2, &g, 77);
        let mut mask = random_mask(&g, 0.3, 78);
        let before = fim(&g, &mask, &targets, 1.0, 1.0).unwrap();
        let free = (0..64)
            .map(|l| vec_index(&g, l))
            .find(|&(m, n)| !mask[[m, n]])
            .expect("mask is not full");
        mask[[free.0, free.1]] = true;
        let after = fim(&g, &mask, &targets, 1.0, 1.0).unwrap();
        for k in 0..2 {
            assert!(after.f_tau[[k, k]] >= before.f_tau[[k, k]] - 1e-12);
            assert!(after.f_nu[[k, k]] >= before.f_nu[[k, k]] - 1e-12);
        }
    }

    #[test]
    fn scaling_snr_scales_fim_and_crb_inversely() {
        let g = grid(12, 12);
        let targets = random_targets(2, &g, 9);
        let mask = random_mask(&g, 0.5, 10);
        let f1 = fim(&g, &mask, &targets, 1.0, 1.0).unwrap();
        let f2 = fim(&g, &mask, &targets, 3.0, 0.5).unwrap(); // c = 6x
        let c1 = crb(&f1).unwrap();
        let c2 = crb(&f2).unwrap();
        for (a, b) in f1.assembled().iter().zip(f2.assembled().iter()) {
            assert_relative_eq!(6.0 * a, *b, max_relative = 1e-10);
        }
        assert_relative_eq!(c1.tr_tau(), 6.0 * c2.tr_tau(), max_relative = 1e-8);
        assert_relative_eq!(c1.tr_nu(), 6.0 * c2.tr_nu(), max_relative = 1e-8);
    }

    #[test]
    fn permuting_targets_permutes_fim_blocks() {
        let g = grid(10, 10);
        let t = random_targets(2, &g, 21);
        let swapped = vec![t[1].clone(), t[0].clone()];
        let mask = random_mask(&g, 0.4, 22);
        let a = fim(&g, &mask, &t, 1.0, 1.0).unwrap();
        let b = fim(&g, &mask, &swapped, 1.0, 1.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(
                    a.f_tau[[i, j]],
                    b.f_tau[[1 - i, 1 - j]],
                    max_relative = 1e-12
                );
                assert_relative_eq!(
                    a.f_nu_tau[[i, j]],
                    b.f_nu_tau[[1 - i, 1 - j]],
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn crb_block_diagonal_case_is_plain_inversion() {
        let mut blocks = FimBlocks::zeros(2, 1.0, 1.0);
        blocks.f_tau = ndarray::arr2(&[[4.0, 1.0], [1.0, 3.0]]);
        blocks.f_nu = ndarray::arr2(&[[5.0, 0.5], [0.5, 2.0]]);
        blocks.allocated = 16;
        let c = crb(&blocks).unwrap();
        let expect_tau = blocks.f_tau.inv().unwrap();
        let expect_nu = blocks.f_nu.inv().unwrap();
        assert_eq!(c.c_tau, expect_tau);
        assert_eq!(c.c_nu, expect_nu);
    }

    #[test]
    fn crb_scalar_schur_complement() {
        let mut blocks = FimBlocks::zeros(1, 1.0, 1.0);
        blocks.f_tau = ndarray::arr2(&[[8.0]]);
        blocks.f_nu = ndarray::arr2(&[[2.0]]);
        blocks.f_nu_tau = ndarray::arr2(&[[1.5]]);
        blocks.allocated = 4;
        let c = crb(&blocks).unwrap();
        assert_relative_eq!(c.c_tau[[0, 0]], 1.0 / (8.0 - 1.5 * 1.5 / 2.0), max_relative = 1e-14);
        assert_relative_eq!(c.c_nu[[0, 0]], 1.0 / (2.0 - 1.5 * 1.5 / 8.0), max_relative = 1e-14);
    }

    #[test]
    fn crb_matches_direct_inversion_of_the_assembled_fim() {
        let g = grid(16, 16);
        let targets = random_targets(2, &g, 31);
        let mask = random_mask(&g, 0.5, 32);
        let blocks = fim(&g, &mask, &targets, 1.0, 0.01).unwrap();
        let c = crb(&blocks).unwrap();
        let full_inv = blocks.assembled().inv().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(
                    c.c_tau[[i, j]],
                    full_inv[[i, j]],
                    max_relative = 1e-10
                );
                assert_relative_eq!(
                    c.c_nu[[i, j]],
                    full_inv[[2 + i, 2 + j]],
                    max_relative = 1e-10
                );
            }
        }
    }

    #[test]
    fn singular_blocks_are_reported_by_name() {
        let mut blocks = FimBlocks::zeros(2, 1.0, 1.0);
        blocks.f_tau = ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        blocks.f_nu = ndarray::arr2(&[[1.0, 1.0], [1.0, 1.0]]); // singular
        let err = crb(&blocks).unwrap_err();
        assert!(err.to_string().contains("F_nu"));
    }

    #[test]
    fn design_objective_weights_and_gain() {
        let c = CrbMatrices {
            c_tau: ndarray::arr2(&[[2.0, 0.0], [0.0, 2.0]]),
            c_nu: ndarray::arr2(&[[8.0, 0.0], [0.0, 8.0]]),
        };
        // pure-delay weighting reduces to the normalized delay trace
        assert_relative_eq!(design_objective(&c, 1.0, 0.0, 2.0, 4.0), 1.0);
        // equal normalized traces: objective equals that common value
        assert_relative_eq!(design_objective(&c, 0.5, 0.5, 2.0, 4.0), 1.0);

        let c_opt = CrbMatrices { c_tau: &c.c_tau / 5.0, c_nu: c.c_nu.clone() };
        assert_relative_eq!(crb_gain(&c, &c), 1.0);
        assert_relative_eq!(crb_gain(&c, &c_opt), 5.0, max_relative = 1e-14);
    }
}
