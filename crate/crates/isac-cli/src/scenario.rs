//! Scenario construction shared by the sweep drivers and the CLI
//! subcommands: canonical target layouts, design solving, baseline masks,
//! and CRB evaluation of a finished mask.

use anyhow::{bail, Context, Result};
use isac_core::allocator::{
    greedy_allocation, optimize_allocation, random_contiguous_scheduler, random_scheduler,
    AllocationProblem, SolveBudget, SolveReport,
};
use isac_core::channel::noise_for_snr;
use isac_core::config::{ExperimentConfig, SolverKind};
use isac_core::crb::{crb, fim, CrbMatrices};
use isac_core::grid::{AllocationMask, ResourceGrid, TargetParams};
use num_complex::Complex64;

/// Two sensing targets on exact delay/Doppler bins, scaled to the grid:
/// delay bins floor(M/3) and floor(2M/5), Doppler bins +floor(N/10) and
/// -floor(3N/20). On the 100x100 profile this is bins (33, +10) and
/// (40, -15).
pub fn on_grid_targets(grid: &ResourceGrid) -> Vec<TargetParams> {
    let dt = grid.delay_resolution();
    let dv = 1.0 / grid.burst_duration();
    let m = grid.num_subcarriers();
    let n = grid.num_symbols();
    vec![
        TargetParams::new(Complex64::new(1.0, 0.0), (m / 3) as f64 * dt, (n / 10) as f64 * dv),
        TargetParams::new(
            Complex64::new(1.0, 0.0),
            (2 * m / 5) as f64 * dt,
            -((3 * n / 20) as f64) * dv,
        ),
    ]
}

/// Two targets whose delays differ by `spacing` delay resolutions, anchored
/// at bin floor(M/3); Dopplers fixed and distinct so the pair stays
/// identifiable as the delay spacing shrinks.
pub fn spaced_targets(grid: &ResourceGrid, spacing: f64) -> Result<Vec<TargetParams>> {
    let dt = grid.delay_resolution();
    let dv = 1.0 / grid.burst_duration();
    let m = grid.num_subcarriers();
    let n = grid.num_symbols();
    let tau1 = (m / 3) as f64 * dt;
    let tau2 = tau1 + spacing * dt;
    let targets = vec![
        TargetParams::new(Complex64::new(1.0, 0.0), tau1, -((n as f64 * 0.08).floor()) * dv),
        TargetParams::new(Complex64::new(1.0, 0.0), tau2, (n as f64 * 0.12).floor() * dv),
    ];
    for (i, t) in targets.iter().enumerate() {
        t.validate(grid).with_context(|| format!("spaced target {i} at spacing {spacing}"))?;
    }
    Ok(targets)
}

/// Solves the allocation design for the given targets with the configured
/// solver.
pub fn solve_design(cfg: &ExperimentConfig, targets: &[TargetParams]) -> Result<SolveReport> {
    let problem = AllocationProblem::from_config(cfg, targets.to_vec())?;
    let report = match cfg.solver {
        SolverKind::Greedy => greedy_allocation(&problem)?,
        SolverKind::Bnb => {
            if problem.coarse.cells() > 24 {
                bail!(
                    "branch-and-bound is exact but exponential; {} coarse cells is too many \
                     (use greedy, or group more aggressively)",
                    problem.coarse.cells()
                );
            }
            optimize_allocation(&problem, SolveBudget::default())?
        }
    };
    Ok(report)
}

/// Which baseline scheduler produced a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMethod {
    Optimized,
    Random,
    RandomContiguous,
}

impl MaskMethod {
    pub fn label(self) -> &'static str {
        match self {
            MaskMethod::Optimized => "optimized",
            MaskMethod::Random => "random",
            MaskMethod::RandomContiguous => "random_contiguous",
        }
    }
}

/// Draws a baseline mask for the given method and seed. Baselines enforce
/// the same per-UE minimum counts as the optimizer so the rate constraint
/// comparison is fair.
pub fn baseline_mask(
    cfg: &ExperimentConfig,
    problem: &AllocationProblem,
    method: MaskMethod,
    seed: u64,
) -> Result<AllocationMask> {
    let n_min = problem.n_min()?;
    let grid = problem.coarse.base();
    let mask = match method {
        MaskMethod::Random => random_scheduler(grid, problem.num_ues(), cfg.mu, &n_min, seed)?,
        MaskMethod::RandomContiguous => random_contiguous_scheduler(
            grid,
            problem.num_ues(),
            cfg.mu,
            cfg.block_size,
            &n_min,
            seed,
        )?,
        MaskMethod::Optimized => bail!("the optimized mask comes from solve_design, not a seed"),
    };
    Ok(mask)
}

/// CRB matrices of a mask for the given targets and noise level.
pub fn mask_crb(
    grid: &ResourceGrid,
    mask: &AllocationMask,
    targets: &[TargetParams],
    sigma2: f64,
    sigma_w2: f64,
) -> Result<CrbMatrices> {
    let blocks = fim(grid, &mask.union(), targets, sigma2, sigma_w2)?;
    Ok(crb(&blocks)?)
}

/// Sensing noise power hitting a target SNR (dB) for the given mask size.
pub fn noise_for_gamma_db(
    sigma2: f64,
    targets: &[TargetParams],
    g_s: usize,
    gamma_db: f64,
) -> f64 {
    let betas: Vec<Complex64> = targets.iter().map(|t| t.beta).collect();
    noise_for_snr(sigma2, &betas, g_s as f64, 10f64.powf(gamma_db / 10.0))
}
