//! Symbol generation, sensing/communication channel synthesis, waveform
//! assembly, and the noisy receive path.
//!
//! The sensing channel over the grid is
//!
//! ```text
//! H[m, n] = sum_k beta_k * exp(j*2*pi*(nu_k*n_c*T - tau_k*m_c*delta_f))
//! ```
//!
//! with centered indices m_c, n_c (phase reference at the grid center),
//! matching the steering vectors used by the Fisher-information engine.

use crate::grid::{AllocationMask, GridError, ResourceGrid, TargetParams};
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::TAU;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("unsupported constellation {0:?}")]
    UnsupportedConstellation(String),
    #[error("negative noise power {0}")]
    NegativeNoisePower(f64),
    #[error("communication channel needs at least one path")]
    NoPaths,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Unit-power constellations for the communication symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Constellation {
    #[default]
    Qpsk,
    Bpsk,
}

impl FromStr for Constellation {
    type Err = ChannelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qpsk" => Ok(Constellation::Qpsk),
            "bpsk" => Ok(Constellation::Bpsk),
            other => Err(ChannelError::UnsupportedConstellation(other.to_string())),
        }
    }
}

/// Draws an i.i.d. unit-power symbol matrix over the full grid. Symbols are
/// drawn on every cell; masking happens later in waveform assembly.
pub fn gen_symbols<R: Rng>(
    grid: &ResourceGrid,
    constellation: Constellation,
    rng: &mut R,
) -> Array2<Complex64> {
    let shape = (grid.num_subcarriers(), grid.num_symbols());
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    Array2::from_shape_simple_fn(shape, || match constellation {
        Constellation::Qpsk => {
            let point = rng.gen_range(0u8..4);
            let re = if point & 1 == 0 { inv_sqrt2 } else { -inv_sqrt2 };
            let im = if point & 2 == 0 { inv_sqrt2 } else { -inv_sqrt2 };
            Complex64::new(re, im)
        }
        Constellation::Bpsk => {
            Complex64::new(if rng.gen::<bool>() { 1.0 } else { -1.0 }, 0.0)
        }
    })
}

/// Synthesizes the sensing channel for the given targets. Each target must
/// satisfy the unambiguous delay/Doppler conditions of the grid.
pub fn sensing_channel(
    grid: &ResourceGrid,
    targets: &[TargetParams],
) -> Result<Array2<Complex64>, ChannelError> {
    for t in targets {
        t.validate(grid)?;
    }
    let (m, n) = (grid.num_subcarriers(), grid.num_symbols());
    let mut h = Array2::from_elem((m, n), Complex64::new(0.0, 0.0));
    let t_sym = grid.symbol_duration();
    for target in targets {
        // rank-1 per target: outer product of the frequency and time phasors
        let freq: Vec<Complex64> = (0..m)
            .map(|i| Complex64::from_polar(1.0, -TAU * target.tau * grid.centered_freq(i) * grid.delta_f()))
            .collect();
        let time: Vec<Complex64> = (0..n)
            .map(|j| Complex64::from_polar(1.0, TAU * target.nu * grid.centered_time(j) * t_sym))
            .collect();
        for i in 0..m {
            let bf = target.beta * freq[i];
            for j in 0..n {
                h[[i, j]] += bf * time[j];
            }
        }
    }
    Ok(h)
}

/// One propagation path of a communication channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommPath {
    pub alpha: Complex64,
    pub tau: f64,
    pub nu: f64,
}

/// Synthesizes the multipath communication channel for one UE. Only the
/// total path gain feeds the spectral-efficiency constraint; the full matrix
/// exists for link-level checks.
pub fn comm_channel(
    grid: &ResourceGrid,
    paths: &[CommPath],
) -> Result<Array2<Complex64>, ChannelError> {
    if paths.is_empty() {
        return Err(ChannelError::NoPaths);
    }
    let (m, n) = (grid.num_subcarriers(), grid.num_symbols());
    let mut h = Array2::from_elem((m, n), Complex64::new(0.0, 0.0));
    let t_sym = grid.symbol_duration();
    for p in paths {
        for i in 0..m {
            let freq = Complex64::from_polar(1.0, -TAU * p.tau * grid.centered_freq(i) * grid.delta_f());
            for j in 0..n {
                let time = Complex64::from_polar(1.0, TAU * p.nu * grid.centered_time(j) * t_sym);
                h[[i, j]] += p.alpha * freq * time;
            }
        }
    }
    Ok(h)
}

/// Assembles the transmit matrix X = sigma * S (*) A: symbol scaled by the
/// per-resource amplitude on allocated cells, zero elsewhere.
pub fn assemble_waveform(
    sigma: f64,
    symbols: &Array2<Complex64>,
    mask: &AllocationMask,
) -> Array2<Complex64> {
    let union = mask.union();
    let mut x = symbols.clone();
    for (cell, &used) in x.iter_mut().zip(union.iter()) {
        *cell = if used { *cell * sigma } else { Complex64::new(0.0, 0.0) };
    }
    x
}

/// Receive path R = X (*) H + W with W i.i.d. circular complex Gaussian of
/// per-cell variance `noise_power`.
pub fn rx_signal<R: Rng>(
    x: &Array2<Complex64>,
    h: &Array2<Complex64>,
    noise_power: f64,
    rng: &mut R,
) -> Result<Array2<Complex64>, ChannelError> {
    if noise_power < 0.0 {
        return Err(ChannelError::NegativeNoisePower(noise_power));
    }
    let std = (noise_power / 2.0).sqrt();
    let mut r = x * h;
    if noise_power > 0.0 {
        for cell in r.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *cell += Complex64::new(std * re, std * im);
        }
    }
    Ok(r)
}

/// Draws a complex amplitude from CN(0, omega).
pub fn draw_amplitude<R: Rng>(omega: f64, rng: &mut R) -> Complex64 {
    let std = (omega / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(std * re, std * im)
}

/// Sensing SNR gamma_s = sigma^2 * ||beta||^2 / (g_s * sigma_w^2) with the
/// processing gain g_s taken as the allocated-resource count.
pub fn sensing_snr(sigma2: f64, betas: &[Complex64], g_s: f64, sigma_w2: f64) -> f64 {
    let beta_sq: f64 = betas.iter().map(|b| b.norm_sqr()).sum();
    sigma2 * beta_sq / (g_s * sigma_w2)
}

/// Noise power hitting a target sensing SNR for the given amplitudes and
/// processing gain: the inverse of [`sensing_snr`] in sigma_w^2.
pub fn noise_for_snr(sigma2: f64, betas: &[Complex64], g_s: f64, gamma_s: f64) -> f64 {
    let beta_sq: f64 = betas.iter().map(|b| b.norm_sqr()).sum();
    sigma2 * beta_sq / (g_s * gamma_s)
}
