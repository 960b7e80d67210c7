//! Frequency-time resource grid, allocation masks, and target parameters.
//!
//! Conventions fixed here and relied on by every other module:
//! * frequency index `m` is the row (0..M-1), time index `n` is the column
//!   (0..N-1); vectorization is column-major, `l = m + M*n` (frequency
//!   varies fastest);
//! * phase references are centered: row `m` carries the integer index
//!   `m - floor(M/2)`, column `n` carries `n - floor(N/2)`, so DC sits in
//!   the middle of the grid.

use ndarray::Array2;
use num_complex::Complex64;
use std::fmt;
use std::io::{BufRead, Write};
use thiserror::Error;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("mask shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask parse error: {0}")]
    MaskParse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// OFDM frequency-time resource lattice: M subcarriers spaced `delta_f`,
/// N symbols of duration T = 1/delta_f.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    m: usize,
    n: usize,
    delta_f: f64,
    cp_duration: f64,
}

impl ResourceGrid {
    pub fn new(m: usize, n: usize, delta_f: f64, cp_duration: f64) -> Result<Self, GridError> {
        if m < 1 || n < 1 {
            return Err(GridError::InvalidGrid(format!(
                "grid dimensions must be at least 1x1, got {m}x{n}"
            )));
        }
        if !(delta_f > 0.0) || !delta_f.is_finite() {
            return Err(GridError::InvalidGrid(format!(
                "subcarrier spacing must be positive, got {delta_f}"
            )));
        }
        if !(cp_duration >= 0.0) || !cp_duration.is_finite() {
            return Err(GridError::InvalidGrid(format!(
                "cyclic prefix duration must be nonnegative, got {cp_duration}"
            )));
        }
        Ok(Self { m, n, delta_f, cp_duration })
    }

    /// Subcarrier count M.
    pub fn num_subcarriers(&self) -> usize {
        self.m
    }

    /// Symbol count N.
    pub fn num_symbols(&self) -> usize {
        self.n
    }

    /// Total resource count L = M*N.
    pub fn num_resources(&self) -> usize {
        self.m * self.n
    }

    /// Subcarrier spacing in Hz.
    pub fn delta_f(&self) -> f64 {
        self.delta_f
    }

    /// Symbol duration T = 1/delta_f in seconds (never stored, always derived).
    pub fn symbol_duration(&self) -> f64 {
        1.0 / self.delta_f
    }

    /// Total bandwidth B = M * delta_f in Hz.
    pub fn bandwidth(&self) -> f64 {
        self.m as f64 * self.delta_f
    }

    /// Burst duration N * T in seconds.
    pub fn burst_duration(&self) -> f64 {
        self.n as f64 * self.symbol_duration()
    }

    pub fn cp_duration(&self) -> f64 {
        self.cp_duration
    }

    /// Delay resolution 1/B in seconds.
    pub fn delay_resolution(&self) -> f64 {
        1.0 / self.bandwidth()
    }

    /// Doppler resolution in Hz under the given normalization convention.
    pub fn doppler_resolution(&self, norm: DopplerNorm) -> f64 {
        match norm {
            DopplerNorm::Burst => 1.0 / self.burst_duration(),
            DopplerNorm::Symbol => 1.0 / self.symbol_duration(),
        }
    }

    /// Centered frequency index for row `m`: m - floor(M/2).
    #[inline]
    pub fn centered_freq(&self, m: usize) -> f64 {
        m as f64 - (self.m / 2) as f64
    }

    /// Centered time index for column `n`: n - floor(N/2).
    #[inline]
    pub fn centered_time(&self, n: usize) -> f64 {
        n as f64 - (self.n / 2) as f64
    }
}

/// Doppler normalization used in the design objective: `Burst` normalizes by
/// 1/(N*T) (resolution over the whole burst), `Symbol` by 1/T.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DopplerNorm {
    #[default]
    Burst,
    Symbol,
}

/// A point scatterer / served UE: complex amplitude `beta`, two-way delay
/// `tau` (s), Doppler shift `nu` (Hz). `comm_path_gains` holds the per-path
/// communication amplitudes used only by the spectral-efficiency constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetParams {
    pub beta: Complex64,
    pub tau: f64,
    pub nu: f64,
    pub range: Option<f64>,
    pub comm_path_gains: Vec<Complex64>,
}

impl TargetParams {
    pub fn new(beta: Complex64, tau: f64, nu: f64) -> Self {
        Self { beta, tau, nu, range: None, comm_path_gains: vec![Complex64::new(1.0, 0.0)] }
    }

    /// Two-way delay for a target at distance `range_m`.
    pub fn delay_for_range(range_m: f64) -> f64 {
        2.0 * range_m / SPEED_OF_LIGHT
    }

    /// Mean amplitude power for a target at `range_m` seen at carrier `f0`:
    /// reflectivity * f0^-2 * R^-4.
    pub fn amplitude_power(f0: f64, range_m: f64, reflectivity: f64) -> f64 {
        reflectivity * f0.powi(-2) * range_m.powi(-4)
    }

    /// Sum of squared communication path gains, driving the per-resource SNR.
    pub fn comm_gain_sq(&self) -> f64 {
        self.comm_path_gains.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Checks the unambiguous-range and unambiguous-Doppler conditions
    /// against a grid: 0 <= tau <= cp_duration and |nu| < 1/(2T).
    pub fn validate(&self, grid: &ResourceGrid) -> Result<(), GridError> {
        if !(self.tau >= 0.0) || self.tau > grid.cp_duration() {
            return Err(GridError::InvalidTarget(format!(
                "delay {} s outside [0, {}] s cyclic prefix window",
                self.tau,
                grid.cp_duration()
            )));
        }
        let nu_max = 0.5 / grid.symbol_duration();
        if self.nu.abs() >= nu_max {
            return Err(GridError::InvalidTarget(format!(
                "Doppler {} Hz outside the unambiguous band (+-{} Hz)",
                self.nu, nu_max
            )));
        }
        Ok(())
    }
}

/// One constraint violation found by [`AllocationMask::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum MaskViolation {
    /// More than one UE claims cell (m, n).
    Exclusivity { m: usize, n: usize },
    /// Union occupancy exceeds the configured cap.
    Occupancy { occupancy: f64, mu: f64 },
    /// A per-UE mask has the wrong shape.
    Shape { ue: usize, rows: usize, cols: usize },
}

impl fmt::Display for MaskViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskViolation::Exclusivity { m, n } => {
                write!(f, "exclusivity violated at cell ({m}, {n})")
            }
            MaskViolation::Occupancy { occupancy, mu } => {
                write!(f, "occupancy {occupancy} exceeds cap {mu}")
            }
            MaskViolation::Shape { ue, rows, cols } => {
                write!(f, "mask for UE {ue} has shape {rows}x{cols}")
            }
        }
    }
}

/// Per-UE boolean occupancy of the grid. The union is always recomputed,
/// never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMask {
    m: usize,
    n: usize,
    per_ue: Vec<Array2<bool>>,
}

impl AllocationMask {
    pub fn new(grid: &ResourceGrid, per_ue: Vec<Array2<bool>>) -> Result<Self, GridError> {
        let (m, n) = (grid.num_subcarriers(), grid.num_symbols());
        if per_ue.is_empty() {
            return Err(GridError::ShapeMismatch("no per-UE masks given".into()));
        }
        for (k, a) in per_ue.iter().enumerate() {
            if a.dim() != (m, n) {
                return Err(GridError::ShapeMismatch(format!(
                    "UE {k} mask is {:?}, grid is {m}x{n}",
                    a.dim()
                )));
            }
        }
        Ok(Self { m, n, per_ue })
    }

    /// All-false mask for `k` UEs.
    pub fn empty(grid: &ResourceGrid, k: usize) -> Self {
        let shape = (grid.num_subcarriers(), grid.num_symbols());
        Self {
            m: shape.0,
            n: shape.1,
            per_ue: (0..k.max(1)).map(|_| Array2::from_elem(shape, false)).collect(),
        }
    }

    pub fn num_ues(&self) -> usize {
        self.per_ue.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn ue(&self, k: usize) -> &Array2<bool> {
        &self.per_ue[k]
    }

    pub fn ue_mut(&mut self, k: usize) -> &mut Array2<bool> {
        &mut self.per_ue[k]
    }

    /// OR over all UEs: the cells the waveform actually occupies.
    pub fn union(&self) -> Array2<bool> {
        let mut u = Array2::from_elem((self.m, self.n), false);
        for a in &self.per_ue {
            for (cell, &v) in u.iter_mut().zip(a.iter()) {
                *cell |= v;
            }
        }
        u
    }

    /// Number of allocated cells per UE.
    pub fn counts(&self) -> Vec<usize> {
        self.per_ue.iter().map(|a| a.iter().filter(|&&v| v).count()).collect()
    }

    /// Fraction of the grid covered by the union, in [0, 1].
    pub fn occupancy(&self) -> f64 {
        let used = self.union().iter().filter(|&&v| v).count();
        used as f64 / (self.m * self.n) as f64
    }

    /// Diagnostic check of per-resource exclusivity and the occupancy cap.
    /// Returns an empty list iff both constraints hold.
    pub fn validate(&self, mu: f64) -> Vec<MaskViolation> {
        let mut violations = Vec::new();
        for m in 0..self.m {
            for n in 0..self.n {
                let claims = self.per_ue.iter().filter(|a| a[[m, n]]).count();
                if claims > 1 {
                    violations.push(MaskViolation::Exclusivity { m, n });
                }
            }
        }
        let occ = self.occupancy();
        // Integer cell counts compare exactly; the f64 ratio only reports.
        let used = self.union().iter().filter(|&&v| v).count();
        let cap = mu * (self.m * self.n) as f64;
        if used as f64 > cap + 1e-9 {
            violations.push(MaskViolation::Occupancy { occupancy: occ, mu });
        }
        violations
    }

    /// Writes the mask in the versioned text format: header `MASK v1 M N K`,
    /// then K blocks of M lines x N chars in {0,1} (rows = frequency,
    /// columns = time), blocks separated by a blank line.
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), GridError> {
        writeln!(w, "MASK v1 {} {} {}", self.m, self.n, self.per_ue.len())?;
        for a in &self.per_ue {
            for m in 0..self.m {
                let row: String =
                    (0..self.n).map(|n| if a[[m, n]] { '1' } else { '0' }).collect();
                writeln!(w, "{row}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Parses the text format written by [`AllocationMask::write`].
    pub fn read<R: BufRead>(r: R) -> Result<Self, GridError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| GridError::MaskParse("empty input".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "MASK" || fields[1] != "v1" {
            return Err(GridError::MaskParse(format!("bad header: {header:?}")));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| GridError::MaskParse(format!("bad {what}: {s:?}")))
        };
        let (m, n, k) = (
            parse(fields[2], "M")?,
            parse(fields[3], "N")?,
            parse(fields[4], "K")?,
        );
        if m == 0 || n == 0 || k == 0 {
            return Err(GridError::MaskParse("zero dimension in header".into()));
        }
        let mut per_ue = Vec::with_capacity(k);
        let mut rows: Vec<Vec<bool>> = Vec::with_capacity(m);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if line.len() != n {
                return Err(GridError::MaskParse(format!(
                    "row has {} columns, expected {n}",
                    line.len()
                )));
            }
            let mut row = Vec::with_capacity(n);
            for c in line.chars() {
                match c {
                    '0' => row.push(false),
                    '1' => row.push(true),
                    other => {
                        return Err(GridError::MaskParse(format!("bad cell char {other:?}")))
                    }
                }
            }
            rows.push(row);
            if rows.len() == m {
                let flat: Vec<bool> = rows.drain(..).flatten().collect();
                let arr = Array2::from_shape_vec((m, n), flat)
                    .expect("row collection matches declared shape");
                per_ue.push(arr);
            }
        }
        if !rows.is_empty() || per_ue.len() != k {
            return Err(GridError::MaskParse(format!(
                "expected {k} blocks of {m} rows, got {} complete blocks and {} dangling rows",
                per_ue.len(),
                rows.len()
            )));
        }
        Ok(Self { m, n, per_ue })
    }
}
