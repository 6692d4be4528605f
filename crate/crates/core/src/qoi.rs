//! Smoothed integrated density of states and its numerical derivative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{make_bz_grid, solve_bands, BandGrid, BzMode};
use crate::disorder::DefectConfiguration;
use crate::lattice::build_supercell;
use crate::tbmodel::TbModel;

pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_GRID_POINTS: usize = 4096;

/// Smoothed step: 1 below -1, 0 above 1, and the cubic
/// 1/2 - 9x/8 + 5x^3/8 in between, whose zeroth and first moments match
/// those of the sharp step on [-1, 1].
pub fn smoothing_g(x: f64) -> f64 {
    if x <= -1.0 {
        1.0
    } else if x >= 1.0 {
        0.0
    } else {
        0.5 - 1.125 * x + 0.625 * x * x * x
    }
}

/// Uniform energy discretization `lo = e_0 < ... < e_M = hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl EnergyGrid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!("energy range [{lo}, {hi}] is empty or not finite")));
        }
        if points < 2 {
            return Err(Error::InvalidArgument("energy grid needs at least 2 points".into()));
        }
        Ok(EnergyGrid { lo, hi, points })
    }

    /// Grid covering `[emin - 2 delta, emax + 2 delta]`.
    pub fn covering(emin: f64, emax: f64, delta: f64, points: usize) -> Result<Self> {
        Self::new(emin - 2.0 * delta, emax + 2.0 * delta, points)
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn energy(&self, m: usize) -> f64 {
        if m + 1 == self.points {
            self.hi
        } else {
            self.lo + m as f64 * self.step()
        }
    }

    pub fn energies(&self) -> Vec<f64> {
        (0..self.points).map(|m| self.energy(m)).collect()
    }

    /// Indices whose energies lie in `[a, b]`.
    pub fn window(&self, a: f64, b: f64) -> std::ops::Range<usize> {
        let first = (0..self.points).find(|&m| self.energy(m) >= a).unwrap_or(self.points);
        let end = (0..self.points).rev().find(|&m| self.energy(m) <= b).map_or(0, |m| m + 1);
        first..end.max(first)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub delta: f64,
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        SmoothingSpec { delta: DEFAULT_DELTA }
    }
}

impl SmoothingSpec {
    pub fn new(delta: f64) -> Result<Self> {
        if delta > 0.0 && delta.is_finite() {
            Ok(SmoothingSpec { delta })
        } else {
            Err(Error::InvalidArgument(format!("smoothing width {delta} must be positive")))
        }
    }
}

/// IDoS values on an energy grid, per fundamental-cell area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdosCurve {
    pub grid: EnergyGrid,
    pub values: Vec<f64>,
}

fn accumulate(
    bands: &BandGrid,
    grid: &EnergyGrid,
    area: f64,
    half_width: f64,
    kernel: impl Fn(f64, f64) -> f64,
) -> Result<IdosCurve> {
    if bands.points.is_empty() || bands.band_count() == 0 {
        return Err(Error::InvalidArgument("empty band grid".into()));
    }
    if !(area > 0.0) {
        return Err(Error::InvalidArgument(format!("area {area} must be positive")));
    }
    let m = grid.points;
    let step = grid.step();
    // Points at or above e + half_width count fully; record them as a jump
    // in a difference array and evaluate the kernel only inside the window.
    let mut jumps = vec![0.0; m + 1];
    let mut values = vec![0.0; m];
    for p in &bands.points {
        for &e in &p.energies {
            if e - half_width < grid.lo || e + half_width > grid.hi {
                return Err(Error::EnergyOutOfRange { energy: e, lo: grid.lo, hi: grid.hi });
            }
            let start = (((e - half_width - grid.lo) / step).floor().max(0.0) as usize).min(m - 1);
            let mut idx = start;
            while idx < m && grid.energy(idx) < e + half_width {
                let v = kernel(e, grid.energy(idx));
                if v != 0.0 {
                    values[idx] += p.weight * v;
                }
                idx += 1;
            }
            jumps[idx] += p.weight;
        }
    }
    let mut running = 0.0;
    for (v, j) in values.iter_mut().zip(&jumps) {
        running += j;
        *v = (*v + running) / area;
    }
    Ok(IdosCurve { grid: *grid, values })
}

/// `I(e) = (1/area) sum_k w_k sum_n g((E_n(k) - e) / delta)`.
pub fn idos(bands: &BandGrid, grid: &EnergyGrid, smoothing: SmoothingSpec, area: f64) -> Result<IdosCurve> {
    let delta = smoothing.delta;
    accumulate(bands, grid, area, delta, |e, eps| smoothing_g((e - eps) / delta))
}

/// Unsmoothed count of eigenvalues at or below each grid energy.
pub fn idos_sharp(bands: &BandGrid, grid: &EnergyGrid, area: f64) -> Result<IdosCurve> {
    accumulate(bands, grid, area, 0.0, |_, _| 0.0)
}

/// Central differences `(I(e + h) - I(e - h)) / 2h`, one-sided within `h`
/// of either end. `h` is rounded to the nearest whole number of grid steps;
/// the effective `h` is returned alongside the values.
pub fn dos_by_differentiation(curve: &IdosCurve, delta_eps: f64) -> Result<(Vec<f64>, f64)> {
    let step = curve.grid.step();
    if !(delta_eps.is_finite() && delta_eps >= step * (1.0 - 1e-9)) {
        return Err(Error::InvalidArgument(format!(
            "differentiation step {delta_eps} eV is smaller than the energy grid step {step} eV"
        )));
    }
    let h = ((delta_eps / step).round() as usize).max(1);
    let v = &curve.values;
    let m = v.len();
    if h >= m {
        return Err(Error::InvalidArgument(format!("differentiation step {delta_eps} eV exceeds the energy range")));
    }
    let width = h as f64 * step;
    let rho = (0..m)
        .map(|i| {
            if i >= h && i + h < m {
                (v[i + h] - v[i - h]) / (2.0 * width)
            } else if i < h {
                (v[i + h] - v[i]) / width
            } else {
                (v[i] - v[i - h]) / width
            }
        })
        .collect();
    Ok((rho, width))
}

/// Energy grid for a run whose samples all use k-resolution `n q = nq`.
///
/// Deleting orbitals cannot widen the spectrum, and every supercell k-point
/// folds onto the primitive-cell grid of resolution `nq`, so the extremes of
/// the unperturbed primitive-cell bands on that grid bound every sample.
pub fn auto_energy_grid(model: &TbModel, nq: usize, mode: BzMode, smoothing: SmoothingSpec, points: usize) -> Result<EnergyGrid> {
    let cell = build_supercell(model.lattice(), 1)?;
    let grid = make_bz_grid(model.lattice(), 1, nq, mode)?;
    let bands = solve_bands(model, &cell, &DefectConfiguration::empty(&cell), &grid)?;
    let (lo, hi) = bands.energy_range().ok_or(Error::EmptySystem)?;
    EnergyGrid::covering(lo, hi, smoothing.delta, points)
}
