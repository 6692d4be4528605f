//! Brillouin-zone grids and band computation by dense generalized
//! Hermitian eigensolves.

use std::io::Write;
use std::time::Instant;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch};
use faer::linalg::evd::{self_adjoint_evd, self_adjoint_evd_scratch, ComputeEigenvectors};
use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::diag::Diag;
use faer::{Mat, Par};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::disorder::DefectConfiguration;
use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, Supercell, Vec2};
use crate::tbmodel::{BlochAssembler, BlochOperatorPair, TbModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BzMode {
    /// One q x q rhombus spanned by the supercell reciprocal vectors.
    Reduced,
    /// The reduced rhombus plus its images under 120 and 240 degree rotation.
    Full,
}

impl BzMode {
    pub fn blocks(self) -> usize {
        match self {
            BzMode::Reduced => 1,
            BzMode::Full => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KPoint {
    pub k: Vec2,
    pub weight: f64,
    /// Rotation block (0, 1, 2) and corner indices (i, j).
    pub block: usize,
    pub ij: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BzGrid {
    pub n: usize,
    pub q: usize,
    pub mode: BzMode,
    pub points: Vec<KPoint>,
}

fn rotate(v: Vec2, turns: usize) -> Vec2 {
    let angle = 2.0 * std::f64::consts::PI * turns as f64 / 3.0;
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Corner points (i/q) B1 + (j/q) B2 with i, j < q, where B1, B2 are the
/// reciprocal vectors of the n-fold supercell. Weights are uniform.
pub fn make_bz_grid(spec: &LatticeSpec, n: usize, q: usize, mode: BzMode) -> Result<BzGrid> {
    if q == 0 {
        return Err(Error::InvalidArgument("k-grid resolution q must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("supercell factor must be at least 1".into()));
    }
    let [b1, b2] = spec.reciprocal();
    let scale = 1.0 / (n * q) as f64;
    let blocks = mode.blocks();
    let weight = 1.0 / (blocks * q * q) as f64;
    let mut points = Vec::with_capacity(blocks * q * q);
    for block in 0..blocks {
        for i in 0..q {
            for j in 0..q {
                let (fi, fj) = (i as f64 * scale, j as f64 * scale);
                let k = [fi * b1[0] + fj * b2[0], fi * b1[1] + fj * b2[1]];
                points.push(KPoint { k: rotate(k, block), weight, block, ij: [i, j] });
            }
        }
    }
    Ok(BzGrid { n, q, mode, points })
}

impl BzGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the point congruent to -k modulo the supercell reciprocal
    /// lattice.
    pub fn partner(&self, idx: usize) -> usize {
        let p = &self.points[idx];
        let q = self.q;
        let (i, j) = ((q - p.ij[0]) % q, (q - p.ij[1]) % q);
        p.block * q * q + i * q + j
    }

    /// Number of eigensolves needed when spectra at k and -k are shared.
    pub fn distinct_solves(&self, time_reversal: bool) -> usize {
        if time_reversal {
            (0..self.len()).filter(|&i| self.partner(i) >= i).count()
        } else {
            self.len()
        }
    }
}

/// Ascending eigenvalues of H u = e S u.
///
/// S is reduced by its Cholesky factor L to the standard problem
/// L^-1 H L^-H, which is then diagonalized.
pub fn generalized_eigenvalues(pair: &BlochOperatorPair) -> Result<Vec<f64>> {
    let dim = pair.dim();
    let par = Par::Seq;
    let reduced = if pair.s_identity {
        pair.h.clone()
    } else {
        let mut l = pair.s.clone();
        let mut mem = MemBuffer::new(cholesky_in_place_scratch::<Complex64>(dim, par, Default::default()));
        cholesky_in_place(l.as_mut(), Default::default(), par, MemStack::new(&mut mem), Default::default())
            .map_err(|_| Error::NotPositiveDefinite { k: pair.k })?;
        let mut x = pair.h.clone();
        solve_lower_triangular_in_place(l.as_ref(), x.as_mut(), par);
        let mut c: Mat<Complex64> = x.adjoint().to_owned();
        solve_lower_triangular_in_place(l.as_ref(), c.as_mut(), par);
        c
    };
    let mut values = Diag::<Complex64>::zeros(dim);
    let mut mem = MemBuffer::new(self_adjoint_evd_scratch::<Complex64>(dim, ComputeEigenvectors::No, par, Default::default()));
    self_adjoint_evd(reduced.as_ref(), values.as_mut(), None, par, MemStack::new(&mut mem), Default::default())
        .map_err(|_| Error::NoConvergence { k: pair.k, dim })?;
    let mut out: Vec<f64> = values.column_vector().iter().map(|z| z.re).collect();
    if out.iter().any(|e| !e.is_finite()) {
        return Err(Error::NoConvergence { k: pair.k, dim });
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandPoint {
    pub k: Vec2,
    pub weight: f64,
    pub energies: Vec<f64>,
}

/// Sorted spectra over a k-grid, with eigensolve bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct BandGrid {
    pub points: Vec<BandPoint>,
    pub eigensolves: usize,
    pub solve_seconds: f64,
}

impl BandGrid {
    pub fn band_count(&self) -> usize {
        self.points.first().map_or(0, |p| p.energies.len())
    }

    pub fn energy_range(&self) -> Option<(f64, f64)> {
        let all = self.points.iter().flat_map(|p| p.energies.iter().copied());
        all.fold(None, |acc, e| match acc {
            None => Some((e, e)),
            Some((lo, hi)) => Some((lo.min(e), hi.max(e))),
        })
    }

    /// CSV with header `kx,ky,band,energy_eV`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "kx,ky,band,energy_eV")?;
        for p in &self.points {
            for (b, e) in p.energies.iter().enumerate() {
                writeln!(out, "{},{},{},{}", p.k[0], p.k[1], b, e)?;
            }
        }
        Ok(())
    }
}

/// Spectra of the defected supercell at every grid point. Points are solved
/// in grid order; with real couplings the spectrum at a point is reused for
/// its -k partner.
pub fn solve_bands(model: &TbModel, supercell: &Supercell, defects: &DefectConfiguration, grid: &BzGrid) -> Result<BandGrid> {
    if grid.n != supercell.n() {
        return Err(Error::InvalidArgument(format!("k-grid built for n = {} used on n = {}", grid.n, supercell.n())));
    }
    let assembler = BlochAssembler::new(model, supercell, defects)?;
    let time_reversal = model.time_reversal_symmetric();
    let mut points: Vec<BandPoint> = Vec::with_capacity(grid.len());
    let mut eigensolves = 0;
    let start = Instant::now();
    for (idx, kp) in grid.points.iter().enumerate() {
        let partner = grid.partner(idx);
        let energies = if time_reversal && partner < idx {
            points[partner].energies.clone()
        } else {
            eigensolves += 1;
            generalized_eigenvalues(&assembler.assemble(kp.k)?)?
        };
        points.push(BandPoint { k: kp.k, weight: kp.weight, energies });
    }
    Ok(BandGrid { points, eigensolves, solve_seconds: start.elapsed().as_secs_f64() })
}

/// Work units for one sample: (n^2 orbitals)^3 per eigensolve times the
/// number of k-points.
pub fn estimate_solve_cost(n: usize, q: usize, orbitals_per_cell: usize, mode: BzMode) -> f64 {
    let dim = (n * n * orbitals_per_cell) as f64;
    dim.powi(3) * (mode.blocks() * q * q) as f64
}

/// Converts work units to seconds using one measured solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveCostModel {
    pub seconds_per_unit: f64,
}

impl SolveCostModel {
    pub fn calibrate(measured_seconds: f64, n: usize, q: usize, orbitals_per_cell: usize, mode: BzMode) -> Self {
        SolveCostModel { seconds_per_unit: measured_seconds / estimate_solve_cost(n, q, orbitals_per_cell, mode) }
    }

    pub fn predict_seconds(&self, n: usize, q: usize, orbitals_per_cell: usize, mode: BzMode) -> f64 {
        self.seconds_per_unit * estimate_solve_cost(n, q, orbitals_per_cell, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::{sample_defects, SeedSpec};
    use crate::lattice::build_supercell;
    use crate::tbmodel::{assemble_bloch, k_point_k, GrapheneNNModel};

    fn graphene() -> TbModel {
        GrapheneNNModel::default().build()
    }

    #[test]
    fn single_gamma_point() {
        let g = make_bz_grid(&LatticeSpec::honeycomb(), 1, 1, BzMode::Reduced).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.points[0].k, [0.0, 0.0]);
        assert_eq!(g.points[0].weight, 1.0);
    }

    #[test]
    fn point_counts_and_weights() {
        let spec = LatticeSpec::honeycomb();
        let g = make_bz_grid(&spec, 32, 64 / 32, BzMode::Full).unwrap();
        assert_eq!(g.len(), 12);
        let r = make_bz_grid(&spec, 4, 5, BzMode::Reduced).unwrap();
        assert_eq!(r.len(), 25);
        for grid in [g, r] {
            let w: f64 = grid.points.iter().map(|p| p.weight).sum();
            assert!((w - 1.0).abs() < 1e-14);
        }
        assert!(make_bz_grid(&spec, 2, 0, BzMode::Reduced).is_err());
    }

    #[test]
    fn partners_are_negatives_modulo_lattice() {
        let spec = LatticeSpec::honeycomb();
        let g = make_bz_grid(&spec, 2, 4, BzMode::Full).unwrap();
        let sc = build_supercell(&spec, 2).unwrap();
        let a = sc.lattice_vectors();
        for idx in 0..g.len() {
            let p = g.partner(idx);
            assert_eq!(g.partner(p), idx);
            let sum = [g.points[idx].k[0] + g.points[p].k[0], g.points[idx].k[1] + g.points[p].k[1]];
            // sum must be a reciprocal lattice vector: sum . A_i in 2 pi Z
            for v in a {
                let x = (sum[0] * v[0] + sum[1] * v[1]) / (2.0 * std::f64::consts::PI);
                assert!((x - x.round()).abs() < 1e-9);
            }
        }
        assert_eq!(make_bz_grid(&spec, 1, 4, BzMode::Reduced).unwrap().distinct_solves(true), 10);
        assert_eq!(make_bz_grid(&spec, 1, 2, BzMode::Reduced).unwrap().distinct_solves(true), 4);
    }

    #[test]
    fn gamma_eigenvalues() {
        let m = graphene();
        let sc = build_supercell(m.lattice(), 1).unwrap();
        let p = assemble_bloch(&m, &sc, &DefectConfiguration::empty(&sc), [0.0, 0.0]).unwrap();
        let e = generalized_eigenvalues(&p).unwrap();
        let (t, s) = (-3.033f64, 0.129f64);
        assert!((e[0] - 3.0 * t / (1.0 + 3.0 * s)).abs() < 1e-12);
        assert!((e[1] + 3.0 * t / (1.0 - 3.0 * s)).abs() < 1e-12);
        assert!((e[0] - -6.5602).abs() < 5e-5);
        assert!((e[1] - 14.8434).abs() < 5e-5);
    }

    #[test]
    fn k_corner_degenerate() {
        let m = graphene();
        let sc = build_supercell(m.lattice(), 1).unwrap();
        let p = assemble_bloch(&m, &sc, &DefectConfiguration::empty(&sc), k_point_k(m.lattice())).unwrap();
        let e = generalized_eigenvalues(&p).unwrap();
        assert!(e[0].abs() < 1e-12 && e[1].abs() < 1e-12);
    }

    #[test]
    fn indefinite_overlap_reported() {
        let m = graphene();
        let sc = build_supercell(m.lattice(), 1).unwrap();
        let mut p = assemble_bloch(&m, &sc, &DefectConfiguration::empty(&sc), [0.0, 0.0]).unwrap();
        p.s[(0, 1)] = Complex64::new(2.0, 0.0);
        p.s[(1, 0)] = Complex64::new(2.0, 0.0);
        assert!(matches!(generalized_eigenvalues(&p), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn reduced_and_full_modes_agree_even_with_defects() {
        let m = graphene();
        let sc = build_supercell(m.lattice(), 4).unwrap();
        let d = sample_defects(&sc, 0.15, SeedSpec::new(5, 0, 0)).unwrap();
        let reduced = solve_bands(&m, &sc, &d, &make_bz_grid(m.lattice(), 4, 3, BzMode::Reduced).unwrap()).unwrap();
        let full = solve_bands(&m, &sc, &d, &make_bz_grid(m.lattice(), 4, 3, BzMode::Full).unwrap()).unwrap();
        let mut a: Vec<f64> = reduced.points.iter().flat_map(|p| p.energies.clone()).collect();
        let mut b: Vec<f64> = full.points.iter().flat_map(|p| p.energies.clone()).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (i, x) in a.iter().enumerate() {
            for r in 0..3 {
                assert!((x - b[3 * i + r]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn time_reversal_reuse_matches_direct_solves() {
        let m = graphene();
        let sc = build_supercell(m.lattice(), 2).unwrap();
        let d = DefectConfiguration::from_vacant(&sc, [1]).unwrap();
        let grid = make_bz_grid(m.lattice(), 2, 4, BzMode::Reduced).unwrap();
        let bands = solve_bands(&m, &sc, &d, &grid).unwrap();
        assert_eq!(bands.eigensolves, 10);
        for p in &bands.points {
            let direct = generalized_eigenvalues(&assemble_bloch(&m, &sc, &d, p.k).unwrap()).unwrap();
            for (x, y) in p.energies.iter().zip(&direct) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn band_count_matches_dimension() {
        let m = graphene();
        let sc = build_supercell(m.lattice(), 3).unwrap();
        let d = DefectConfiguration::from_vacant(&sc, [0, 5]).unwrap();
        let bands = solve_bands(&m, &sc, &d, &make_bz_grid(m.lattice(), 3, 2, BzMode::Reduced).unwrap()).unwrap();
        assert!(bands.points.iter().all(|p| p.energies.len() == 16));
        assert!(bands.points.iter().all(|p| p.energies.windows(2).all(|w| w[0] <= w[1])));
    }

    #[test]
    fn grid_supercell_mismatch() {
        let m = graphene();
        let sc = build_supercell(m.lattice(), 3).unwrap();
        let grid = make_bz_grid(m.lattice(), 2, 2, BzMode::Reduced).unwrap();
        assert!(solve_bands(&m, &sc, &DefectConfiguration::empty(&sc), &grid).is_err());
    }

    #[test]
    fn cost_model_scaling() {
        assert_eq!(estimate_solve_cost(1, 1, 1, BzMode::Reduced), 1.0);
        let base = estimate_solve_cost(16, 4, 2, BzMode::Full);
        assert_eq!(estimate_solve_cost(32, 2, 2, BzMode::Full) / base, 16.0);
        assert_eq!(estimate_solve_cost(16, 8, 2, BzMode::Full) / base, 4.0);
        let model = SolveCostModel::calibrate(2.0, 16, 4, 2, BzMode::Full);
        assert!((model.predict_seconds(32, 2, 2, BzMode::Full) - 32.0).abs() < 1e-9);
    }

    #[test]
    fn band_csv_layout() {
        let m = graphene();
        let sc = build_supercell(m.lattice(), 1).unwrap();
        let bands = solve_bands(&m, &sc, &DefectConfiguration::empty(&sc), &make_bz_grid(m.lattice(), 1, 2, BzMode::Reduced).unwrap()).unwrap();
        let mut buf = Vec::new();
        bands.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("kx,ky,band,energy_eV\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 2);
    }
}
