use honeycomb_mlmc::disorder::{sample_defects, DefectConfiguration, SeedSpec};
use honeycomb_mlmc::lattice::{build_supercell, LatticeSpec, Vec2};
use honeycomb_mlmc::qoi::{idos, EnergyGrid, SmoothingSpec};
use honeycomb_mlmc::spectrum::{generalized_eigenvalues, make_bz_grid, solve_bands, BzMode};
use honeycomb_mlmc::tbmodel::{assemble_bloch, k_point_k, GrapheneNNModel, TbModel};
use proptest::prelude::*;

const T: f64 = -3.033;
const S: f64 = 0.129;

fn graphene() -> TbModel {
    GrapheneNNModel::default().build()
}

/// Two-band closed form (eps -/+ t w) / (1 -/+ s w), w = |1 + e^{-ik.a1} + e^{-ik.a2}|.
fn two_band(k: Vec2) -> [f64; 2] {
    let spec = LatticeSpec::honeycomb();
    let (p1, p2) = (k[0] * spec.a1[0] + k[1] * spec.a1[1], k[0] * spec.a2[0] + k[1] * spec.a2[1]);
    let re = 1.0 + p1.cos() + p2.cos();
    let im = -p1.sin() - p2.sin();
    let w = re.hypot(im);
    let mut e = [(0.0 - T * w) / (1.0 - S * w), (0.0 + T * w) / (1.0 + S * w)];
    e.sort_by(f64::total_cmp);
    e
}

fn spectrum(model: &TbModel, n: usize, defects: Option<&DefectConfiguration>, k: Vec2) -> Vec<f64> {
    let sc = build_supercell(model.lattice(), n).unwrap();
    let empty = DefectConfiguration::empty(&sc);
    generalized_eigenvalues(&assemble_bloch(model, &sc, defects.unwrap_or(&empty), k).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn primitive_cell_matches_two_band_formula(kx in -10.0f64..10.0, ky in -10.0f64..10.0) {
        let e = spectrum(&graphene(), 1, None, [kx, ky]);
        let want = two_band([kx, ky]);
        prop_assert!((e[0] - want[0]).abs() < 1e-10 && (e[1] - want[1]).abs() < 1e-10, "{e:?} vs {want:?}");
    }

    #[test]
    fn shift_by_supercell_reciprocal_vector(kx in -3.0f64..3.0, ky in -3.0f64..3.0, a in -2i32..3, b in -2i32..3, seed in 0u64..1000) {
        let m = graphene();
        let sc = build_supercell(m.lattice(), 3).unwrap();
        let d = sample_defects(&sc, 0.2, SeedSpec::new(seed, 0, 0)).unwrap();
        let [g1, g2] = sc.reciprocal();
        let shifted = [kx + a as f64 * g1[0] + b as f64 * g2[0], ky + a as f64 * g1[1] + b as f64 * g2[1]];
        let (e0, e1) = (spectrum(&m, 3, Some(&d), [kx, ky]), spectrum(&m, 3, Some(&d), shifted));
        for (x, y) in e0.iter().zip(&e1) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn real_couplings_give_k_minus_k_symmetry(kx in -3.0f64..3.0, ky in -3.0f64..3.0, seed in 0u64..1000) {
        let m = graphene();
        let sc = build_supercell(m.lattice(), 2).unwrap();
        let d = sample_defects(&sc, 0.3, SeedSpec::new(seed, 1, 0)).unwrap();
        let (e0, e1) = (spectrum(&m, 2, Some(&d), [kx, ky]), spectrum(&m, 2, Some(&d), [-kx, -ky]));
        for (x, y) in e0.iter().zip(&e1) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn gamma_and_k_values() {
    let m = graphene();
    let g = spectrum(&m, 1, None, [0.0, 0.0]);
    assert!((g[0] - -6.5602).abs() < 5e-5 && (g[1] - 14.8434).abs() < 5e-5, "{g:?}");
    let k = spectrum(&m, 1, None, k_point_k(m.lattice()));
    assert!(k.iter().all(|e| e.abs() < 1e-12));
}

#[test]
fn band_folding_n2() {
    let m = graphene();
    let spec = m.lattice().clone();
    let sc = build_supercell(&spec, 2).unwrap();
    let [b1, b2] = spec.reciprocal();
    let grid = make_bz_grid(&spec, 2, 4, BzMode::Reduced).unwrap();
    for p in &grid.points {
        let e2 = spectrum(&m, 2, None, p.k);
        let mut folded = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                let k = [p.k[0] + (a as f64 * b1[0] + b as f64 * b2[0]) / 2.0, p.k[1] + (a as f64 * b1[1] + b as f64 * b2[1]) / 2.0];
                folded.extend(spectrum(&m, 1, None, k));
            }
        }
        folded.sort_by(f64::total_cmp);
        assert_eq!(e2.len(), folded.len());
        for (x, y) in e2.iter().zip(&folded) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y} at {:?}", p.k);
        }
    }
    assert_eq!(sc.sites().len(), 8);
}

#[test]
fn site_relabeling_leaves_spectrum() {
    // Permuting the rows and columns of (H, S) is a similarity transform.
    let m = graphene();
    let sc = build_supercell(m.lattice(), 3).unwrap();
    let d = sample_defects(&sc, 0.2, SeedSpec::new(11, 0, 0)).unwrap();
    let pair = assemble_bloch(&m, &sc, &d, [0.37, -1.1]).unwrap();
    let dim = pair.dim();
    let perm: Vec<usize> = (0..dim).map(|i| (2 * dim - 1 - i + 5) % dim).collect();
    let mut permuted = pair.clone();
    for i in 0..dim {
        for j in 0..dim {
            permuted.h[(i, j)] = pair.h[(perm[i], perm[j])];
            permuted.s[(i, j)] = pair.s[(perm[i], perm[j])];
        }
    }
    let (a, b) = (generalized_eigenvalues(&pair).unwrap(), generalized_eigenvalues(&permuted).unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn reduced_and_full_idos_agree_unperturbed() {
    let m = graphene();
    let sc = build_supercell(m.lattice(), 2).unwrap();
    let empty = DefectConfiguration::empty(&sc);
    let grid = EnergyGrid::new(-7.0, 15.0, 2048).unwrap();
    let curve = |mode| {
        let bands = solve_bands(&m, &sc, &empty, &make_bz_grid(m.lattice(), 2, 8, mode).unwrap()).unwrap();
        idos(&bands, &grid, SmoothingSpec::default(), 4.0).unwrap().values
    };
    let (r, f) = (curve(BzMode::Reduced), curve(BzMode::Full));
    assert!(r.iter().zip(&f).all(|(a, b)| (a - b).abs() < 1e-10));
}

#[test]
fn dimension_counts_surviving_orbitals() {
    let m = graphene();
    let sc = build_supercell(m.lattice(), 4).unwrap();
    let d = DefectConfiguration::from_vacant(&sc, [0, 3, 17]).unwrap();
    assert_eq!(spectrum(&m, 4, Some(&d), [0.1, 0.2]).len(), 32 - 3);
}
