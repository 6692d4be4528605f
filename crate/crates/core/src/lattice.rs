//! Honeycomb geometry: primitive cell, supercells, and the quarter partition
//! used to build control variates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

/// Sublattice role of a basis site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    A,
    B,
}

impl Role {
    pub fn index(self) -> usize {
        match self {
            Role::A => 0,
            Role::B => 1,
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "A" | "a" => Some(Role::A),
            "B" | "b" => Some(Role::B),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSite {
    pub role: Role,
    /// Position in units of the primitive vectors.
    pub frac: Vec2,
    /// Whether a vacancy can remove this site.
    pub removable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub a1: Vec2,
    pub a2: Vec2,
    pub basis: Vec<BasisSite>,
    /// Orbital count per role, indexed by [`Role::index`].
    pub orbitals_per_role: [usize; 2],
}

impl LatticeSpec {
    pub fn new(a1: Vec2, a2: Vec2, basis: Vec<BasisSite>, orbitals_per_role: [usize; 2]) -> Result<Self> {
        let spec = LatticeSpec { a1, a2, basis, orbitals_per_role };
        spec.validate()?;
        Ok(spec)
    }

    /// Standard honeycomb cell with lattice constant 1: A at the origin and
    /// B at (1/3, 1/3), one orbital per site, every site removable.
    pub fn honeycomb() -> Self {
        let h = 3f64.sqrt() / 2.0;
        LatticeSpec {
            a1: [h, 0.5],
            a2: [h, -0.5],
            basis: vec![
                BasisSite { role: Role::A, frac: [0.0, 0.0], removable: true },
                BasisSite { role: Role::B, frac: [1.0 / 3.0, 1.0 / 3.0], removable: true },
            ],
            orbitals_per_role: [1, 1],
        }
    }

    pub fn with_primitive_vectors(mut self, a1: Vec2, a2: Vec2) -> Result<Self> {
        self.a1 = a1;
        self.a2 = a2;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let det = self.det();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(Error::InvalidLattice(format!(
                "primitive vectors are linearly dependent (det = {det})"
            )));
        }
        if self.basis.is_empty() {
            return Err(Error::InvalidLattice("empty basis".into()));
        }
        if self.basis.iter().any(|b| !b.frac.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidLattice("non-finite basis position".into()));
        }
        Ok(())
    }

    fn det(&self) -> f64 {
        self.a1[0] * self.a2[1] - self.a1[1] * self.a2[0]
    }

    /// Area of the fundamental cell, |det[a1 a2]|.
    pub fn cell_area(&self) -> f64 {
        self.det().abs()
    }

    /// Reciprocal vectors with a_i . b_j = 2 pi delta_ij.
    pub fn reciprocal(&self) -> [Vec2; 2] {
        let det = self.det();
        let s = 2.0 * PI / det;
        [
            [s * self.a2[1], -s * self.a2[0]],
            [-s * self.a1[1], s * self.a1[0]],
        ]
    }

    /// Cartesian position of a point given in primitive-vector coordinates.
    pub fn to_cartesian(&self, f: Vec2) -> Vec2 {
        [
            f[0] * self.a1[0] + f[1] * self.a2[0],
            f[0] * self.a1[1] + f[1] * self.a2[1],
        ]
    }

    pub fn orbitals(&self, basis: usize) -> usize {
        self.orbitals_per_role[self.basis[basis].role.index()]
    }

    pub fn orbitals_per_cell(&self) -> usize {
        (0..self.basis.len()).map(|b| self.orbitals(b)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub cell: [usize; 2],
    pub basis: usize,
    pub pos: Vec2,
}

/// The fundamental cell extended by `n` along both primitive vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Supercell {
    spec: LatticeSpec,
    n: usize,
    sites: Vec<Site>,
    /// Site index of each removable unit, in site order.
    units: Vec<usize>,
    unit_of_site: Vec<Option<usize>>,
}

pub fn build_supercell(spec: &LatticeSpec, n: usize) -> Result<Supercell> {
    Supercell::new(spec.clone(), n)
}

impl Supercell {
    pub fn new(spec: LatticeSpec, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("supercell factor must be at least 1".into()));
        }
        spec.validate()?;
        let nb = spec.basis.len();
        let mut sites = Vec::with_capacity(n * n * nb);
        let mut units = Vec::new();
        let mut unit_of_site = Vec::with_capacity(n * n * nb);
        for i in 0..n {
            for j in 0..n {
                for (b, site) in spec.basis.iter().enumerate() {
                    let pos = spec.to_cartesian([i as f64 + site.frac[0], j as f64 + site.frac[1]]);
                    if site.removable {
                        unit_of_site.push(Some(units.len()));
                        units.push(sites.len());
                    } else {
                        unit_of_site.push(None);
                    }
                    sites.push(Site { cell: [i, j], basis: b, pos });
                }
            }
        }
        Ok(Supercell { spec, n, sites, units, unit_of_site })
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site_index(&self, i: usize, j: usize, basis: usize) -> usize {
        (i * self.n + j) * self.spec.basis.len() + basis
    }

    /// Removable units, each given by the site it removes.
    pub fn units(&self) -> &[usize] {
        &self.units
    }

    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    pub fn unit_of_site(&self, site: usize) -> Option<usize> {
        self.unit_of_site[site]
    }

    /// Number of fundamental cells, n^2.
    pub fn cell_count(&self) -> usize {
        self.n * self.n
    }

    pub fn area(&self) -> f64 {
        self.cell_count() as f64 * self.spec.cell_area()
    }

    pub fn lattice_vectors(&self) -> [Vec2; 2] {
        let n = self.n as f64;
        [
            [n * self.spec.a1[0], n * self.spec.a1[1]],
            [n * self.spec.a2[0], n * self.spec.a2[1]],
        ]
    }

    pub fn reciprocal(&self) -> [Vec2; 2] {
        let n = self.n as f64;
        let [b1, b2] = self.spec.reciprocal();
        [[b1[0] / n, b1[1] / n], [b2[0] / n, b2[1] / n]]
    }

    pub fn orbital_count(&self) -> usize {
        self.cell_count() * self.spec.orbitals_per_cell()
    }
}

/// A supercell with even `n` split into four corner blocks of size n/2.
///
/// Labels run 1..=4; label `1 + [i >= n/2] + 2 [j >= n/2]` for cell (i, j).
#[derive(Debug, Clone)]
pub struct PartitionMap {
    parent: Supercell,
    assignment: Vec<u8>,
    /// Parent site -> site index inside its subcell.
    local_site: Vec<usize>,
    /// Parent unit -> (label, unit index inside the subcell).
    unit_map: Vec<(u8, usize)>,
    subcells: Vec<Supercell>,
}

pub const QUARTERS: usize = 4;

pub fn partition_quarters(parent: &Supercell) -> Result<PartitionMap> {
    let n = parent.n();
    if n % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "supercell factor {n} is not divisible by 2"
        )));
    }
    let half = n / 2;
    let sub = Supercell::new(parent.spec().clone(), half)?;
    let mut assignment = Vec::with_capacity(parent.sites().len());
    let mut local_site = Vec::with_capacity(parent.sites().len());
    for site in parent.sites() {
        let [i, j] = site.cell;
        let label = 1 + u8::from(i >= half) + 2 * u8::from(j >= half);
        assignment.push(label);
        local_site.push(sub.site_index(i % half, j % half, site.basis));
    }
    let unit_map = parent
        .units()
        .iter()
        .map(|&s| {
            let u = sub.unit_of_site(local_site[s]).expect("removability is inherited from the basis");
            (assignment[s], u)
        })
        .collect();
    Ok(PartitionMap {
        parent: parent.clone(),
        assignment,
        local_site,
        unit_map,
        subcells: vec![sub; QUARTERS],
    })
}

impl PartitionMap {
    pub fn parent(&self) -> &Supercell {
        &self.parent
    }

    pub fn subdomain_count(&self) -> usize {
        QUARTERS
    }

    /// Label in 1..=4 of a parent site.
    pub fn label(&self, site: usize) -> u8 {
        self.assignment[site]
    }

    pub fn local_site(&self, site: usize) -> usize {
        self.local_site[site]
    }

    pub fn unit_map(&self) -> &[(u8, usize)] {
        &self.unit_map
    }

    /// Subcell for label `r` in 1..=4.
    pub fn subcell(&self, r: u8) -> Result<&Supercell> {
        check_label(r)?;
        Ok(&self.subcells[usize::from(r) - 1])
    }

    /// Cell offset of the corner block with label `r`.
    pub fn origin(&self, r: u8) -> Result<[usize; 2]> {
        check_label(r)?;
        let half = self.parent.n() / 2;
        let k = usize::from(r) - 1;
        Ok([(k & 1) * half, (k >> 1) * half])
    }
}

pub(crate) fn check_label(r: u8) -> Result<()> {
    if (1..=QUARTERS as u8).contains(&r) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("subdomain label {r} out of range 1..=4")))
    }
}
