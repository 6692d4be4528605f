//! Tight-binding models and assembly of the Bloch pair H(k), S(k) on a
//! supercell with vacancies.

use std::fmt::Write as _;
use std::path::Path;

use faer::Mat;
use num_complex::Complex64;

use crate::disorder::DefectConfiguration;
use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, Role, Supercell, Vec2};

/// Largest |cell shift| a coupling may span.
pub const MAX_COUPLING_SHIFT: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OrbitalRef {
    pub basis: usize,
    pub orbital: usize,
}

/// `src` in cell c couples to `dst` in cell c + shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub shift: [i32; 2],
    pub src: OrbitalRef,
    pub dst: OrbitalRef,
    pub amplitude: Complex64,
}

impl Coupling {
    fn reversed(&self) -> Coupling {
        Coupling {
            shift: [-self.shift[0], -self.shift[1]],
            src: self.dst,
            dst: self.src,
            amplitude: self.amplitude.conj(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Overlap {
    Identity,
    /// Off-diagonal overlaps; diagonal entries are always 1.
    Couplings(Vec<Coupling>),
}

/// A validated tight-binding model on a honeycomb lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct TbModel {
    name: String,
    lattice: LatticeSpec,
    /// On-site energy per basis site and orbital (eV).
    onsite: Vec<Vec<f64>>,
    hopping: Vec<Coupling>,
    overlap: Overlap,
}

impl TbModel {
    pub fn new(name: impl Into<String>, lattice: LatticeSpec, onsite: Vec<Vec<f64>>, hopping: Vec<Coupling>, overlap: Overlap) -> Result<Self> {
        let model = TbModel { name: name.into(), lattice, onsite, hopping, overlap };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        self.lattice.validate()?;
        if self.onsite.len() != self.lattice.basis.len() {
            return Err(Error::InvalidModel("on-site table does not match the basis".into()));
        }
        for (b, e) in self.onsite.iter().enumerate() {
            if e.len() != self.lattice.orbitals(b) {
                return Err(Error::InvalidModel(format!("basis {b}: {} on-site energies for {} orbitals", e.len(), self.lattice.orbitals(b))));
            }
            if e.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidModel("non-finite on-site energy".into()));
            }
        }
        self.validate_couplings(&self.hopping, "hopping")?;
        if let Overlap::Couplings(c) = &self.overlap {
            self.validate_couplings(c, "overlap")?;
        }
        Ok(())
    }

    fn validate_couplings(&self, list: &[Coupling], what: &str) -> Result<()> {
        for c in list {
            for r in [c.src, c.dst] {
                if r.basis >= self.lattice.basis.len() || r.orbital >= self.lattice.orbitals(r.basis) {
                    return Err(Error::InvalidModel(format!("{what} coupling references missing orbital {r:?}")));
                }
            }
            if c.shift.iter().any(|s| s.abs() > MAX_COUPLING_SHIFT) {
                return Err(Error::InvalidModel(format!("{what} coupling shift {:?} exceeds {MAX_COUPLING_SHIFT}", c.shift)));
            }
            if c.shift == [0, 0] && c.src == c.dst {
                return Err(Error::InvalidModel(format!("{what} coupling of {:?} to itself; use an on-site entry", c.src)));
            }
            if !(c.amplitude.re.is_finite() && c.amplitude.im.is_finite()) {
                return Err(Error::InvalidModel(format!("non-finite {what} amplitude")));
            }
            let rev = c.reversed();
            let closed = list.iter().any(|d| {
                d.shift == rev.shift && d.src == rev.src && d.dst == rev.dst && (d.amplitude - rev.amplitude).norm() <= 1e-12
            });
            if !closed {
                return Err(Error::InvalidModel(format!(
                    "{what} coupling {:?} -> {:?} at shift {:?} has no conjugate partner",
                    c.src, c.dst, c.shift
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    /// Replace the primitive vectors, keeping couplings and basis fractions.
    pub fn with_primitive_vectors(mut self, a1: Vec2, a2: Vec2) -> Result<Self> {
        self.lattice = self.lattice.with_primitive_vectors(a1, a2)?;
        Ok(self)
    }

    pub fn onsite(&self) -> &[Vec<f64>] {
        &self.onsite
    }

    pub fn hopping(&self) -> &[Coupling] {
        &self.hopping
    }

    pub fn overlap(&self) -> &Overlap {
        &self.overlap
    }

    /// True when every amplitude is real, so that H(-k) = conj(H(k)) and the
    /// spectra at k and -k coincide.
    pub fn time_reversal_symmetric(&self) -> bool {
        let real = |l: &[Coupling]| l.iter().all(|c| c.amplitude.im == 0.0);
        real(&self.hopping)
            && match &self.overlap {
                Overlap::Identity => true,
                Overlap::Couplings(c) => real(c),
            }
    }
}

/// Nearest-neighbour pi-band model of graphene with overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrapheneNNModel {
    pub eps_2p: f64,
    pub t: f64,
    pub s: f64,
}

impl Default for GrapheneNNModel {
    fn default() -> Self {
        GrapheneNNModel { eps_2p: 0.0, t: -3.033, s: 0.129 }
    }
}

impl GrapheneNNModel {
    pub fn new(eps_2p: f64, t: f64, s: f64) -> Result<Self> {
        if !(eps_2p.is_finite() && t.is_finite() && s.is_finite()) {
            return Err(Error::InvalidModel("non-finite graphene parameter".into()));
        }
        if (3.0 * s).abs() >= 1.0 {
            return Err(Error::InvalidModel(format!("overlap s = {s} violates |3s| < 1")));
        }
        Ok(GrapheneNNModel { eps_2p, t, s })
    }

    /// Cell shifts from an A site to its three B neighbours.
    pub const NEIGHBOUR_SHIFTS: [[i32; 2]; 3] = [[0, 0], [-1, 0], [0, -1]];

    fn bonds(value: f64) -> Vec<Coupling> {
        let a = OrbitalRef { basis: 0, orbital: 0 };
        let b = OrbitalRef { basis: 1, orbital: 0 };
        let amp = Complex64::new(value, 0.0);
        Self::NEIGHBOUR_SHIFTS
            .iter()
            .flat_map(|&shift| {
                let fwd = Coupling { shift, src: a, dst: b, amplitude: amp };
                [fwd, fwd.reversed()]
            })
            .collect()
    }

    pub fn build(&self) -> TbModel {
        let overlap = if self.s == 0.0 { Overlap::Identity } else { Overlap::Couplings(Self::bonds(self.s)) };
        TbModel::new(
            "graphene-nn",
            LatticeSpec::honeycomb(),
            vec![vec![self.eps_2p], vec![self.eps_2p]],
            Self::bonds(self.t),
            overlap,
        )
        .expect("graphene model is valid by construction")
    }
}

/// Multi-orbital model read from a coupling table.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiOrbitalModel {
    /// Orbital labels per role, indexed by [`Role::index`].
    pub orbitals: [Vec<String>; 2],
    pub removable: Vec<Role>,
    pub onsite: [Vec<f64>; 2],
    pub couplings: Vec<Coupling>,
    pub overlap: Overlap,
}

/// Version accepted by [`MultiOrbitalModel::parse`].
pub const TABLE_FORMAT_VERSION: u32 = 1;

impl MultiOrbitalModel {
    /// Parse the line-oriented coupling table.
    ///
    /// ```text
    /// tbtable 1
    /// orbitals A <label>...
    /// orbitals B <label>...
    /// removable B
    /// overlap identity            # or: overlap table
    /// onsite <role> <orbital> <energy_eV>
    /// <di> <dj> <src_role> <src_orb> <dst_role> <dst_orb> <re> <im>
    /// S <di> <dj> <src_role> <src_orb> <dst_role> <dst_orb> <re> <im>
    /// ```
    ///
    /// `#` starts a comment. Orbital indices are 0-based positions in the
    /// `orbitals` lists. `S` lines are only valid after `overlap table`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut version_seen = false;
        let mut orbitals: [Option<Vec<String>>; 2] = [None, None];
        let mut removable = Vec::new();
        let mut overlap_table: Option<bool> = None;
        let mut onsite: Vec<(usize, Role, usize, f64)> = Vec::new();
        let mut couplings = Vec::new();
        let mut overlaps = Vec::new();

        let err = |line: usize, message: String| Error::TableParse { line, message };

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            if !version_seen {
                if fields.len() != 2 || fields[0] != "tbtable" {
                    return Err(err(line, "expected header `tbtable <version>`".into()));
                }
                let v: u32 = fields[1].parse().map_err(|_| err(line, format!("bad version `{}`", fields[1])))?;
                if v != TABLE_FORMAT_VERSION {
                    return Err(err(line, format!("unsupported table version {v}")));
                }
                version_seen = true;
                continue;
            }
            let role = |s: &str| Role::parse(s).ok_or_else(|| err(line, format!("unknown role `{s}`")));
            match fields[0] {
                "orbitals" => {
                    if fields.len() < 2 {
                        return Err(err(line, "orbitals needs a role".into()));
                    }
                    let r = role(fields[1])?;
                    if orbitals[r.index()].is_some() {
                        return Err(err(line, format!("orbitals for {r:?} given twice")));
                    }
                    orbitals[r.index()] = Some(fields[2..].iter().map(|s| s.to_string()).collect());
                }
                "removable" => {
                    for f in &fields[1..] {
                        removable.push(role(f)?);
                    }
                }
                "overlap" => match fields.get(1).copied() {
                    Some("identity") if fields.len() == 2 => overlap_table = Some(false),
                    Some("table") if fields.len() == 2 => overlap_table = Some(true),
                    _ => return Err(err(line, "expected `overlap identity` or `overlap table`".into())),
                },
                "onsite" => {
                    if fields.len() != 4 {
                        return Err(err(line, "expected `onsite <role> <orbital> <energy>`".into()));
                    }
                    let orb = parse_num::<usize>(fields[2], line)?;
                    let e = parse_num::<f64>(fields[3], line)?;
                    onsite.push((line, role(fields[1])?, orb, e));
                }
                "S" => {
                    if overlap_table != Some(true) {
                        return Err(err(line, "overlap entry without `overlap table`".into()));
                    }
                    overlaps.push((line, parse_coupling(&fields[1..], line)?));
                }
                _ => couplings.push((line, parse_coupling(&fields, line)?)),
            }
        }
        if !version_seen {
            return Err(err(0, "missing `tbtable` header".into()));
        }
        let orbitals = orbitals.map(|o| o.unwrap_or_default());
        if orbitals.iter().all(|o| o.is_empty()) {
            return Err(err(0, "no orbitals declared".into()));
        }
        let mut onsite_table = [vec![0.0; orbitals[0].len()], vec![0.0; orbitals[1].len()]];
        for (line, r, orb, e) in onsite {
            let slot = onsite_table[r.index()]
                .get_mut(orb)
                .ok_or_else(|| err(line, format!("orbital {orb} out of range for {r:?}")))?;
            *slot = e;
        }
        let resolve = |list: Vec<(usize, RawCoupling)>| -> Result<Vec<Coupling>> {
            list.into_iter()
                .map(|(line, c)| {
                    for (r, o) in [(c.src_role, c.src_orb), (c.dst_role, c.dst_orb)] {
                        if o >= orbitals[r.index()].len() {
                            return Err(err(line, format!("orbital {o} out of range for {r:?}")));
                        }
                    }
                    Ok(Coupling {
                        shift: c.shift,
                        src: OrbitalRef { basis: c.src_role.index(), orbital: c.src_orb },
                        dst: OrbitalRef { basis: c.dst_role.index(), orbital: c.dst_orb },
                        amplitude: c.amplitude,
                    })
                })
                .collect()
        };
        let couplings = resolve(couplings)?;
        let overlap = match overlap_table {
            Some(true) => Overlap::Couplings(resolve(overlaps)?),
            _ => Overlap::Identity,
        };
        let model = MultiOrbitalModel { orbitals, removable, onsite: onsite_table, couplings, overlap };
        model.build()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn build(&self) -> Result<TbModel> {
        let mut lattice = LatticeSpec::honeycomb();
        lattice.orbitals_per_role = [self.orbitals[0].len(), self.orbitals[1].len()];
        for b in &mut lattice.basis {
            b.removable = self.removable.contains(&b.role);
        }
        let onsite = lattice.basis.iter().map(|b| self.onsite[b.role.index()].clone()).collect();
        TbModel::new("multi-orbital", lattice, onsite, self.couplings.clone(), self.overlap.clone())
    }

    /// Serialize back to the table format.
    pub fn to_table(&self) -> String {
        let mut out = format!("tbtable {TABLE_FORMAT_VERSION}\n");
        for r in [Role::A, Role::B] {
            let _ = writeln!(out, "orbitals {r:?} {}", self.orbitals[r.index()].join(" "));
        }
        let roles: Vec<String> = self.removable.iter().map(|r| format!("{r:?}")).collect();
        let _ = writeln!(out, "removable {}", roles.join(" "));
        let role_name = |b: usize| if b == 0 { "A" } else { "B" };
        let line = |c: &Coupling| {
            format!(
                "{} {} {} {} {} {} {:e} {:e}",
                c.shift[0], c.shift[1], role_name(c.src.basis), c.src.orbital, role_name(c.dst.basis), c.dst.orbital, c.amplitude.re, c.amplitude.im
            )
        };
        match &self.overlap {
            Overlap::Identity => out.push_str("overlap identity\n"),
            Overlap::Couplings(_) => out.push_str("overlap table\n"),
        }
        for r in [Role::A, Role::B] {
            for (o, e) in self.onsite[r.index()].iter().enumerate() {
                let _ = writeln!(out, "onsite {r:?} {o} {e:e}");
            }
        }
        for c in &self.couplings {
            let _ = writeln!(out, "{}", line(c));
        }
        if let Overlap::Couplings(list) = &self.overlap {
            for c in list {
                let _ = writeln!(out, "S {}", line(c));
            }
        }
        out
    }
}

struct RawCoupling {
    shift: [i32; 2],
    src_role: Role,
    src_orb: usize,
    dst_role: Role,
    dst_orb: usize,
    amplitude: Complex64,
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::TableParse { line, message: format!("cannot parse `{s}`") })
}

fn parse_coupling(fields: &[&str], line: usize) -> Result<RawCoupling> {
    if fields.len() != 8 {
        return Err(Error::TableParse {
            line,
            message: format!("coupling needs 8 fields (di dj src_role src_orb dst_role dst_orb re im), got {}", fields.len()),
        });
    }
    let role = |s: &str| Role::parse(s).ok_or_else(|| Error::TableParse { line, message: format!("unknown role `{s}`") });
    Ok(RawCoupling {
        shift: [parse_num(fields[0], line)?, parse_num(fields[1], line)?],
        src_role: role(fields[2])?,
        src_orb: parse_num(fields[3], line)?,
        dst_role: role(fields[4])?,
        dst_orb: parse_num(fields[5], line)?,
        amplitude: Complex64::new(parse_num(fields[6], line)?, parse_num(fields[7], line)?),
    })
}

/// Hermitian pair for one k-point after vacancy removal.
#[derive(Debug, Clone)]
pub struct BlochOperatorPair {
    pub k: Vec2,
    pub h: Mat<Complex64>,
    pub s: Mat<Complex64>,
    /// True when S is exactly the identity.
    pub s_identity: bool,
    /// Row -> (site, orbital).
    pub dof_index: Vec<(usize, usize)>,
}

impl BlochOperatorPair {
    pub fn dim(&self) -> usize {
        self.dof_index.len()
    }
}

struct CouplingGroup {
    amplitude: Complex64,
    displacement: Vec2,
    entries: Vec<(usize, usize)>,
}

/// Geometry of one defected supercell, reusable across k-points.
pub struct BlochAssembler {
    dof_index: Vec<(usize, usize)>,
    onsite: Vec<f64>,
    hopping: Vec<CouplingGroup>,
    overlap: Option<Vec<CouplingGroup>>,
}

impl BlochAssembler {
    pub fn new(model: &TbModel, supercell: &Supercell, defects: &DefectConfiguration) -> Result<Self> {
        if supercell.spec() != model.lattice() {
            return Err(Error::InvalidArgument("supercell was built from a different lattice than the model".into()));
        }
        if !defects.fits(supercell) {
            return Err(Error::InvalidArgument("defect configuration belongs to a different supercell".into()));
        }
        let spec = supercell.spec();
        let mut first_dof: Vec<Option<usize>> = Vec::with_capacity(supercell.sites().len());
        let mut dof_index = Vec::new();
        let mut onsite = Vec::new();
        for (s, site) in supercell.sites().iter().enumerate() {
            if defects.is_site_vacant(supercell, s) {
                first_dof.push(None);
                continue;
            }
            first_dof.push(Some(dof_index.len()));
            for o in 0..spec.orbitals(site.basis) {
                dof_index.push((s, o));
                onsite.push(model.onsite()[site.basis][o]);
            }
        }
        if dof_index.is_empty() {
            return Err(Error::EmptySystem);
        }
        let group = |list: &[Coupling]| -> Vec<CouplingGroup> {
            let n = supercell.n() as i64;
            list.iter()
                .map(|c| {
                    let fs = spec.basis[c.src.basis].frac;
                    let fd = spec.basis[c.dst.basis].frac;
                    let displacement = spec.to_cartesian([
                        f64::from(c.shift[0]) + fd[0] - fs[0],
                        f64::from(c.shift[1]) + fd[1] - fs[1],
                    ]);
                    let mut entries = Vec::new();
                    for i in 0..supercell.n() {
                        for j in 0..supercell.n() {
                            let di = (i as i64 + i64::from(c.shift[0])).rem_euclid(n) as usize;
                            let dj = (j as i64 + i64::from(c.shift[1])).rem_euclid(n) as usize;
                            let src = supercell.site_index(i, j, c.src.basis);
                            let dst = supercell.site_index(di, dj, c.dst.basis);
                            if let (Some(r), Some(col)) = (first_dof[src], first_dof[dst]) {
                                entries.push((r + c.src.orbital, col + c.dst.orbital));
                            }
                        }
                    }
                    CouplingGroup { amplitude: c.amplitude, displacement, entries }
                })
                .filter(|g| !g.entries.is_empty())
                .collect()
        };
        let hopping = group(model.hopping());
        let overlap = match model.overlap() {
            Overlap::Identity => None,
            Overlap::Couplings(list) => Some(group(list)),
        };
        Ok(BlochAssembler { dof_index, onsite, hopping, overlap })
    }

    pub fn dim(&self) -> usize {
        self.dof_index.len()
    }

    pub fn assemble(&self, k: Vec2) -> Result<BlochOperatorPair> {
        if !(k[0].is_finite() && k[1].is_finite()) {
            return Err(Error::InvalidArgument(format!("k-point ({}, {}) is not finite", k[0], k[1])));
        }
        let dim = self.dim();
        let mut h = Mat::<Complex64>::zeros(dim, dim);
        for (r, &e) in self.onsite.iter().enumerate() {
            h[(r, r)] = Complex64::new(e, 0.0);
        }
        accumulate(&mut h, &self.hopping, k);
        let mut s = Mat::<Complex64>::identity(dim, dim);
        if let Some(groups) = &self.overlap {
            accumulate(&mut s, groups, k);
        }
        hermitize(&mut h);
        hermitize(&mut s);
        Ok(BlochOperatorPair { k, h, s, s_identity: self.overlap.is_none(), dof_index: self.dof_index.clone() })
    }
}

fn accumulate(m: &mut Mat<Complex64>, groups: &[CouplingGroup], k: Vec2) {
    for g in groups {
        let phase = Complex64::from_polar(1.0, k[0] * g.displacement[0] + k[1] * g.displacement[1]);
        let value = g.amplitude * phase;
        for &(r, c) in &g.entries {
            m[(r, c)] += value;
        }
    }
}

/// Average with the adjoint so that H = H^dagger holds exactly.
fn hermitize(m: &mut Mat<Complex64>) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in 0..i {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

pub fn assemble_bloch(model: &TbModel, supercell: &Supercell, defects: &DefectConfiguration, k: Vec2) -> Result<BlochOperatorPair> {
    BlochAssembler::new(model, supercell, defects)?.assemble(k)
}

/// Largest entrywise deviation from Hermiticity over H and S.
pub fn hermiticity_check(pair: &BlochOperatorPair) -> f64 {
    let dev = |m: &Mat<Complex64>| {
        let mut worst = 0.0f64;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        worst
    };
    dev(&pair.h).max(dev(&pair.s))
}

/// The K corner (b1 + 2 b2)/3 of the primitive Brillouin zone.
pub fn k_point_k(spec: &LatticeSpec) -> Vec2 {
    let [b1, b2] = spec.reciprocal();
    [(b1[0] + 2.0 * b2[0]) / 3.0, (b1[1] + 2.0 * b2[1]) / 3.0]
}
