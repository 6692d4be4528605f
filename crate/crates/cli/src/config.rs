//! Run configuration file (TOML). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use honeycomb_mlmc::disorder::DEFAULT_ENUMERATION_CAP;
use honeycomb_mlmc::lattice::Vec2;
use honeycomb_mlmc::mlmc::{PipelineConfig, DEFAULT_C_ALPHA};
use honeycomb_mlmc::qoi::{EnergyGrid, SmoothingSpec, DEFAULT_DELTA, DEFAULT_GRID_POINTS};
use honeycomb_mlmc::spectrum::BzMode;
use honeycomb_mlmc::tbmodel::{GrapheneNNModel, MultiOrbitalModel, TbModel};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mc,
    Mlmc,
    Exhaustive,
    Rates,
    Bands,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub material: Material,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub levels: Levels,
    #[serde(default)]
    pub qoi: Qoi,
    #[serde(default)]
    pub exhaustive: Exhaustive,
    #[serde(default)]
    pub bands: Bands,
}

fn one() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum Material {
    Graphene {
        #[serde(default)]
        eps_2p: Option<f64>,
        #[serde(default)]
        t: Option<f64>,
        #[serde(default)]
        s: Option<f64>,
        #[serde(default)]
        a1: Option<Vec2>,
        #[serde(default)]
        a2: Option<Vec2>,
    },
    /// Multi-orbital model read from a coupling table.
    Table {
        path: PathBuf,
        #[serde(default)]
        a1: Option<Vec2>,
        #[serde(default)]
        a2: Option<Vec2>,
    },
}

impl Default for Material {
    fn default() -> Self {
        Material::Graphene { eps_2p: None, t: None, s: None, a1: None, a2: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    #[serde(default)]
    pub p_vac: f64,
    /// Product n q held fixed across sizes.
    #[serde(default = "default_nq")]
    pub nq: usize,
    #[serde(default = "default_bz")]
    pub bz_mode: BzMode,
    #[serde(default = "yes")]
    pub cache: bool,
}

fn default_nq() -> usize {
    64
}

fn default_bz() -> BzMode {
    BzMode::Reduced
}

fn yes() -> bool {
    true
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling { p_vac: 0.0, nq: default_nq(), bz_mode: default_bz(), cache: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Levels {
    /// Level l uses n = c 2^l.
    #[serde(default = "one")]
    pub c: usize,
    /// Sample counts per level; the number of entries sets L.
    #[serde(default)]
    pub samples: Vec<usize>,
    /// Explicit supercell sizes; overrides `c` (mc and rates modes).
    #[serde(default)]
    pub sizes: Vec<usize>,
    /// Target tolerance; when set, sample counts come from a pilot run.
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default = "default_pilot")]
    pub pilot_samples: usize,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default = "default_c_alpha")]
    pub c_alpha: f64,
    /// Extra single-level samples at the finest size for comparison.
    #[serde(default)]
    pub slmc_samples: Option<usize>,
}

fn default_pilot() -> usize {
    10
}

fn default_c_alpha() -> f64 {
    DEFAULT_C_ALPHA
}

impl Default for Levels {
    fn default() -> Self {
        Levels {
            c: 1,
            samples: Vec::new(),
            sizes: Vec::new(),
            tol: None,
            pilot_samples: default_pilot(),
            theta: None,
            c_alpha: DEFAULT_C_ALPHA,
            slmc_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Qoi {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub energy_range: Option<[f64; 2]>,
    /// Differentiation step for the DoS column (eV); two grid steps if unset.
    #[serde(default)]
    pub dos_step: Option<f64>,
    /// Energy window (eV) for averaged variances.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_points() -> usize {
    DEFAULT_GRID_POINTS
}

impl Default for Qoi {
    fn default() -> Self {
        Qoi { delta: DEFAULT_DELTA, grid_points: DEFAULT_GRID_POINTS, energy_range: None, dos_step: None, window: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exhaustive {
    #[serde(default = "one")]
    pub n: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default)]
    pub symmetry: bool,
}

fn default_cap() -> usize {
    DEFAULT_ENUMERATION_CAP
}

impl Default for Exhaustive {
    fn default() -> Self {
        Exhaustive { n: 1, cap: DEFAULT_ENUMERATION_CAP, symmetry: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bands {
    #[serde(default = "one")]
    pub n: usize,
    #[serde(default = "default_band_q")]
    pub q: usize,
}

fn default_band_q() -> usize {
    32
}

impl Default for Bands {
    fn default() -> Self {
        Bands { n: 1, q: default_band_q() }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // Relative table paths are taken from the config's directory.
        if let Material::Table { path: table, .. } = &mut cfg.material {
            if table.is_relative() {
                if let Some(dir) = path.parent() {
                    *table = dir.join(&*table);
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.sampling.p_vac) {
            return bad(format!("sampling.p_vac = {} outside [0, 1]", self.sampling.p_vac));
        }
        if self.sampling.nq == 0 {
            return bad("sampling.nq must be positive".into());
        }
        if !(self.qoi.delta > 0.0) {
            return bad(format!("qoi.delta = {} must be positive", self.qoi.delta));
        }
        if self.qoi.grid_points < 2 {
            return bad("qoi.grid_points must be at least 2".into());
        }
        if let Some([a, b]) = self.qoi.energy_range {
            if !(a < b) {
                return bad(format!("qoi.energy_range [{a}, {b}] is empty"));
            }
        }
        if let Some([a, b]) = self.qoi.window {
            if !(a < b) {
                return bad(format!("qoi.window [{a}, {b}] is empty"));
            }
        }
        if let Material::Table { path, .. } = &self.material {
            if !path.exists() {
                return bad(format!("coupling table {} does not exist", path.display()));
            }
        }
        match self.mode {
            Mode::Mc | Mode::Mlmc => {
                if self.levels.samples.is_empty() && self.levels.tol.is_none() {
                    return bad("levels.samples is empty and no levels.tol is given".into());
                }
                if let Some(tol) = self.levels.tol {
                    if !(tol > 0.0) {
                        return bad(format!("levels.tol = {tol} must be positive"));
                    }
                    if self.levels.pilot_samples < 2 {
                        return bad("levels.pilot_samples must be at least 2".into());
                    }
                    if self.level_sizes().is_empty() {
                        return bad("levels.tol needs levels.sizes or levels.samples to fix the level count".into());
                    }
                }
                if self.mode == Mode::Mc && self.level_sizes().len() != 1 {
                    return bad("mc mode takes exactly one level".into());
                }
            }
            Mode::Rates => {
                if self.levels.sizes.len() < 2 {
                    return bad("rates mode needs at least two levels.sizes".into());
                }
                if self.levels.samples.len() != 1 || self.levels.samples[0] < 2 {
                    return bad("rates mode needs levels.samples = [M] with M >= 2".into());
                }
            }
            Mode::Exhaustive | Mode::Bands => {}
        }
        Ok(())
    }

    /// Supercell factor of each level.
    pub fn level_sizes(&self) -> Vec<usize> {
        if !self.levels.sizes.is_empty() {
            return self.levels.sizes.clone();
        }
        (1..=self.levels.samples.len()).map(|l| self.levels.c << l).collect()
    }

    pub fn model(&self) -> Result<TbModel, honeycomb_mlmc::Error> {
        let (model, a1, a2) = match &self.material {
            Material::Graphene { eps_2p, t, s, a1, a2 } => {
                let d = GrapheneNNModel::default();
                let m = GrapheneNNModel::new(eps_2p.unwrap_or(d.eps_2p), t.unwrap_or(d.t), s.unwrap_or(d.s))?;
                (m.build(), a1, a2)
            }
            Material::Table { path, a1, a2 } => (MultiOrbitalModel::load(path)?.build()?, a1, a2),
        };
        match (a1, a2) {
            (Some(a1), Some(a2)) => model.with_primitive_vectors(*a1, *a2),
            (None, None) => Ok(model),
            _ => Err(honeycomb_mlmc::Error::InvalidLattice("give both a1 and a2 or neither".into())),
        }
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, honeycomb_mlmc::Error> {
        let grid = self.qoi.energy_range.map(|[a, b]| EnergyGrid::new(a, b, self.qoi.grid_points)).transpose()?;
        Ok(PipelineConfig {
            p_vac: self.sampling.p_vac,
            nq: self.sampling.nq,
            mode: self.sampling.bz_mode,
            smoothing: SmoothingSpec::new(self.qoi.delta)?,
            grid,
            grid_points: self.qoi.grid_points,
            cache: self.sampling.cache,
        })
    }

    pub fn window(&self) -> Option<(f64, f64)> {
        self.qoi.window.map(|[a, b]| (a, b))
    }
}
