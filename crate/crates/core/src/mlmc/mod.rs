//! Monte Carlo and multilevel Monte Carlo estimators over IDoS curves.

mod allocation;
mod rates;

pub use allocation::{complexity_exponents, optimal_samples, splitting_theta, Complexity, DEFAULT_C_ALPHA};
pub use rates::{fit_power_law, fit_rates, observations_from_levels, rate_study, slmc_comparison, PowerFit, RateEstimates, RateObservations, RateStudy, SlmcComparison};

use std::collections::HashMap;
use std::ops::Range;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::disorder::{
    enumerate_configs, enumerate_translation_classes, restrict, sample_defects, CacheKey,
    DedupCache, DefectConfiguration, SeedSpec,
};
use crate::error::{Error, Result};
use crate::exec::parallel_map;
use crate::lattice::{partition_quarters, PartitionMap, Supercell, QUARTERS};
use crate::qoi::{auto_energy_grid, idos, EnergyGrid, SmoothingSpec, DEFAULT_GRID_POINTS};
use crate::spectrum::{make_bz_grid, solve_bands, BzMode};
use crate::tbmodel::TbModel;

/// Settings shared by every sample of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub p_vac: f64,
    /// Product n q held fixed across supercell sizes.
    pub nq: usize,
    pub mode: BzMode,
    pub smoothing: SmoothingSpec,
    /// Explicit energy grid; detected from the unperturbed bands if absent.
    pub grid: Option<EnergyGrid>,
    pub grid_points: usize,
    pub cache: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            p_vac: 0.0,
            nq: 64,
            mode: BzMode::Reduced,
            smoothing: SmoothingSpec::default(),
            grid: None,
            grid_points: DEFAULT_GRID_POINTS,
            cache: true,
        }
    }
}

/// Bookkeeping for one computed curve.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CurveInfo {
    pub cache_hits: usize,
    pub eigensolves: usize,
}

impl std::ops::AddAssign for CurveInfo {
    fn add_assign(&mut self, rhs: Self) {
        self.cache_hits += rhs.cache_hits;
        self.eigensolves += rhs.eigensolves;
    }
}

/// Model plus run settings; maps a defect configuration to its IDoS curve.
#[derive(Debug)]
pub struct Pipeline {
    model: TbModel,
    config: PipelineConfig,
    grid: EnergyGrid,
    cache: Option<DedupCache<Vec<f64>>>,
    supercells: Mutex<HashMap<usize, Arc<Supercell>>>,
    partitions: Mutex<HashMap<usize, Arc<PartitionMap>>>,
}

impl Pipeline {
    pub fn new(model: TbModel, config: PipelineConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.p_vac) {
            return Err(Error::InvalidArgument(format!("vacancy probability {} outside [0, 1]", config.p_vac)));
        }
        if config.nq == 0 {
            return Err(Error::InvalidArgument("n q must be positive".into()));
        }
        let grid = match config.grid {
            Some(g) => g,
            None => auto_energy_grid(&model, config.nq, config.mode, config.smoothing, config.grid_points)?,
        };
        let cache = config.cache.then(DedupCache::new);
        Ok(Pipeline {
            model,
            config,
            grid,
            cache,
            supercells: Mutex::new(HashMap::new()),
            partitions: Mutex::new(HashMap::new()),
        })
    }

    pub fn model(&self) -> &TbModel {
        &self.model
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn grid(&self) -> &EnergyGrid {
        &self.grid
    }

    pub fn p_vac(&self) -> f64 {
        self.config.p_vac
    }

    pub fn cache(&self) -> Option<&DedupCache<Vec<f64>>> {
        self.cache.as_ref()
    }

    /// k-resolution for supercell factor `n`.
    pub fn q_for(&self, n: usize) -> Result<usize> {
        if n == 0 || self.config.nq % n != 0 {
            return Err(Error::InvalidArgument(format!("n q = {} is not a multiple of n = {n}", self.config.nq)));
        }
        Ok(self.config.nq / n)
    }

    pub fn supercell(&self, n: usize) -> Result<Arc<Supercell>> {
        let mut map = self.supercells.lock().expect("supercell lock poisoned");
        if let Some(sc) = map.get(&n) {
            return Ok(sc.clone());
        }
        let sc = Arc::new(Supercell::new(self.model.lattice().clone(), n)?);
        map.insert(n, sc.clone());
        Ok(sc)
    }

    pub fn partition(&self, n: usize) -> Result<Arc<PartitionMap>> {
        let sc = self.supercell(n)?;
        let mut map = self.partitions.lock().expect("partition lock poisoned");
        if let Some(p) = map.get(&n) {
            return Ok(p.clone());
        }
        let p = Arc::new(partition_quarters(&sc)?);
        map.insert(n, p.clone());
        Ok(p)
    }

    fn compute_curve(&self, sc: &Supercell, config: &DefectConfiguration, q: usize) -> Result<(Vec<f64>, usize)> {
        let grid = make_bz_grid(self.model.lattice(), sc.n(), q, self.config.mode)?;
        let area = sc.cell_count() as f64;
        match solve_bands(&self.model, sc, config, &grid) {
            Ok(bands) => Ok((idos(&bands, &self.grid, self.config.smoothing, area)?.values, bands.eigensolves)),
            // A supercell with every orbital removed has no states.
            Err(Error::EmptySystem) => Ok((vec![0.0; self.grid.points], 0)),
            Err(e) => Err(e),
        }
    }

    /// IDoS curve of one configuration at its level's k-resolution.
    pub fn curve(&self, config: &DefectConfiguration) -> Result<(Arc<Vec<f64>>, CurveInfo)> {
        let n = config.supercell_factor();
        let sc = self.supercell(n)?;
        if !config.fits(&sc) {
            return Err(Error::InvalidArgument("configuration does not match the supercell".into()));
        }
        let q = self.q_for(n)?;
        match &self.cache {
            Some(cache) => {
                let mut solves = 0;
                let (v, hit) = cache.get_or_compute(CacheKey::new(q, config), || {
                    let (v, s) = self.compute_curve(&sc, config, q)?;
                    solves = s;
                    Ok(v)
                })?;
                Ok((v, CurveInfo { cache_hits: usize::from(hit), eigensolves: solves }))
            }
            None => {
                let (v, s) = self.compute_curve(&sc, config, q)?;
                Ok((Arc::new(v), CurveInfo { cache_hits: 0, eigensolves: s }))
            }
        }
    }

    /// Mean of the curves of the four quarter restrictions of `config`.
    pub fn control_variate(&self, config: &DefectConfiguration) -> Result<(Vec<f64>, CurveInfo)> {
        let partition = self.partition(config.supercell_factor())?;
        let mut sum = vec![0.0; self.grid.points];
        let mut info = CurveInfo::default();
        for r in 1..=QUARTERS as u8 {
            let (curve, i) = self.curve(&restrict(config, &partition, r)?)?;
            info += i;
            for (s, v) in sum.iter_mut().zip(curve.iter()) {
                *s += v;
            }
        }
        for s in &mut sum {
            *s /= QUARTERS as f64;
        }
        Ok((sum, info))
    }

    /// `(Q, Q_cv)` for one configuration; both members see the same vacancies.
    pub fn control_variate_sample(&self, config: &DefectConfiguration) -> Result<CvSample> {
        let start = Instant::now();
        let (q, mut info) = self.curve(config)?;
        let q_seconds = start.elapsed().as_secs_f64();
        let (cv, i) = self.control_variate(config)?;
        info += i;
        Ok(CvSample { q, cv: Some(cv), q_seconds, info })
    }

    /// Draws configuration `seed` on an n-fold supercell and evaluates it.
    pub fn sample(&self, n: usize, seed: SeedSpec, with_cv: bool) -> Result<CvSample> {
        let sc = self.supercell(n)?;
        let config = sample_defects(&sc, self.config.p_vac, seed)?;
        if with_cv {
            self.control_variate_sample(&config)
        } else {
            let start = Instant::now();
            let (q, info) = self.curve(&config)?;
            Ok(CvSample { q, cv: None, q_seconds: start.elapsed().as_secs_f64(), info })
        }
    }
}

#[derive(Debug, Clone)]
pub struct CvSample {
    pub q: Arc<Vec<f64>>,
    pub cv: Option<Vec<f64>>,
    /// Time spent on `q` alone.
    pub q_seconds: f64,
    pub info: CurveInfo,
}

impl CvSample {
    pub fn difference(&self) -> Option<Vec<f64>> {
        self.cv.as_ref().map(|cv| self.q.iter().zip(cv).map(|(a, b)| a - b).collect())
    }
}

/// Pointwise sample mean and unbiased sample variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// Zero when fewer than two samples are available.
    pub variance: Vec<f64>,
    pub count: usize,
}

impl Moments {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a [f64]> + Clone, len: usize) -> Self {
        let mut mean = vec![0.0; len];
        let mut count = 0;
        for s in samples.clone() {
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x;
            }
            count += 1;
        }
        if count > 0 {
            for m in &mut mean {
                *m /= count as f64;
            }
        }
        // Shifted by the first sample so identical samples give exactly zero.
        let mut variance = vec![0.0; len];
        if count > 1 {
            let mut first = samples.clone().into_iter();
            let shift = first.next().expect("count > 1").to_vec();
            let mut sum = vec![0.0; len];
            for s in samples {
                for (((v, t), x), x0) in variance.iter_mut().zip(sum.iter_mut()).zip(s).zip(&shift) {
                    let d = x - x0;
                    *t += d;
                    *v += d * d;
                }
            }
            let c = count as f64;
            for (v, t) in variance.iter_mut().zip(&sum) {
                *v = ((*v - t * t / c) / (c - 1.0)).max(0.0);
            }
        }
        Moments { mean, variance, count }
    }

    pub fn variance_available(&self) -> bool {
        self.count > 1
    }

    pub fn window_variance(&self, window: &Range<usize>) -> f64 {
        window_mean(&self.variance, window)
    }
}

/// Arithmetic mean of `values` over the index range.
pub fn window_mean(values: &[f64], window: &Range<usize>) -> f64 {
    let w = &values[window.clone()];
    if w.is_empty() {
        return f64::NAN;
    }
    w.iter().sum::<f64>() / w.len() as f64
}

/// Per-level statistics of an estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub n: usize,
    pub q: usize,
    pub nsamples: usize,
    /// Moments of the level term: `Q` on level 1, `Q - Q_cv` above.
    pub term: Moments,
    /// Moments of `Q` alone.
    pub quantity: Moments,
    /// Moments of `Q - Q_cv` when control variates were computed.
    pub difference: Option<Moments>,
    /// Window average of the level-term variance.
    pub mean_level_variance: f64,
    pub mean_quantity_variance: f64,
    pub mean_difference_variance: Option<f64>,
    /// Sum of per-sample task times.
    pub task_seconds: f64,
    /// Mean time per sample spent on `Q` alone.
    pub q_seconds_per_sample: f64,
    /// Elapsed time for the level.
    pub wall_time_s: f64,
    pub cache_hits: usize,
    pub eigensolves: usize,
    #[serde(skip)]
    pub samples: Option<Vec<Vec<f64>>>,
}

impl LevelStats {
    pub fn seconds_per_sample(&self) -> f64 {
        self.task_seconds / self.nsamples as f64
    }
}

/// One level of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub n: usize,
    pub samples: usize,
}

/// Supercell sizes and sample counts; sizes must double from level to level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelPlan {
    pub levels: Vec<LevelSpec>,
}

impl LevelPlan {
    pub fn new(levels: Vec<LevelSpec>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("level plan is empty".into()));
        }
        for (i, l) in levels.iter().enumerate() {
            if l.samples == 0 {
                return Err(Error::InvalidArgument(format!("level {} has no samples", i + 1)));
            }
            if l.n == 0 {
                return Err(Error::InvalidArgument(format!("level {} has supercell factor 0", i + 1)));
            }
            if i > 0 && l.n != 2 * levels[i - 1].n {
                return Err(Error::InvalidArgument(format!(
                    "level {} has n = {}, expected {}",
                    i + 1,
                    l.n,
                    2 * levels[i - 1].n
                )));
            }
        }
        Ok(LevelPlan { levels })
    }

    /// Levels 1..=L with n = c 2^l.
    pub fn geometric(c: usize, samples: &[usize]) -> Result<Self> {
        Self::new(samples.iter().enumerate().map(|(i, &m)| LevelSpec { n: c << (i + 1), samples: m }).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOptions {
    pub master_seed: u64,
    pub workers: usize,
    /// Energy window (eV) for averaged variances; the whole grid if absent.
    pub window: Option<(f64, f64)>,
    pub keep_samples: bool,
    /// Offset added to level numbers when deriving seed streams.
    pub stream_offset: u32,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions { master_seed: 0, workers: 1, window: None, keep_samples: false, stream_offset: 0 }
    }
}

impl EstimatorOptions {
    pub fn window_range(&self, grid: &EnergyGrid) -> Range<usize> {
        match self.window {
            Some((a, b)) => grid.window(a, b),
            None => 0..grid.points,
        }
    }
}

/// Seed-stream offset reserved for single-level comparison runs.
pub const SLMC_STREAM_OFFSET: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcEstimate {
    pub grid: EnergyGrid,
    pub mean: Vec<f64>,
    /// Sum over levels of V_l / M_l.
    pub variance: Vec<f64>,
    pub variance_available: bool,
    pub levels: Vec<LevelStats>,
    pub wall_time_s: f64,
}

impl MlmcEstimate {
    pub fn task_seconds(&self) -> f64 {
        self.levels.iter().map(|l| l.task_seconds).sum()
    }
}

/// Runs `samples` draws at supercell factor `n` and collects statistics.
/// The seed stream of replicate m is `(level + offset, m)`.
pub fn run_level(pipeline: &Pipeline, level: usize, n: usize, samples: usize, with_cv: bool, opts: &EstimatorOptions) -> Result<LevelStats> {
    let start = Instant::now();
    let tag = u32::try_from(level).map_err(|_| Error::InvalidArgument("level index too large".into()))? + opts.stream_offset;
    let q = pipeline.q_for(n)?;
    if with_cv {
        pipeline.q_for(n / 2)?;
    }
    let tasks: Vec<u64> = (0..samples as u64).collect();
    let results = parallel_map(
        &tasks,
        opts.workers,
        |_, &m| format!("(level {level}, replicate {m})"),
        |&m| pipeline.sample(n, SeedSpec::new(opts.master_seed, tag, m), with_cv),
    )?;
    let len = pipeline.grid().points;
    let window = opts.window_range(pipeline.grid());
    let quantity = Moments::from_samples(results.iter().map(|r| r.value.q.as_slice()), len);
    let diffs: Option<Vec<Vec<f64>>> = with_cv.then(|| results.iter().map(|r| r.value.difference().expect("cv computed")).collect());
    let difference = diffs.as_ref().map(|d| Moments::from_samples(d.iter().map(|v| v.as_slice()), len));
    let term = if level > 1 {
        difference.clone().ok_or_else(|| Error::InvalidArgument("levels above the first need control variates".into()))?
    } else {
        quantity.clone()
    };
    let samples_kept = opts.keep_samples.then(|| match (&diffs, level > 1) {
        (Some(d), true) => d.clone(),
        _ => results.iter().map(|r| r.value.q.to_vec()).collect(),
    });
    let mut info = CurveInfo::default();
    for r in &results {
        info += r.value.info;
    }
    Ok(LevelStats {
        level,
        n,
        q,
        nsamples: samples,
        mean_level_variance: term.window_variance(&window),
        mean_quantity_variance: quantity.window_variance(&window),
        mean_difference_variance: difference.as_ref().map(|d| d.window_variance(&window)),
        term,
        quantity,
        difference,
        task_seconds: results.iter().map(|r| r.seconds).sum(),
        q_seconds_per_sample: results.iter().map(|r| r.value.q_seconds).sum::<f64>() / samples as f64,
        wall_time_s: start.elapsed().as_secs_f64(),
        cache_hits: info.cache_hits,
        eigensolves: info.eigensolves,
        samples: samples_kept,
    })
}

/// Single-level Monte Carlo mean over `samples` draws at factor `n`.
pub fn mc_estimate(pipeline: &Pipeline, n: usize, samples: usize, opts: &EstimatorOptions) -> Result<MlmcEstimate> {
    let plan = LevelPlan::new(vec![LevelSpec { n, samples }])?;
    mlmc_estimate(pipeline, &plan, opts)
}

/// `mean(Q_1) + sum_{l >= 2} mean(Q_l - Q_l^cv)` with independent draws per
/// level and shared draws within each difference.
pub fn mlmc_estimate(pipeline: &Pipeline, plan: &LevelPlan, opts: &EstimatorOptions) -> Result<MlmcEstimate> {
    let start = Instant::now();
    let mut levels = Vec::with_capacity(plan.levels.len());
    for (i, spec) in plan.levels.iter().enumerate() {
        let level = i + 1;
        let stats = run_level(pipeline, level, spec.n, spec.samples, level > 1, opts)
            .map_err(|e| Error::LevelFailed { level, completed_levels: i, source: Box::new(e) })?;
        levels.push(stats);
    }
    Ok(combine_levels(*pipeline.grid(), levels, start.elapsed().as_secs_f64()))
}

/// Adds level terms in level order and sums the variances `V_l / M_l`.
pub fn combine_levels(grid: EnergyGrid, levels: Vec<LevelStats>, wall_time_s: f64) -> MlmcEstimate {
    let len = grid.points;
    let mut mean = vec![0.0; len];
    let mut variance = vec![0.0; len];
    for l in &levels {
        for i in 0..len {
            mean[i] += l.term.mean[i];
            variance[i] += l.term.variance[i] / l.nsamples as f64;
        }
    }
    let variance_available = levels.iter().all(|l| l.term.variance_available());
    MlmcEstimate { grid, mean, variance, variance_available, levels, wall_time_s }
}

/// Probability-weighted expectation over every configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    pub n: usize,
    pub mean: Vec<f64>,
    /// Exact variance of the curve under the configuration law.
    pub variance: Vec<f64>,
    pub weight_sum: f64,
    /// Configurations (or translation classes) evaluated.
    pub evaluated: usize,
}

/// What to average in an exhaustive expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExhaustiveTarget {
    Quantity,
    ControlVariate,
}

/// `E[Q]` or `E[Q_cv]` on an n-fold supercell by full enumeration. With
/// `symmetry` the configurations are grouped by lattice translation first.
pub fn exhaustive_expectation(
    pipeline: &Pipeline,
    n: usize,
    target: ExhaustiveTarget,
    cap: usize,
    symmetry: bool,
    workers: usize,
) -> Result<ExhaustiveResult> {
    let sc = pipeline.supercell(n)?;
    let p = pipeline.p_vac();
    let items: Vec<(DefectConfiguration, f64)> = if symmetry && target == ExhaustiveTarget::Quantity {
        enumerate_translation_classes(&sc, p, cap)?.into_iter().map(|c| (c.representative, c.weight)).collect()
    } else {
        enumerate_configs(&sc, p, cap)?.collect()
    };
    let curves = parallel_map(
        &items,
        workers,
        |i, _| format!("(configuration {i})"),
        |(config, _)| match target {
            ExhaustiveTarget::Quantity => pipeline.curve(config).map(|(c, _)| c.to_vec()),
            ExhaustiveTarget::ControlVariate => pipeline.control_variate(config).map(|(c, _)| c),
        },
    )?;
    let len = pipeline.grid().points;
    let mut mean = vec![0.0; len];
    let mut second = vec![0.0; len];
    let mut weight_sum = 0.0;
    for ((_, w), curve) in items.iter().zip(&curves) {
        weight_sum += w;
        for ((m, s), v) in mean.iter_mut().zip(second.iter_mut()).zip(&curve.value) {
            *m += w * v;
            *s += w * v * v;
        }
    }
    let variance = mean.iter().zip(&second).map(|(m, s)| (s - m * m).max(0.0)).collect();
    Ok(ExhaustiveResult { n, mean, variance, weight_sum, evaluated: items.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tbmodel::GrapheneNNModel;

    fn pipeline(p_vac: f64, nq: usize) -> Pipeline {
        let cfg = PipelineConfig { p_vac, nq, grid_points: 512, ..Default::default() };
        Pipeline::new(GrapheneNNModel::default().build(), cfg).unwrap()
    }

    #[test]
    fn plan_validation() {
        let plan = LevelPlan::geometric(1, &[10, 5, 2]).unwrap();
        assert_eq!(plan.levels.iter().map(|l| l.n).collect::<Vec<_>>(), vec![2, 4, 8]);
        assert!(LevelPlan::new(vec![LevelSpec { n: 2, samples: 1 }, LevelSpec { n: 6, samples: 1 }]).is_err());
        assert!(LevelPlan::new(vec![LevelSpec { n: 2, samples: 0 }]).is_err());
        assert!(LevelPlan::new(vec![]).is_err());
    }

    #[test]
    fn moments_match_hand_values() {
        let a = [1.0, 2.0];
        let b = [3.0, 2.0];
        let m = Moments::from_samples([&a[..], &b[..]], 2);
        assert_eq!(m.mean, vec![2.0, 2.0]);
        assert_eq!(m.variance, vec![2.0, 0.0]);
        let single = Moments::from_samples([&a[..]], 2);
        assert!(!single.variance_available());
    }

    #[test]
    fn zero_probability_gives_unperturbed_curve() {
        let p = pipeline(0.0, 8);
        let est = mc_estimate(&p, 2, 5, &EstimatorOptions::default()).unwrap();
        let sc = p.supercell(2).unwrap();
        let (clean, _) = p.curve(&DefectConfiguration::empty(&sc)).unwrap();
        assert!(est.mean.iter().zip(clean.iter()).all(|(a, b)| (a - b).abs() < 1e-14));
        assert!(est.variance.iter().all(|&v| v == 0.0));
        assert_eq!(est.levels[0].cache_hits, 4);
    }

    #[test]
    fn empty_configuration_cv_matches() {
        let p = pipeline(0.0, 8);
        let sc = p.supercell(4).unwrap();
        let s = p.control_variate_sample(&DefectConfiguration::empty(&sc)).unwrap();
        let d = s.difference().unwrap();
        assert!(d.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn fully_vacant_cell_has_no_states() {
        let p = pipeline(1.0, 2);
        let sc = p.supercell(1).unwrap();
        let (c, _) = p.curve(&DefectConfiguration::full(&sc)).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn q_policy() {
        let p = pipeline(0.1, 8);
        assert_eq!(p.q_for(2).unwrap(), 4);
        assert!(p.q_for(3).is_err());
    }
}
