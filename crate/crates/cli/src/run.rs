//! Executes a configured run and writes its artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use honeycomb_mlmc::mlmc::{
    complexity_exponents, exhaustive_expectation, fit_rates, mc_estimate, mlmc_estimate, observations_from_levels,
    optimal_samples, rate_study, run_level, slmc_comparison, splitting_theta, EstimatorOptions, ExhaustiveTarget,
    LevelPlan, LevelSpec, LevelStats, MlmcEstimate, Pipeline, RateEstimates, SLMC_STREAM_OFFSET,
};
use honeycomb_mlmc::qoi::{dos_by_differentiation, EnergyGrid, IdosCurve};
use honeycomb_mlmc::spectrum::{make_bz_grid, solve_bands};
use honeycomb_mlmc::disorder::DefectConfiguration;

use crate::config::{Mode, RunConfig};
use crate::CliError;

/// Seed-stream offset for pilot samples used in tolerance-driven allocation.
const PILOT_STREAM_OFFSET: u32 = 2000;

#[derive(Debug, Serialize)]
struct LevelRecord {
    level: usize,
    n: usize,
    q: usize,
    nsamples: usize,
    mean_level_variance: f64,
    wall_time_s: f64,
    cache_hits: usize,
    task_seconds: f64,
    q_seconds_per_sample: f64,
    eigensolves: usize,
    mean_quantity_variance: f64,
    mean_difference_variance: Option<f64>,
}

impl From<&LevelStats> for LevelRecord {
    fn from(l: &LevelStats) -> Self {
        LevelRecord {
            level: l.level,
            n: l.n,
            q: l.q,
            nsamples: l.nsamples,
            mean_level_variance: l.mean_level_variance,
            wall_time_s: l.wall_time_s,
            cache_hits: l.cache_hits,
            task_seconds: l.task_seconds,
            q_seconds_per_sample: l.q_seconds_per_sample,
            eigensolves: l.eigensolves,
            mean_quantity_variance: l.mean_quantity_variance,
            mean_difference_variance: l.mean_difference_variance,
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// `energy_eV,idos_mean,idos_variance,dos`
pub fn write_idos_csv(dir: &Path, grid: &EnergyGrid, mean: &[f64], variance: &[f64], dos: &[f64]) -> Result<(), CliError> {
    let mut out = create(dir, "idos.csv")?;
    writeln!(out, "energy_eV,idos_mean,idos_variance,dos")?;
    for m in 0..grid.points {
        writeln!(out, "{},{},{},{}", grid.energy(m), mean[m], variance[m], dos[m])?;
    }
    out.flush()?;
    Ok(())
}

fn write_levels(dir: &Path, levels: &[LevelStats]) -> Result<(), CliError> {
    let mut out = create(dir, "levels.jsonl")?;
    for l in levels {
        writeln!(out, "{}", serde_json::to_string(&LevelRecord::from(l))?)?;
    }
    out.flush()?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<(), CliError> {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn dos_column(cfg: &RunConfig, grid: &EnergyGrid, mean: &[f64]) -> Result<(Vec<f64>, f64), CliError> {
    let step = cfg.qoi.dos_step.unwrap_or(2.0 * grid.step());
    let curve = IdosCurve { grid: *grid, values: mean.to_vec() };
    Ok(dos_by_differentiation(&curve, step)?)
}

fn complexity_json(rates: &RateEstimates) -> Value {
    let theta = rates.w.map(|w| splitting_theta(w, rates.s, rates.c).map_err(|e| e.to_string()));
    let complexity = match (rates.w, rates.d) {
        (Some(w), Some(d)) => Some(complexity_exponents(w, rates.s, d, rates.c).map_err(|e| e.to_string())),
        _ => None,
    };
    json!({
        "theta": theta.map(|t| match t { Ok(v) => json!(v), Err(e) => json!({ "error": e }) }),
        "exponents": complexity.map(|c| match c { Ok(v) => json!(v), Err(e) => json!({ "error": e }) }),
    })
}

/// Runs the configured mode; returns the summary document.
pub fn execute(cfg: &RunConfig) -> Result<Value, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    fs::create_dir_all(&cfg.out)?;
    let model = cfg.model()?;
    if cfg.mode == Mode::Bands {
        return bands(cfg, model, start);
    }
    let pipeline = Pipeline::new(model, cfg.pipeline_config()?)?;
    let grid = *pipeline.grid();
    let opts = EstimatorOptions {
        master_seed: cfg.seed,
        workers: cfg.workers,
        window: cfg.window(),
        keep_samples: false,
        stream_offset: 0,
    };
    let window = opts.window_range(&grid);
    let mut summary = json!({
        "mode": cfg.mode,
        "master_seed": cfg.seed,
        "workers": cfg.workers,
        "model": pipeline.model().name(),
        "energy_grid": grid,
        "config": cfg,
    });

    match cfg.mode {
        Mode::Mc | Mode::Mlmc => {
            let sizes = cfg.level_sizes();
            let samples = match cfg.levels.tol {
                Some(tol) => {
                    let (m, pilot) = allocate(cfg, &pipeline, &sizes, tol, &opts)?;
                    summary["allocation"] = pilot;
                    m
                }
                None => cfg.levels.samples.clone(),
            };
            if samples.len() != sizes.len() {
                return Err(CliError::Config(format!("{} sample counts for {} levels", samples.len(), sizes.len())));
            }
            let plan = LevelPlan::new(sizes.iter().zip(&samples).map(|(&n, &m)| LevelSpec { n, samples: m }).collect())?;
            let est = if cfg.mode == Mode::Mc {
                mc_estimate(&pipeline, plan.levels[0].n, plan.levels[0].samples, &opts)?
            } else {
                mlmc_estimate(&pipeline, &plan, &opts)?
            };
            let (dos, width) = dos_column(cfg, &grid, &est.mean)?;
            write_idos_csv(&cfg.out, &grid, &est.mean, &est.variance, &dos)?;
            write_levels(&cfg.out, &est.levels)?;
            summary["dos_step_eV"] = json!(width);
            summary["variance_available"] = json!(est.variance_available);
            summary["estimator_variance_window_mean"] = json!(honeycomb_mlmc::mlmc::window_mean(&est.variance, &window));
            attach_rates(&mut summary, &est.levels, &window);
            if let Some(m) = cfg.levels.slmc_samples {
                summary["slmc_comparison"] = compare(cfg, &pipeline, &est, m, &opts, &window)?;
            }
        }
        Mode::Rates => {
            let study = rate_study(&pipeline, &cfg.levels.sizes, cfg.levels.samples[0], &opts)?;
            let finest = study.levels.last().expect("at least two sizes");
            let m = finest.nsamples as f64;
            let variance: Vec<f64> = finest.quantity.variance.iter().map(|v| v / m).collect();
            let (dos, width) = dos_column(cfg, &grid, &finest.quantity.mean)?;
            write_idos_csv(&cfg.out, &grid, &finest.quantity.mean, &variance, &dos)?;
            write_levels(&cfg.out, &study.levels)?;
            summary["dos_step_eV"] = json!(width);
            summary["observations"] = json!(study.observations);
            summary["complexity"] = complexity_json(&study.rates);
            summary["rates"] = json!(study.rates);
        }
        Mode::Exhaustive => {
            let n = cfg.exhaustive.n;
            let level_start = Instant::now();
            let res = exhaustive_expectation(&pipeline, n, ExhaustiveTarget::Quantity, cfg.exhaustive.cap, cfg.exhaustive.symmetry, cfg.workers)?;
            let (dos, width) = dos_column(cfg, &grid, &res.mean)?;
            write_idos_csv(&cfg.out, &grid, &res.mean, &res.variance, &dos)?;
            let record = json!({
                "level": 1,
                "n": n,
                "q": pipeline.q_for(n)?,
                "nsamples": res.evaluated,
                "mean_level_variance": honeycomb_mlmc::mlmc::window_mean(&res.variance, &window),
                "wall_time_s": level_start.elapsed().as_secs_f64(),
                "cache_hits": pipeline.cache().map_or(0, |c| c.hits()),
            });
            let mut out = create(&cfg.out, "levels.jsonl")?;
            writeln!(out, "{record}")?;
            out.flush()?;
            summary["dos_step_eV"] = json!(width);
            summary["weight_sum"] = json!(res.weight_sum);
            summary["configurations_evaluated"] = json!(res.evaluated);
        }
        Mode::Bands => unreachable!("handled above"),
    }
    summary["total_time_s"] = json!(start.elapsed().as_secs_f64());
    write_json(&cfg.out, "summary.json", &summary)?;
    Ok(summary)
}

fn attach_rates(summary: &mut Value, levels: &[LevelStats], window: &std::ops::Range<usize>) {
    if levels.len() < 2 {
        summary["rates"] = Value::Null;
        return;
    }
    match fit_rates(&observations_from_levels(levels, window)) {
        Ok(rates) => {
            summary["complexity"] = complexity_json(&rates);
            summary["rates"] = json!(rates);
        }
        Err(e) => summary["rates"] = json!({ "error": e.to_string() }),
    }
}

/// Pilot samples per level, then the variance-optimal counts for `tol`.
fn allocate(cfg: &RunConfig, pipeline: &Pipeline, sizes: &[usize], tol: f64, opts: &EstimatorOptions) -> Result<(Vec<usize>, Value), CliError> {
    let pilot_opts = EstimatorOptions { stream_offset: PILOT_STREAM_OFFSET, ..opts.clone() };
    let mut v = Vec::new();
    let mut w = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        let level = i + 1;
        let stats = run_level(pipeline, level, n, cfg.levels.pilot_samples, level > 1 && cfg.mode == Mode::Mlmc, &pilot_opts)?;
        // A vanishing pilot variance still needs one sample on the level.
        v.push(stats.mean_level_variance.max(f64::MIN_POSITIVE));
        w.push(stats.seconds_per_sample().max(f64::MIN_POSITIVE));
    }
    let theta = cfg.levels.theta.unwrap_or(0.5);
    let m = optimal_samples(&v, &w, tol, theta, cfg.levels.c_alpha)?;
    let record = json!({ "tol": tol, "theta": theta, "c_alpha": cfg.levels.c_alpha, "pilot_variance": v, "pilot_work_s": w, "samples": m });
    Ok((m, record))
}

fn compare(cfg: &RunConfig, pipeline: &Pipeline, est: &MlmcEstimate, samples: usize, opts: &EstimatorOptions, window: &std::ops::Range<usize>) -> Result<Value, CliError> {
    let finest = est.levels.last().expect("nonempty plan");
    let slmc_opts = EstimatorOptions { stream_offset: SLMC_STREAM_OFFSET, ..opts.clone() };
    let slmc = run_level(pipeline, finest.level, finest.n, samples, false, &slmc_opts)?;
    let cmp = slmc_comparison(est, &slmc, window)?;
    let grid = pipeline.grid();
    let mut out = create(&cfg.out, "slmc.csv")?;
    writeln!(out, "energy_eV,mlmc_variance,slmc_variance,rescaled_slmc_variance")?;
    for m in 0..grid.points {
        writeln!(out, "{},{},{},{}", grid.energy(m), cmp.mlmc_variance[m], cmp.slmc_variance[m], cmp.rescaled_slmc_variance[m])?;
    }
    out.flush()?;
    Ok(json!({
        "n": slmc.n,
        "slmc_samples": samples,
        "matching_samples": cmp.matching_samples,
        "mlmc_seconds": cmp.mlmc_seconds,
        "slmc_seconds_estimate": cmp.slmc_seconds_estimate,
        "work_ratio": cmp.work_ratio,
    }))
}

fn bands(cfg: &RunConfig, model: honeycomb_mlmc::tbmodel::TbModel, start: Instant) -> Result<Value, CliError> {
    let n = cfg.bands.n;
    let sc = honeycomb_mlmc::lattice::build_supercell(model.lattice(), n)?;
    let grid = make_bz_grid(model.lattice(), n, cfg.bands.q, cfg.sampling.bz_mode)?;
    let bands = solve_bands(&model, &sc, &DefectConfiguration::empty(&sc), &grid)?;
    let mut out = create(&cfg.out, "bands.csv")?;
    bands.write_csv(&mut out)?;
    out.flush()?;
    let summary = json!({
        "mode": cfg.mode,
        "master_seed": cfg.seed,
        "model": model.name(),
        "kpoints": grid.len(),
        "bands": bands.band_count(),
        "eigensolves": bands.eigensolves,
        "energy_range": bands.energy_range(),
        "total_time_s": start.elapsed().as_secs_f64(),
        "config": cfg,
    });
    write_json(&cfg.out, "summary.json", &summary)?;
    Ok(summary)
}
