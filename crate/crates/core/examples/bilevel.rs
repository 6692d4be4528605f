//! Two-level estimator on graphene against a single-level run at the finer
//! size. Usage: `bilevel [nq] [p_vac]`.

use honeycomb_mlmc::mlmc::{mc_estimate, mlmc_estimate, window_mean, EstimatorOptions, LevelPlan, LevelSpec, Pipeline, PipelineConfig, SLMC_STREAM_OFFSET};
use honeycomb_mlmc::tbmodel::GrapheneNNModel;

fn main() -> honeycomb_mlmc::Result<()> {
    let mut args = std::env::args().skip(1);
    let nq: usize = args.next().map_or(32, |s| s.parse().expect("nq"));
    let p_vac: f64 = args.next().map_or(0.0625, |s| s.parse().expect("p_vac"));
    let cfg = PipelineConfig { p_vac, nq, cache: false, ..Default::default() };
    let pipeline = Pipeline::new(GrapheneNNModel::default().build(), cfg)?;
    let opts = EstimatorOptions { master_seed: 7, window: Some((-6.0, 4.0)), ..Default::default() };
    let window = opts.window_range(pipeline.grid());

    let plan = LevelPlan::new(vec![LevelSpec { n: 8, samples: 42 }, LevelSpec { n: 16, samples: 21 }])?;
    let two = mlmc_estimate(&pipeline, &plan, &opts)?;
    let single = mc_estimate(&pipeline, 16, 42, &EstimatorOptions { stream_offset: SLMC_STREAM_OFFSET, ..opts.clone() })?;

    for l in &two.levels {
        println!("level {} n={} q={} M={} V={:.3e} t={:.2}s", l.level, l.n, l.q, l.nsamples, l.mean_level_variance, l.task_seconds);
    }
    let ratio = window_mean(&two.variance, &window) / window_mean(&single.variance, &window);
    println!("variance ratio {ratio:.3}");
    println!("cost ratio {:.3} ({:.2}s / {:.2}s)", two.task_seconds() / single.task_seconds(), two.task_seconds(), single.task_seconds());
    Ok(())
}
