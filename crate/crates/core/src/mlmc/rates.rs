use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{run_level, window_mean, EstimatorOptions, LevelStats, MlmcEstimate, Pipeline};
use crate::error::{Error, Result};

/// Least-squares line through `(log n, log y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; needs at least three points.
    pub stderr: Option<f64>,
}

pub fn fit_power_law(sizes: &[f64], values: &[f64]) -> Result<PowerFit> {
    if sizes.len() != values.len() {
        return Err(Error::InvalidArgument("sizes and observations differ in length".into()));
    }
    if sizes.len() < 2 {
        return Err(Error::InvalidArgument("a rate needs observations at two or more sizes".into()));
    }
    if sizes.iter().chain(values).any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument("rate fits need positive observations".into()));
    }
    let xs: Vec<f64> = sizes.iter().map(|x| x.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|y| y.ln()).collect();
    let m = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("rate fits need distinct sizes".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let stderr = (xs.len() > 2).then(|| {
        let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (rss / (m - 2.0) / sxx).sqrt()
    });
    Ok(PowerFit { slope, intercept, stderr })
}

/// Window-averaged observations per supercell size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateObservations {
    pub sizes: Vec<f64>,
    /// `|mean Q_l - mean Q_{l+1}|`, one fewer entry than `sizes`.
    pub bias_proxy: Vec<f64>,
    pub quantity_variance: Vec<f64>,
    pub difference_variance: Option<Vec<f64>>,
    /// Seconds per sample for `Q` alone.
    pub cost: Vec<f64>,
}

/// Decay rates W, S, D and growth rate C with their fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimates {
    pub w: Option<f64>,
    pub s: f64,
    pub d: Option<f64>,
    pub c: f64,
    pub w_fit: Option<PowerFit>,
    pub s_fit: PowerFit,
    pub d_fit: Option<PowerFit>,
    pub c_fit: PowerFit,
    /// D > S.
    pub mlmc_benefit: Option<bool>,
    /// C > S.
    pub mc_benefit: bool,
}

pub fn fit_rates(obs: &RateObservations) -> Result<RateEstimates> {
    let s_fit = fit_power_law(&obs.sizes, &obs.quantity_variance)?;
    let c_fit = fit_power_law(&obs.sizes, &obs.cost)?;
    let d_fit = obs.difference_variance.as_ref().map(|d| fit_power_law(&obs.sizes, d)).transpose()?;
    let w_fit = if obs.bias_proxy.len() >= 2 {
        Some(fit_power_law(&obs.sizes[..obs.bias_proxy.len()], &obs.bias_proxy)?)
    } else {
        None
    };
    let s = -s_fit.slope;
    let d = d_fit.map(|f| -f.slope);
    Ok(RateEstimates {
        w: w_fit.map(|f| -f.slope),
        s,
        d,
        c: c_fit.slope,
        w_fit,
        s_fit,
        d_fit,
        c_fit,
        mlmc_benefit: d.map(|d| d > s),
        mc_benefit: c_fit.slope > s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub levels: Vec<LevelStats>,
    pub observations: RateObservations,
    pub rates: RateEstimates,
}

/// Samples `Q` (and `Q - Q_cv` for even sizes) at each size and fits rates.
pub fn rate_study(pipeline: &Pipeline, sizes: &[usize], samples: usize, opts: &EstimatorOptions) -> Result<RateStudy> {
    if samples < 2 {
        return Err(Error::InvalidArgument("rate estimation needs at least two samples per size".into()));
    }
    let with_cv = sizes.iter().all(|n| n % 2 == 0);
    let mut levels = Vec::with_capacity(sizes.len());
    for (i, &n) in sizes.iter().enumerate() {
        // Level 1 stats report Q itself as the level term.
        let stats = run_level(pipeline, i + 1, n, samples, with_cv, opts)
            .map_err(|e| Error::LevelFailed { level: i + 1, completed_levels: i, source: Box::new(e) })?;
        levels.push(stats);
    }
    let window = opts.window_range(pipeline.grid());
    let observations = observations_from_levels(&levels, &window);
    let rates = fit_rates(&observations)?;
    Ok(RateStudy { levels, observations, rates })
}

/// Rate observations from per-level statistics, in level order.
pub fn observations_from_levels(levels: &[LevelStats], window: &Range<usize>) -> RateObservations {
    let bias_proxy = levels
        .windows(2)
        .map(|p| {
            let diff: Vec<f64> = p[0].quantity.mean.iter().zip(&p[1].quantity.mean).map(|(a, b)| (a - b).abs()).collect();
            window_mean(&diff, window)
        })
        .collect();
    RateObservations {
        sizes: levels.iter().map(|l| l.n as f64).collect(),
        bias_proxy,
        quantity_variance: levels.iter().map(|l| l.mean_quantity_variance).collect(),
        difference_variance: levels.iter().map(|l| l.mean_difference_variance).collect(),
        cost: levels.iter().map(|l| l.q_seconds_per_sample).collect(),
    }
}

/// Multilevel result against a single-level run at the finest size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlmcComparison {
    pub mlmc_variance: Vec<f64>,
    /// Estimator variance of the single-level run as performed.
    pub slmc_variance: Vec<f64>,
    /// Single-level estimator variance with the sample count rescaled to
    /// match the multilevel variance over the window.
    pub rescaled_slmc_variance: Vec<f64>,
    pub matching_samples: f64,
    pub mlmc_seconds: f64,
    pub slmc_seconds_estimate: f64,
    /// Multilevel time over estimated single-level time.
    pub work_ratio: f64,
}

pub fn slmc_comparison(mlmc: &MlmcEstimate, slmc: &LevelStats, window: &Range<usize>) -> Result<SlmcComparison> {
    if slmc.nsamples < 2 {
        return Err(Error::InvalidArgument("single-level comparison needs at least two samples".into()));
    }
    let per_sample = &slmc.quantity.variance;
    let matching_samples = window_mean(per_sample, window) / window_mean(&mlmc.variance, window);
    let mlmc_seconds = mlmc.task_seconds();
    let slmc_seconds_estimate = matching_samples * slmc.seconds_per_sample();
    Ok(SlmcComparison {
        mlmc_variance: mlmc.variance.clone(),
        slmc_variance: per_sample.iter().map(|v| v / slmc.nsamples as f64).collect(),
        rescaled_slmc_variance: per_sample.iter().map(|v| v / matching_samples).collect(),
        matching_samples,
        mlmc_seconds,
        slmc_seconds_estimate,
        work_ratio: mlmc_seconds / slmc_seconds_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let n = [4.0, 8.0, 16.0, 32.0];
        let y: Vec<f64> = n.iter().map(|x: &f64| 3.0 * x.powi(-2)).collect();
        let f = fit_power_law(&n, &y).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(f.stderr.unwrap() < 1e-12);
        let two = fit_power_law(&n[..2], &y[..2]).unwrap();
        assert!(two.stderr.is_none());
        assert!(fit_power_law(&n, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(fit_power_law(&n[..1], &y[..1]).is_err());
    }

    #[test]
    fn rates_from_observations() {
        let sizes = vec![4.0, 8.0, 16.0];
        let obs = RateObservations {
            bias_proxy: vec![4f64.powf(-1.5), 8f64.powf(-1.5)],
            quantity_variance: sizes.iter().map(|n: &f64| n.powi(-2)).collect(),
            difference_variance: Some(sizes.iter().map(|n: &f64| n.powi(-3)).collect()),
            cost: sizes.iter().map(|n: &f64| n.powi(4)).collect(),
            sizes,
        };
        let r = fit_rates(&obs).unwrap();
        assert!((r.w.unwrap() - 1.5).abs() < 1e-12);
        assert!((r.s - 2.0).abs() < 1e-12);
        assert!((r.d.unwrap() - 3.0).abs() < 1e-12);
        assert!((r.c - 4.0).abs() < 1e-12);
        assert_eq!(r.mlmc_benefit, Some(true));
        assert!(r.mc_benefit);
    }
}
