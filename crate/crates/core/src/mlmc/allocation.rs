use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confidence constant for a 95% two-sided normal interval.
pub const DEFAULT_C_ALPHA: f64 = 1.96;

/// `M_l = ceil((C_alpha / (theta tol))^2 sqrt(V_l / W_l) sum_k sqrt(W_k V_k))`,
/// at least 1 per level.
pub fn optimal_samples(v: &[f64], w: &[f64], tol: f64, theta: f64, c_alpha: f64) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("no levels to allocate".into()));
    }
    if v.len() != w.len() {
        return Err(Error::InvalidArgument(format!("{} variances but {} work values", v.len(), w.len())));
    }
    if v.iter().chain(w).any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument("variances and work must be positive".into()));
    }
    if [tol, theta, c_alpha].iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument("tol, theta and C_alpha must be positive".into()));
    }
    let scale = (c_alpha / (theta * tol)).powi(2);
    let total: f64 = v.iter().zip(w).map(|(v, w)| (v * w).sqrt()).sum();
    Ok(v.iter()
        .zip(w)
        .map(|(v, w)| {
            let m = (scale * (v / w).sqrt() * total).ceil();
            if m < 1.0 {
                1
            } else {
                m as usize
            }
        })
        .collect())
}

/// Share of the tolerance given to the statistical error,
/// `1 / (1 + (C - S) / W)`.
pub fn splitting_theta(w: f64, s: f64, c: f64) -> Result<f64> {
    if c <= s {
        return Err(Error::NoMonteCarloBenefit { c, s });
    }
    if !(w > 0.0) {
        return Err(Error::InvalidArgument(format!("bias rate W = {w} must be positive")));
    }
    Ok(1.0 / (1.0 + (c - s) / w))
}

/// Exponents `a` in work ~ tol^-a.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complexity {
    /// Fixed sample count, growing supercell: `2C / S`.
    pub fixed_samples: f64,
    /// Single-level Monte Carlo: `2 + (C - S) / W`.
    pub slmc: f64,
    /// Multilevel Monte Carlo: `2 + (C - D) / W`.
    pub mlmc: f64,
    /// False when `S >= 2W`, outside the regime the sampling formulas assume.
    pub sampling_regime: bool,
}

pub fn complexity_exponents(w: f64, s: f64, d: f64, c: f64) -> Result<Complexity> {
    if [w, s, d, c].iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument("rates must be positive".into()));
    }
    Ok(Complexity {
        fixed_samples: 2.0 * c / s,
        // One division keeps rational inputs exact where possible.
        slmc: (2.0 * w + c - s) / w,
        mlmc: (2.0 * w + c - d) / w,
        sampling_regime: s < 2.0 * w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_allocation() {
        assert_eq!(optimal_samples(&[1.0], &[1.0], 1.0, 1.0, 1.0).unwrap(), vec![1]);
        assert_eq!(optimal_samples(&[4.0, 1.0], &[1.0, 4.0], 1.0, 1.0, 1.0).unwrap(), vec![8, 2]);
        assert_eq!(optimal_samples(&[1e-9], &[1.0], 1.0, 1.0, 1.0).unwrap(), vec![1]);
        assert!(optimal_samples(&[], &[], 1.0, 1.0, 1.0).is_err());
        assert!(optimal_samples(&[1.0], &[0.0], 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn theta_values() {
        assert!((splitting_theta(1.5, 2.0, 4.0).unwrap() - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(splitting_theta(1.0, 0.0, 1.0).unwrap(), 0.5);
        let err = splitting_theta(1.0, 1.0, 1.0).unwrap_err();
        assert!(err.to_string().contains("no asymptotic benefit"));
    }

    #[test]
    fn exponents() {
        let c = complexity_exponents(1.5, 2.0, 3.0, 4.0).unwrap();
        assert_eq!(c.fixed_samples, 4.0);
        assert!((c.slmc - 10.0 / 3.0).abs() < 1e-15);
        assert!((c.mlmc - 8.0 / 3.0).abs() < 1e-15);
        assert!(c.sampling_regime);
        let degenerate = complexity_exponents(1.0, 1.5, 1.5, 4.0).unwrap();
        assert_eq!(degenerate.slmc, degenerate.mlmc);
        assert!(!complexity_exponents(1.0, 2.0, 3.0, 4.0).unwrap().sampling_regime);
    }
}
