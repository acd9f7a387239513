//! Excursion set estimation: coverage, Vorob'ev quantiles and expectation,
//! expected volume and detection scores.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv};

/// Pointwise probability of exceeding the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageField {
    pub p: Vec<f64>,
    pub threshold: f64,
    pub cell_volume: f64,
}

/// A set of grid cells together with the level it was cut at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionEstimate {
    pub mask: Vec<bool>,
    pub alpha: f64,
    pub volume: f64,
}

impl ExcursionEstimate {
    fn from_mask(mask: Vec<bool>, alpha: f64, cell_volume: f64) -> Self {
        let volume = mask.iter().filter(|b| **b).count() as f64 * cell_volume;
        ExcursionEstimate {
            mask,
            alpha,
            volume,
        }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|b| **b).count()
    }
}

/// `P(Z_i >= T)` under Gaussian marginals. Slightly negative variances from
/// round-off, down to `-1e-8 * prior_var`, are treated as zero.
pub fn coverage(
    mean: &DVector<f64>,
    var: &DVector<f64>,
    threshold: f64,
    prior_var: f64,
    cell_volume: f64,
) -> Result<CoverageField> {
    if mean.len() != var.len() {
        return Err(Error::invalid("mean and variance lengths differ"));
    }
    let tol = 1e-8 * prior_var;
    let p = mean
        .iter()
        .zip(var.iter())
        .enumerate()
        .map(|(i, (&mu, &v))| {
            if v < -tol || v.is_nan() {
                return Err(Error::InvalidVariance { index: i, value: v });
            }
            if v <= 0.0 {
                return Ok(if mu >= threshold { 1.0 } else { 0.0 });
            }
            Ok(normal_sf((threshold - mu) / v.sqrt()))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CoverageField {
        p,
        threshold,
        cell_volume,
    })
}

/// Upper tail `1 - Phi(z)` of the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

impl CoverageField {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Robbins: `E[vol] = integral of the coverage`.
    pub fn expected_volume(&self) -> f64 {
        self.cell_volume * self.p.iter().sum::<f64>()
    }

    /// Closed super-level set `{p >= alpha}`.
    pub fn quantile(&self, alpha: f64) -> Result<ExcursionEstimate> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        Ok(self.cut(alpha))
    }

    fn cut(&self, alpha: f64) -> ExcursionEstimate {
        let mask = self.p.iter().map(|p| *p >= alpha).collect();
        ExcursionEstimate::from_mask(mask, alpha, self.cell_volume)
    }

    /// Quantile whose volume first reaches the expected volume when the
    /// level is lowered through the attained coverage values.
    pub fn vorobev_expectation(&self) -> ExcursionEstimate {
        let target = self.expected_volume();
        let mut levels: Vec<f64> = self.p.iter().copied().filter(|p| *p > 0.0).collect();
        levels.push(1.0);
        levels.sort_by(|a, b| b.total_cmp(a));
        levels.dedup();
        // count of cells at or above each level, scanned downwards
        let mut sorted: Vec<f64> = self.p.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut above = 0usize;
        for &alpha in &levels {
            while above < sorted.len() && sorted[above] >= alpha {
                above += 1;
            }
            if above as f64 * self.cell_volume >= target && above > 0 {
                return self.cut(alpha);
            }
        }
        ExcursionEstimate::from_mask(vec![false; self.p.len()], 1.0, self.cell_volume)
    }

    /// Distinct coverage levels in `(0, 1]`, ascending.
    pub fn attained_levels(&self) -> Vec<f64> {
        let mut levels: Vec<f64> = self.p.iter().copied().filter(|p| *p > 0.0).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        levels
    }

    /// `index,coverage` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .p
            .iter()
            .enumerate()
            .map(|(i, p)| vec![i.to_string(), fmt_f64(*p)])
            .collect();
        write_csv(path, &["index", "coverage"], &rows)
    }
}

/// `{mean >= T}`.
pub fn plugin_estimate(mean: &DVector<f64>, threshold: f64, cell_volume: f64) -> ExcursionEstimate {
    let mask = mean.iter().map(|m| *m >= threshold).collect();
    ExcursionEstimate::from_mask(mask, f64::NAN, cell_volume)
}

impl ExcursionEstimate {
    /// `index,member` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .mask
            .iter()
            .enumerate()
            .map(|(i, b)| vec![i.to_string(), u8::from(*b).to_string()])
            .collect();
        write_csv(path, &["index", "member"], &rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Fraction of the true set that is detected.
    pub tp: f64,
    /// Fraction of the true complement wrongly included.
    pub fp: f64,
}

/// True and false positive fractions, the latter relative to the volume of
/// the complement of the truth. An empty truth scores `tp = 1` only for an
/// empty estimate; an empty complement scores `fp = 0`.
pub fn detection_metrics(estimate: &[bool], truth: &[bool]) -> Result<Detection> {
    if estimate.len() != truth.len() {
        return Err(Error::invalid("estimate and truth masks differ in length"));
    }
    let (mut hit, mut false_pos, mut n_true) = (0usize, 0usize, 0usize);
    for (&e, &t) in estimate.iter().zip(truth) {
        n_true += usize::from(t);
        hit += usize::from(e && t);
        false_pos += usize::from(e && !t);
    }
    let n_false = truth.len() - n_true;
    let tp = if n_true == 0 {
        if estimate.iter().any(|e| *e) {
            0.0
        } else {
            1.0
        }
    } else {
        hit as f64 / n_true as f64
    };
    let fp = if n_false == 0 {
        0.0
    } else {
        false_pos as f64 / n_false as f64
    };
    Ok(Detection { tp, fp })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(p: Vec<f64>, cell_volume: f64) -> CoverageField {
        CoverageField {
            p,
            threshold: 0.0,
            cell_volume,
        }
    }

    #[test]
    fn coverage_closed_forms() {
        let mean = DVector::from_vec(vec![1.0, 2.0, 0.5, 1.0]);
        let var = DVector::from_vec(vec![4.0, 0.0, 0.0, -1e-10]);
        let c = coverage(&mean, &var, 1.0, 1.0, 1.0).unwrap();
        assert!((c.p[0] - 0.5).abs() < 1e-15);
        assert_eq!(c.p[1..], [1.0, 0.0, 1.0]);
        let bad = DVector::from_vec(vec![0.0, 0.0, 0.0, -1e-3]);
        assert!(matches!(
            coverage(&mean, &bad, 1.0, 1.0, 1.0),
            Err(Error::InvalidVariance { index: 3, .. })
        ));
        // one standard deviation above the threshold
        let c = coverage(&DVector::from_vec(vec![3.0]), &DVector::from_vec(vec![4.0]), 1.0, 1.0, 1.0).unwrap();
        assert!((c.p[0] - 0.841_344_746_068_542_9).abs() < 1e-12, "{}", c.p[0]);
    }

    #[test]
    fn coverage_decreases_with_threshold() {
        let mean = DVector::from_vec(vec![-1.0, 0.3, 2.0]);
        let var = DVector::from_vec(vec![0.5, 1.0, 0.0]);
        let lo = coverage(&mean, &var, 0.0, 1.0, 1.0).unwrap();
        let hi = coverage(&mean, &var, 0.5, 1.0, 1.0).unwrap();
        assert!(lo.p.iter().zip(&hi.p).all(|(a, b)| a >= b));
    }

    #[test]
    fn quantiles_are_closed_and_nested() {
        let c = field(vec![0.2, 0.7, 0.7, 1.0, 0.0], 2.0);
        assert_eq!(c.quantile(0.7).unwrap().count(), 3);
        assert_eq!(c.quantile(0.2).unwrap().count(), 4);
        assert_eq!(c.quantile(1.0).unwrap().volume, 2.0);
        assert!(c.quantile(0.0).is_err());
        let a = c.quantile(0.3).unwrap();
        let b = c.quantile(0.8).unwrap();
        assert!(b.mask.iter().zip(&a.mask).all(|(x, y)| !x || *y));
        let c = field(vec![0.4, 0.6], 1.0);
        assert_eq!(c.quantile(0.6000001).unwrap().count(), 0);
    }

    #[test]
    fn expected_volume_closed_forms() {
        assert_eq!(field(vec![0.5; 8], 3.0).expected_volume(), 12.0);
        assert_eq!(field(vec![1.0; 8], 3.0).expected_volume(), 24.0);
    }

    #[test]
    fn two_cell_vorobev() {
        let c = field(vec![0.9, 0.1], 1.0);
        assert!((c.expected_volume() - 1.0).abs() < 1e-15);
        let v = c.vorobev_expectation();
        assert_eq!(v.alpha, 0.9);
        assert_eq!(v.mask, vec![true, false]);
    }

    #[test]
    fn constant_and_zero_coverage() {
        let v = field(vec![0.3; 5], 1.0).vorobev_expectation();
        assert_eq!(v.alpha, 0.3);
        assert_eq!(v.count(), 5);
        let v = field(vec![0.0; 5], 1.0).vorobev_expectation();
        assert_eq!(v.alpha, 1.0);
        assert_eq!(v.count(), 0);
    }

    #[test]
    fn plugin_and_degenerate_posterior() {
        let mean = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        assert_eq!(plugin_estimate(&mean, 1.0, 1.0).count(), 2);
        assert_eq!(plugin_estimate(&DVector::from_element(3, -1.0), 1.0, 1.0).count(), 0);
        let c = coverage(&mean, &DVector::zeros(3), 1.0, 1.0, 1.0).unwrap();
        assert_eq!(c.vorobev_expectation().mask, plugin_estimate(&mean, 1.0, 1.0).mask);
    }

    #[test]
    fn detection_closed_forms() {
        let truth = [true, false, true, false];
        let d = |e: &[bool]| detection_metrics(e, &truth).unwrap();
        assert_eq!(d(&truth), Detection { tp: 1.0, fp: 0.0 });
        assert_eq!(d(&[false; 4]), Detection { tp: 0.0, fp: 0.0 });
        assert_eq!(d(&[true; 4]), Detection { tp: 1.0, fp: 1.0 });
        assert_eq!(detection_metrics(&[false; 2], &[false; 2]).unwrap().tp, 1.0);
        assert_eq!(detection_metrics(&[true, false], &[false; 2]).unwrap().tp, 0.0);
        assert_eq!(detection_metrics(&[true; 2], &[true; 2]).unwrap().fp, 0.0);
    }
}
