//! McNemar's test and the one-sided paired t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::{Error, Result};

/// Below this many discordant pairs McNemar uses the exact binomial test.
pub const EXACT_LIMIT: u64 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// A succeeded, B failed.
    pub b: u64,
    /// A failed, B succeeded.
    pub c: u64,
    /// Continuity-corrected chi-square statistic, or `min(b, c)` in exact mode.
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
    /// No discordant pairs.
    pub degenerate: bool,
}

pub fn mcnemar(pairs: &[(bool, bool)]) -> Result<McNemar> {
    if pairs.is_empty() {
        return Err(Error::contract("McNemar's test needs at least one pair"));
    }
    let b = pairs.iter().filter(|p| p.0 && !p.1).count() as u64;
    let c = pairs.iter().filter(|p| !p.0 && p.1).count() as u64;
    Ok(mcnemar_counts(b, c))
}

/// McNemar's test from the discordant counts.
pub fn mcnemar_counts(b: u64, c: u64) -> McNemar {
    let n = b + c;
    if n == 0 {
        return McNemar {
            b,
            c,
            statistic: 0.0,
            p_value: 1.0,
            exact: true,
            degenerate: true,
        };
    }
    if n < EXACT_LIMIT {
        let tail = Binomial::new(0.5, n).expect("valid binomial").cdf(b.min(c));
        McNemar {
            b,
            c,
            statistic: b.min(c) as f64,
            p_value: (2.0 * tail).min(1.0),
            exact: true,
            degenerate: false,
        }
    } else {
        let diff = (b as f64 - c as f64).abs() - 1.0;
        let stat = diff * diff / n as f64;
        let p = ChiSquared::new(1.0).expect("valid chi-square").sf(stat);
        McNemar {
            b,
            c,
            statistic: stat,
            p_value: p,
            exact: false,
            degenerate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedT {
    pub n: usize,
    pub mean_diff: f64,
    pub statistic: f64,
    /// One-sided p for the alternative `mean(a) < mean(b)`.
    pub p_value: f64,
    /// The differences have zero variance; `p_value` is 0 when they are all
    /// negative and 1 otherwise.
    pub degenerate: bool,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedT> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::contract("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        let (statistic, p) = if mean < 0.0 {
            (f64::NEG_INFINITY, 0.0)
        } else if mean > 0.0 {
            (f64::INFINITY, 1.0)
        } else {
            (f64::NAN, 1.0)
        };
        return Ok(PairedT {
            n,
            mean_diff: mean,
            statistic,
            p_value: p,
            degenerate: true,
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid t");
    Ok(PairedT {
        n,
        mean_diff: mean,
        statistic: t,
        p_value: dist.cdf(t),
        degenerate: false,
    })
}

/// Root-mean-square error and Pearson correlation of `(estimate, truth)` pairs.
pub fn rmse_and_correlation(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pairs.len() < 2 {
        return Err(Error::Numeric(format!(
            "correlation undefined for {} point(s)",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let rmse = (pairs.iter().map(|(e, t)| (e - t) * (e - t)).sum::<f64>() / n).sqrt();
    let me = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mt = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (e, t) in pairs {
        sxy += (e - me) * (t - mt);
        sxx += (e - me) * (e - me);
        syy += (t - mt) * (t - mt);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numeric("correlation undefined for constant values".into()));
    }
    Ok((rmse, sxy / (sxx * syy).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_example() {
        let r = mcnemar_counts(5, 1);
        assert!(r.exact);
        // 2 * (1 + 6) / 64
        assert!((r.p_value - 0.21875).abs() < 1e-12);
    }

    #[test]
    fn symmetric_counts_give_one() {
        for b in [1, 3, 12] {
            assert_eq!(mcnemar_counts(b, b).p_value, 1.0);
        }
    }

    #[test]
    fn chi_square_example() {
        let r = mcnemar_counts(40, 10);
        assert!(!r.exact);
        assert!((r.statistic - 16.82).abs() < 1e-12);
        assert!((r.p_value - 4.11e-5).abs() < 1e-6, "{}", r.p_value);
    }

    #[test]
    fn no_discordance_is_degenerate() {
        let r = mcnemar(&[(true, true), (false, false)]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        assert!(mcnemar(&[]).is_err());
    }

    #[test]
    fn pairs_are_counted() {
        let pairs = [(true, false); 5]
            .into_iter()
            .chain([(false, true)])
            .chain([(true, true); 4])
            .collect::<Vec<_>>();
        let r = mcnemar(&pairs).unwrap();
        assert_eq!((r.b, r.c), (5, 1));
    }

    #[test]
    fn t_example() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[2.0, 3.0, 5.0]).unwrap();
        assert!((r.mean_diff + 4.0 / 3.0).abs() < 1e-15);
        // sd = 1/sqrt(3), so t = (-4/3) / (1/3) = -4
        assert!((r.statistic + 4.0).abs() < 1e-12);
        assert!(r.p_value < 0.05 && r.p_value > 0.0);
    }

    #[test]
    fn t_degenerate_cases() {
        let r = paired_t_test(&[0.0; 4], &[1.0; 4]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 0.0);
        let same = paired_t_test(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert!(same.degenerate);
        assert_eq!(same.p_value, 1.0);
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn correlation_extremes() {
        let same = [(1.0, 1.0), (2.0, 2.0), (4.0, 4.0)];
        assert_eq!(rmse_and_correlation(&same).unwrap(), (0.0, 1.0));
        let anti = [(1.0, -1.0), (2.0, -2.0), (3.0, -3.0)];
        assert!((rmse_and_correlation(&anti).unwrap().1 + 1.0).abs() < 1e-15);
        assert!(rmse_and_correlation(&[(1.0, 1.0)]).is_err());
        assert!(rmse_and_correlation(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
    }
}
