//! Significance tests for comparing repeated runs.

use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with the `n − 1` divisor.
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        0.0
    } else {
        sample_variance(x).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-tailed.
    pub p: f64,
    pub significant: bool,
}

/// Welch's unequal-variance two-tailed t-test.
pub fn welch_ttest(a: &[f64], b: &[f64], alpha: f64) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Degenerate(format!(
            "t-test needs two samples of at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (va, vb) = (sample_variance(a) / a.len() as f64, sample_variance(b) / b.len() as f64);
    let se2 = va + vb;
    if se2 <= 0.0 {
        return Err(Error::Degenerate("both samples have zero variance".into()));
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Degenerate(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest {
        t,
        df,
        p,
        significant: p < alpha,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anova {
    pub f: f64,
    pub df_between: f64,
    pub df_within: f64,
    pub p: f64,
}

/// One-way analysis of variance across `groups`.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<Anova> {
    if groups.len() < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(Error::Degenerate("ANOVA needs at least 2 groups of at least 2 values".into()));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let ss_between: f64 = groups.iter().map(|g| g.len() as f64 * (mean(g) - grand).powi(2)).sum();
    let ss_within: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        })
        .sum();
    let df_between = (groups.len() - 1) as f64;
    let df_within = (n - groups.len()) as f64;
    if ss_within <= 0.0 {
        if ss_between <= 0.0 {
            return Err(Error::Degenerate("every value is identical".into()));
        }
        return Ok(Anova {
            f: f64::INFINITY,
            df_between,
            df_within,
            p: 0.0,
        });
    }
    let f = (ss_between / df_between) / (ss_within / df_within);
    let dist = FisherSnedecor::new(df_between, df_within).map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(Anova {
        f,
        df_between,
        df_within,
        p: dist.sf(f),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_samples() {
        let a = [0.54, 0.55, 0.53, 0.56, 0.54];
        let r = welch_ttest(&a, &a, 0.05).unwrap();
        assert_eq!(r.t, 0.0);
        assert_abs_diff_eq!(r.p, 1.0, epsilon = 1e-12);
        assert!(!r.significant);
    }

    #[test]
    fn separated_samples() {
        let a = [0.0; 5];
        let b = [1.0, 1.0 + 1e-6, 1.0 - 1e-6, 1.0 + 2e-6, 1.0];
        let r = welch_ttest(&a, &b, 0.05).unwrap();
        assert!(r.significant && r.p < 1e-10);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(welch_ttest(&[1.0], &[1.0, 2.0], 0.05).is_err());
        assert!(welch_ttest(&[1.0, 1.0], &[2.0, 2.0], 0.05).is_err());
        assert!(anova_oneway(&[vec![1.0, 2.0]]).is_err());
        assert!(anova_oneway(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    // Reference values computed with scipy.stats.ttest_ind(a, b, equal_var=False)
    // and scipy.stats.f_oneway.
    #[test]
    fn textbook_welch() {
        let a = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4];
        let b = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4];
        let r = welch_ttest(&a, &b, 0.05).unwrap();
        assert_abs_diff_eq!(r.t, -2.455356398286006, epsilon = 1e-9);
        assert_abs_diff_eq!(r.df, 24.988529290231416, epsilon = 1e-9);
        assert_abs_diff_eq!(r.p, 0.021378001462866985, epsilon = 1e-9);
        assert!(r.significant);
    }

    #[test]
    fn textbook_anova() {
        let groups = vec![
            vec![6.0, 8.0, 4.0, 5.0, 3.0, 4.0],
            vec![8.0, 12.0, 9.0, 11.0, 6.0, 8.0],
            vec![13.0, 9.0, 11.0, 8.0, 7.0, 12.0],
        ];
        let r = anova_oneway(&groups).unwrap();
        assert_abs_diff_eq!(r.f, 9.264705882352942, epsilon = 1e-9);
        assert_abs_diff_eq!(r.p, 0.002398777329392, epsilon = 1e-9);
        assert_eq!((r.df_between, r.df_within), (2.0, 15.0));
    }

    #[test]
    fn identical_groups_give_zero_f() {
        let g = vec![1.0, 2.0, 4.0];
        let r = anova_oneway(&[g.clone(), g.clone(), g]).unwrap();
        assert_eq!(r.f, 0.0);
        assert_abs_diff_eq!(r.p, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_group_anova_is_pooled_t_squared() {
        let a = vec![3.1, 2.7, 3.9, 4.4, 3.3];
        let b = vec![4.0, 5.2, 4.8, 3.9, 5.5];
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let pooled = ((na - 1.0) * sample_variance(&a) + (nb - 1.0) * sample_variance(&b)) / (na + nb - 2.0);
        let t = (mean(&a) - mean(&b)) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
        let r = anova_oneway(&[a, b]).unwrap();
        assert_abs_diff_eq!(r.f, t * t, epsilon = 1e-12);
    }

    #[test]
    fn three_groups_brute_force_sums_of_squares() {
        let groups = vec![vec![1.0, 2.0, 3.0], vec![2.0, 4.0], vec![7.0, 5.0, 6.0, 6.5]];
        // Grand mean 36.5 / 9; group means 2, 3, 6.125.
        let all: Vec<f64> = groups.iter().flatten().copied().collect();
        let grand = all.iter().sum::<f64>() / 9.0;
        let ssb = 3.0 * (2.0 - grand).powi(2) + 2.0 * (3.0 - grand).powi(2) + 4.0 * (6.125 - grand).powi(2);
        let ssw = 2.0 + 2.0 + (0.875f64.powi(2) + 1.125f64.powi(2) + 0.125f64.powi(2) + 0.375f64.powi(2));
        let f = (ssb / 2.0) / (ssw / 6.0);
        assert_abs_diff_eq!(anova_oneway(&groups).unwrap().f, f, epsilon = 1e-12);
    }
}
