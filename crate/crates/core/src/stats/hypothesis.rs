use log::warn;
use serde::{Deserialize, Serialize};

use super::special::{f_upper_tail, student_t_two_tailed};
use super::StatsError;
use crate::scalar::{mean, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest<T> {
    pub t: T,
    pub p: T,
    pub df: T,
    /// Zero variance in both groups; `t`/`p` are set by convention.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anova<T> {
    pub f: T,
    pub p: T,
    pub df_between: T,
    pub df_within: T,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation<T> {
    pub r: T,
    pub p: T,
    pub n: usize,
}

fn sum_sq_dev<T: Scalar>(xs: &[T], m: T) -> T {
    xs.iter().map(|&x| (x - m) * (x - m)).sum()
}

fn check_len<T>(xs: &[T], group: usize) -> Result<(), StatsError> {
    if xs.len() < 2 {
        Err(StatsError::TooFewSamples { group, len: xs.len() })
    } else {
        Ok(())
    }
}

/// Unpaired two-sample Student t-test with pooled variance.
pub fn student_t_test<T: Scalar>(a: &[T], b: &[T]) -> Result<TTest<T>, StatsError> {
    check_len(a, 0)?;
    check_len(b, 1)?;
    let (na, nb) = (T::from_usize_lossy(a.len()), T::from_usize_lossy(b.len()));
    let (ma, mb) = (mean(a).unwrap(), mean(b).unwrap());
    let df = na + nb - T::lit(2.0);
    let pooled = (sum_sq_dev(a, ma) + sum_sq_dev(b, mb)) / df;
    let diff = ma - mb;
    if pooled <= T::zero() {
        return Ok(degenerate_t(diff, df));
    }
    let se = (pooled * (T::one() / na + T::one() / nb)).sqrt();
    let t = diff / se;
    Ok(TTest { t, p: student_t_two_tailed(t, df), df, degenerate: false })
}

/// Welch's unequal-variance t-test.
pub fn welch_t_test<T: Scalar>(a: &[T], b: &[T]) -> Result<TTest<T>, StatsError> {
    check_len(a, 0)?;
    check_len(b, 1)?;
    let (na, nb) = (T::from_usize_lossy(a.len()), T::from_usize_lossy(b.len()));
    let (ma, mb) = (mean(a).unwrap(), mean(b).unwrap());
    let one = T::one();
    let va = sum_sq_dev(a, ma) / (na - one) / na;
    let vb = sum_sq_dev(b, mb) / (nb - one) / nb;
    let diff = ma - mb;
    if va + vb <= T::zero() {
        return Ok(degenerate_t(diff, na + nb - T::lit(2.0)));
    }
    let t = diff / (va + vb).sqrt();
    let df = (va + vb) * (va + vb) / (va * va / (na - one) + vb * vb / (nb - one));
    Ok(TTest { t, p: student_t_two_tailed(t, df), df, degenerate: false })
}

fn degenerate_t<T: Scalar>(diff: T, df: T) -> TTest<T> {
    if diff == T::zero() {
        TTest { t: T::zero(), p: T::one(), df, degenerate: true }
    } else {
        warn!("t-test with zero pooled variance and distinct means; reporting p = 0");
        let t = if diff > T::zero() { T::infinity() } else { T::neg_infinity() };
        TTest { t, p: T::zero(), df, degenerate: true }
    }
}

/// One-way analysis of variance, `F = MSB / MSW`.
pub fn one_way_anova<T: Scalar, G: AsRef<[T]>>(groups: &[G]) -> Result<Anova<T>, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    for (i, g) in groups.iter().enumerate() {
        check_len(g.as_ref(), i)?;
    }
    let n_total: usize = groups.iter().map(|g| g.as_ref().len()).sum();
    let grand = {
        let mut s = T::zero();
        for g in groups {
            for &x in g.as_ref() {
                s += x;
            }
        }
        s / T::from_usize_lossy(n_total)
    };
    let mut ssb = T::zero();
    let mut ssw = T::zero();
    for g in groups {
        let g = g.as_ref();
        let m = mean(g).unwrap();
        ssb += T::from_usize_lossy(g.len()) * (m - grand) * (m - grand);
        ssw += sum_sq_dev(g, m);
    }
    let df_between = T::from_usize_lossy(groups.len() - 1);
    let df_within = T::from_usize_lossy(n_total - groups.len());
    let msb = ssb / df_between;
    let msw = ssw / df_within;
    if msw <= T::zero() {
        let spread = ssb > T::epsilon() * grand.abs().max(T::one());
        if spread {
            warn!("ANOVA with zero within-group variance and distinct means; reporting p = 0");
        }
        let (f, p) = if spread { (T::infinity(), T::zero()) } else { (T::zero(), T::one()) };
        return Ok(Anova { f, p, df_between, df_within, degenerate: true });
    }
    let f = msb / msw;
    Ok(Anova { f, p: f_upper_tail(f, df_between, df_within), df_between, df_within, degenerate: false })
}

/// Pearson correlation with the two-sided p-value from the t transform.
pub fn pearson_r<T: Scalar>(x: &[T], y: &[T]) -> Result<Correlation<T>, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewSamples { group: 0, len: x.len() });
    }
    let (mx, my) = (mean(x).unwrap(), mean(y).unwrap());
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    let mut syy = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return Err(StatsError::ConstantInput);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).max(-T::one()).min(T::one());
    let n = x.len();
    let df = T::from_usize_lossy(n - 2);
    let denom = T::one() - r * r;
    let p = if denom <= T::zero() {
        T::zero()
    } else {
        student_t_two_tailed(r * df.sqrt() / denom.sqrt(), df)
    };
    Ok(Correlation { r, p, n })
}

/// Benjamini–Hochberg adjusted p-values, in input order.
pub fn benjamini_hochberg<T: Scalar>(p: &[T]) -> Vec<T> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut adjusted = vec![T::zero(); m];
    let mut running = T::one();
    for rank in (0..m).rev() {
        let i = order[rank];
        let v = p[i] * T::from_usize_lossy(m) / T::from_usize_lossy(rank + 1);
        running = running.min(v);
        adjusted[i] = running.min(T::one());
    }
    adjusted
}

/// Linear-interpolation quantile (type 7) of an ascending slice.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: T) -> Option<T> {
    if sorted.is_empty() {
        return None;
    }
    let h = q * T::from_usize_lossy(sorted.len() - 1);
    let lo = h.floor().to_usize().unwrap_or(0).min(sorted.len() - 1);
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - T::from_usize_lossy(lo);
    Some(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_groups() {
        let r = student_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
    }

    #[test]
    fn shifted_groups() {
        let r = student_t_test(&[1.0_f64, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!((r.t + 1.224_744_871_391_589).abs() < 1e-12);
        assert!((r.p - 0.287_864_134_726_690_8).abs() < 1e-9);
        assert_eq!(r.df, 4.0);
        let r = student_t_test(&[10.0_f64, 11.0, 12.0, 13.0], &[20.0, 21.0, 22.0, 23.0]).unwrap();
        assert!((r.t + 10.954_451_150_103_322).abs() < 1e-9);
        assert!(r.p < 1e-4);
    }

    #[test]
    fn t_test_errors_and_degenerate_cases() {
        assert!(matches!(student_t_test(&[1.0], &[1.0, 2.0]), Err(StatsError::TooFewSamples { group: 0, len: 1 })));
        let r = student_t_test(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert!(r.degenerate && r.t == 0.0 && r.p == 1.0);
        let r = student_t_test(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert!(r.degenerate && r.p == 0.0 && r.t == f64::NEG_INFINITY);
    }

    #[test]
    fn welch_equals_student_for_equal_sizes_and_variances() {
        let a = [1.0_f64, 2.0, 3.0, 4.0];
        let b = [2.0, 3.0, 4.0, 5.0];
        let s = student_t_test(&a, &b).unwrap();
        let w = welch_t_test(&a, &b).unwrap();
        assert!((s.t - w.t).abs() < 1e-12);
        assert!((s.df - w.df).abs() < 1e-12);
    }

    #[test]
    fn anova_cases() {
        let g = [1.0_f64, 2.0, 3.0];
        let r = one_way_anova(&[g, g, g]).unwrap();
        assert_eq!((r.f, r.p), (0.0, 1.0));
        let r = one_way_anova(&[vec![1.0_f64, 2.0, 3.0], vec![2.0, 3.0, 4.0]]).unwrap();
        assert!((r.f - 1.5).abs() < 1e-12);
        assert!((r.p - 0.287_864_134_726_690_8).abs() < 1e-9);
        let r = one_way_anova(&[[1.0_f64, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert!((r.f - 16.0).abs() < 1e-12);
        assert!((r.p - 0.025_094_573_304_390_855).abs() < 1e-9);
        let r = one_way_anova(&[[1.0, 1.0], [2.0, 2.0]]).unwrap();
        assert!(r.degenerate && r.p == 0.0);
        assert!(matches!(one_way_anova(&[[1.0, 2.0]]), Err(StatsError::TooFewGroups(1))));
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0_f64, 2.0, 3.0, 4.0];
        assert!((pearson_r(&x, &x).unwrap().r - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &neg).unwrap().r + 1.0).abs() < 1e-15);
        let c = pearson_r(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((c.r - 0.8).abs() < 1e-12);
        assert!(matches!(pearson_r(&x, &[1.0, 1.0, 1.0, 1.0]), Err(StatsError::ConstantInput)));
        assert!(matches!(pearson_r(&x, &[1.0]), Err(StatsError::LengthMismatch(4, 1))));
    }

    #[test]
    fn bh_adjustment() {
        let adj = benjamini_hochberg(&[0.01_f64, 0.04, 0.03, 0.5]);
        let expected = [0.04, 0.04 * 4.0 / 3.0, 0.04 * 4.0 / 3.0, 0.5];
        for (a, e) in adj.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12_f64);
        }
    }

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), Some(2.5));
        assert_eq!(quantile_sorted(&s, 0.25), Some(1.75));
        assert_eq!(quantile_sorted(&s, 1.0), Some(4.0));
        assert_eq!(quantile_sorted::<f64>(&[], 0.5), None);
    }
}
