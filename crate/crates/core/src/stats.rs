//! Two-sample t-tests and the Student-t tail they need.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom (real-valued), or `na + nb - 2` when pooled.
    pub df: f64,
    /// Two-sided.
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceModel {
    #[default]
    Welch,
    Pooled,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let ss = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    (m, ss / (n - 1.0))
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    t_test(a, b, VarianceModel::Welch)
}

/// Unpaired two-sample t-test.
///
/// Fails with a statistics error when the standard error of the mean
/// difference is zero, e.g. when both samples are constant.
pub fn t_test(a: &[f64], b: &[f64], model: VarianceModel) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::argument(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::argument("t-test samples must be finite"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (se2, df) = match model {
        VarianceModel::Welch => {
            let (sa, sb) = (va / na, vb / nb);
            let se2 = sa + sb;
            let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
            (se2, df)
        }
        VarianceModel::Pooled => {
            let dof = na + nb - 2.0;
            let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / dof;
            (sp2 * (1.0 / na + 1.0 / nb), dof)
        }
    };
    if se2 <= 0.0 {
        return Err(Error::Stats(format!(
            "degenerate variance: both samples are constant (means {ma} and {mb})"
        )));
    }
    let t = (ma - mb) / se2.sqrt();
    let p_value = student_t_two_sided(t, df)?;
    Ok(TTestResult {
        t,
        df,
        p_value,
        significant: p_value < ALPHA,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || t.is_nan() {
        return Err(Error::argument(format!("invalid t={t}, df={df}")));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let x = df / (df + t * t);
    Ok(regularized_incomplete_beta(x, 0.5 * df, 0.5)?.clamp(0.0, 1.0))
}

const CF_EPS: f64 = 1e-15;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 10_000;

/// `I_x(a, b)` by the continued fraction, evaluated with the modified Lentz
/// method on whichever of `x`, `1 - x` converges faster. Accurate to about
/// 1e-10 or better for moderate `a`, `b`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) || !(a > 0.0) || !(b > 0.0) {
        return Err(Error::argument(format!("incomplete beta at x={x}, a={a}, b={b}")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(x, a, b)? / a)
    } else {
        Ok(1.0 - front * beta_cf(1.0 - x, b, a)? / b)
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> Result<f64> {
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let guard = |v: f64| if v.abs() < CF_TINY { CF_TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_EPS {
            return Ok(h);
        }
    }
    Err(Error::Stats(format!("incomplete beta did not converge at x={x}, a={a}, b={b}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};
    use statrs::function::beta::beta_reg;

    #[test]
    fn shifted_sequences() {
        let r = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((r.t + 1.0).abs() < 1e-12);
        assert!((r.df - 8.0).abs() < 1e-12);
        assert!((r.p_value - 0.346_593_507_087_334_16).abs() < 1e-10);
        assert!(!r.significant);
    }

    #[test]
    fn widely_separated_samples() {
        let r = welch_t_test(&[0.0, 0.01], &[10.0, 10.01]).unwrap();
        assert!((r.t + 1414.213_562_373_109_9).abs() < 1e-6);
        assert!((r.df - 2.0).abs() < 1e-12);
        assert!((r.p_value - 4.999_996_250_003_003e-7).abs() < 1e-12);
        assert!(r.p_value < 1e-4 && r.significant);
    }

    #[test]
    fn identical_samples() {
        let a = [0.2, 0.5, 0.1, 0.9];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn t_table_anchors() {
        assert_eq!(student_t_two_sided(0.0, 8.0).unwrap(), 1.0);
        let p = student_t_two_sided(2.306, 8.0).unwrap();
        assert!((p - 0.050_000_322_761_284_174).abs() < 1e-12);
    }

    /// Frozen from an independent float64 reference computation.
    const REFERENCE_P: [(f64, f64, f64); 5] = [
        (1.5, 3.7, 0.2135981692020133),
        (0.3, 12.2, 0.7692274159695509),
        (4.0, 2.5, 0.03901297584131825),
        (2.0, 30.0, 0.0546250449629831),
        (10.0, 1.0, 0.06345103486110712),
    ];

    #[test]
    fn reference_p_values() {
        for (t, df, p) in REFERENCE_P {
            let got = student_t_two_sided(t, df).unwrap();
            assert!((got - p).abs() < 1e-10, "t={t} df={df}: {got} vs {p}");
            assert_eq!(got, student_t_two_sided(-t, df).unwrap());
        }
    }

    #[test]
    fn degenerate_and_short_samples() {
        assert!(matches!(welch_t_test(&[1.0, 1.0], &[1.0, 1.0]), Err(Error::Stats(_))));
        assert!(matches!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::Stats(_))));
        assert!(matches!(welch_t_test(&[1.0], &[1.0, 2.0]), Err(Error::Argument(_))));
        // one constant sample still has a usable standard error
        assert!(welch_t_test(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_ok());
    }

    #[test]
    fn pooled_matches_welch_for_equal_sizes_and_variances() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 3.0, 4.0, 5.0, 6.0];
        let w = t_test(&a, &b, VarianceModel::Welch).unwrap();
        let p = t_test(&a, &b, VarianceModel::Pooled).unwrap();
        assert!((w.t - p.t).abs() < 1e-12 && (w.df - p.df).abs() < 1e-12);
        let p = t_test(&[1.0, 2.0, 4.0], &[3.0, 5.0, 6.0, 9.0, 10.0], VarianceModel::Pooled).unwrap();
        assert_eq!(p.df, 6.0);
    }

    #[test]
    fn incomplete_beta_edges() {
        assert_eq!(regularized_incomplete_beta(0.0, 2.0, 3.0).unwrap(), 0.0);
        assert_eq!(regularized_incomplete_beta(1.0, 2.0, 3.0).unwrap(), 1.0);
        // I_x(1, 1) = x
        assert!((regularized_incomplete_beta(0.37, 1.0, 1.0).unwrap() - 0.37).abs() < 1e-14);
        assert!(regularized_incomplete_beta(1.2, 1.0, 1.0).is_err());
        assert!(student_t_two_sided(1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn incomplete_beta_matches_statrs(x in 0.0f64..1.0, a in 0.05f64..60.0, b in 0.05f64..60.0) {
            let ours = regularized_incomplete_beta(x, a, b).unwrap();
            let theirs = beta_reg(a, b, x);
            prop_assert!((ours - theirs).abs() < 1e-10, "x={} a={} b={}: {} vs {}", x, a, b, ours, theirs);
        }

        #[test]
        fn p_value_matches_statrs(t in -40.0f64..40.0, df in 0.5f64..200.0) {
            let ours = student_t_two_sided(t, df).unwrap();
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            let theirs = 2.0 * dist.cdf(-t.abs());
            prop_assert!((ours - theirs).abs() < 1e-10);
        }

        #[test]
        fn antisymmetric(a in prop::collection::vec(-5.0f64..5.0, 2..12), b in prop::collection::vec(-5.0f64..5.0, 2..12)) {
            let ab = welch_t_test(&a, &b);
            let ba = welch_t_test(&b, &a);
            if let (Ok(ab), Ok(ba)) = (ab, ba) {
                prop_assert_eq!(ab.t, -ba.t);
                prop_assert_eq!(ab.p_value, ba.p_value);
                prop_assert!((0.0..=1.0).contains(&ab.p_value));
                prop_assert_eq!(ab.significant, ab.p_value < ALPHA);
            }
        }
    }
}
