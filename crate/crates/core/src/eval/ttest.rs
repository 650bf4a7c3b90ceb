use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{DasError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Probability of a t at least this large if both means were equal.
    pub p_value: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// One-tailed Welch t-test of `mean(a) > mean(b)`.
///
/// When both samples have zero variance the statistic is undefined; equal
/// means then give p = 0.5 and unequal means give 0 or 1.
pub fn ttest_one_tailed(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(DasError::invalid("t-test needs at least two scores per system"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(DasError::invalid("t-test scores must be finite"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let p_value = if ma > mb {
            0.0
        } else if ma < mb {
            1.0
        } else {
            0.5
        };
        let t = if ma == mb { 0.0 } else { (ma - mb).signum() * f64::INFINITY };
        return Ok(TTest { t, df: na + nb - 2.0, p_value });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| DasError::Numerical(e.to_string()))?;
    Ok(TTest { t, df, p_value: dist.sf(t) })
}
