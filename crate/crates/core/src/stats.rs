//! Chi-square quantiles for the innovation gates and NEES bands.

use std::sync::OnceLock;

use statrs::distribution::{ChiSquared, ContinuousCDF};

const TABLE_MAX_DOF: usize = 256;

pub fn chi2_quantile(dof: usize, p: f64) -> f64 {
    ChiSquared::new(dof.max(1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(p)
}

/// 95% quantile, tabulated for the dimensions the gates see most.
pub fn chi2_95(dof: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| (0..=TABLE_MAX_DOF).map(|k| chi2_quantile(k, 0.95)).collect());
    table.get(dof).copied().unwrap_or_else(|| chi2_quantile(dof, 0.95))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_quantiles() {
        assert_relative_eq!(chi2_95(1), 3.841458820694124, epsilon = 1e-9);
        assert_relative_eq!(chi2_95(3), 7.814727903251178, epsilon = 1e-9);
        assert_relative_eq!(chi2_quantile(3, 0.999), 16.26623619623813, epsilon = 1e-8);
    }
}
