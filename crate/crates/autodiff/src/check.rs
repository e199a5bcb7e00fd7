//! Central finite-difference gradient oracle.

/// Denominator guard in the relative error.
pub const REL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// Max over checked coordinates of
    /// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`;
    /// infinite if any coordinate failed.
    pub max_rel_error: f64,
    pub worst: Option<usize>,
    /// Coordinates where `f(θ ± step·e_i)` was not finite.
    pub failed: Vec<usize>,
    pub numeric: Vec<f64>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + REL_EPS)
}

/// Checks `analytic` against central differences of `f` at every coordinate of `theta`.
pub fn finite_difference_check<F>(f: F, theta: &[f64], analytic: &[f64], step: f64) -> FdReport
where
    F: FnMut(&[f64]) -> f64,
{
    let coords: Vec<usize> = (0..theta.len()).collect();
    finite_difference_check_at(f, theta, analytic, step, &coords)
}

/// As [`finite_difference_check`], restricted to `coords`.
pub fn finite_difference_check_at<F>(
    mut f: F,
    theta: &[f64],
    analytic: &[f64],
    step: f64,
    coords: &[usize],
) -> FdReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    assert_eq!(theta.len(), analytic.len());
    let mut x = theta.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        failed: Vec::new(),
        numeric: Vec::with_capacity(coords.len()),
        checked: coords.len(),
    };
    for &i in coords {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            report.failed.push(i);
            report.numeric.push(f64::NAN);
            report.max_rel_error = f64::INFINITY;
            report.worst = Some(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * step);
        report.numeric.push(numeric);
        let err = relative_error(analytic[i], numeric);
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(i);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_nearly_exact() {
        let r = finite_difference_check(|x| x[0] * x[0], &[1.0], &[2.0], 1e-5);
        assert!(r.max_rel_error < 1e-8, "{:?}", r);
    }

    #[test]
    fn non_finite_coordinate_is_reported() {
        let r = finite_difference_check(|x| x[0].ln(), &[0.0], &[1.0], 1e-5);
        assert_eq!(r.failed, vec![0]);
        assert!(r.max_rel_error.is_infinite());
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let r = finite_difference_check(|x| x[0] * x[1], &[2.0, 3.0], &[3.0, 2.5], 1e-5);
        assert_eq!(r.worst, Some(1));
        assert!(r.max_rel_error > 0.05);
    }
}
