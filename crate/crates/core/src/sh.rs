//! Real spherical harmonics up to degree 3 and view-dependent colour.

use ibgs_autodiff::{Tape, Tensor, Var};

use crate::error::{Error, Result};

pub const SH_C0: f64 = 0.28209479177387814;
const SH_C1: f64 = 0.4886025119029199;
const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const SH_C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

pub const MAX_DEGREE: usize = 3;

pub fn basis_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Coefficients per Gaussian: RGB for each basis function, basis-major.
pub fn coeff_count(degree: usize) -> usize {
    3 * basis_count(degree)
}

fn check_degree(degree: usize) -> Result<()> {
    if degree > MAX_DEGREE {
        return Err(Error::Invalid(format!("SH degree {} exceeds {}", degree, MAX_DEGREE)));
    }
    Ok(())
}

/// Basis values `Y_lm(v)` for a unit direction.
pub fn basis(v: [f64; 3], degree: usize) -> Result<Vec<f64>> {
    check_degree(degree)?;
    let [x, y, z] = v;
    let mut out = vec![SH_C0];
    if degree >= 1 {
        out.extend([-SH_C1 * y, SH_C1 * z, -SH_C1 * x]);
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out.extend([
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out.extend([
            SH_C3[0] * y * (3.0 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4.0 * zz - xx - yy),
            SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            SH_C3[4] * x * (4.0 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3.0 * yy),
        ]);
    }
    Ok(out)
}

/// Colour before the non-negativity clamp: `Σ h_b Y_b(v) + 0.5`.
pub fn eval_sh_unclamped(h: &[f64], v: [f64; 3], degree: usize) -> Result<[f64; 3]> {
    if h.len() != coeff_count(degree) {
        return Err(Error::Invalid(format!(
            "degree {} needs {} SH coefficients, got {}",
            degree,
            coeff_count(degree),
            h.len()
        )));
    }
    let y = basis(v, degree)?;
    let mut rgb = [0.5; 3];
    for (b, yb) in y.iter().enumerate() {
        for c in 0..3 {
            rgb[c] += h[3 * b + c] * yb;
        }
    }
    Ok(rgb)
}

pub fn eval_sh(h: &[f64], v: [f64; 3], degree: usize) -> Result<[f64; 3]> {
    Ok(eval_sh_unclamped(h, v, degree)?.map(|c| c.max(0.0)))
}

/// Differentiable basis for `[n, 3]` unit directions, returning `[n, (l+1)²]`.
pub(crate) fn basis_var<'t>(tape: &'t Tape, dirs: Var<'t>, degree: usize) -> Result<Var<'t>> {
    check_degree(degree)?;
    let n = dirs.shape()[0];
    let x = dirs.select_last(&[0])?;
    let y = dirs.select_last(&[1])?;
    let z = dirs.select_last(&[2])?;
    let mut cols = vec![tape.constant(Tensor::full(vec![n, 1], SH_C0))];
    if degree >= 1 {
        cols.extend([y.scale(-SH_C1), z.scale(SH_C1), x.scale(-SH_C1)]);
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x.mul(x)?, y.mul(y)?, z.mul(z)?);
        cols.extend([
            x.mul(y)?.scale(SH_C2[0]),
            y.mul(z)?.scale(SH_C2[1]),
            zz.scale(2.0).sub(xx)?.sub(yy)?.scale(SH_C2[2]),
            x.mul(z)?.scale(SH_C2[3]),
            xx.sub(yy)?.scale(SH_C2[4]),
        ]);
        if degree >= 3 {
            let q = zz.scale(4.0).sub(xx)?.sub(yy)?;
            cols.extend([
                y.mul(xx.scale(3.0).sub(yy)?)?.scale(SH_C3[0]),
                x.mul(y)?.mul(z)?.scale(SH_C3[1]),
                y.mul(q)?.scale(SH_C3[2]),
                z.mul(zz.scale(2.0).sub(xx.scale(3.0))?.sub(yy.scale(3.0))?)?.scale(SH_C3[3]),
                x.mul(q)?.scale(SH_C3[4]),
                z.mul(xx.sub(yy)?)?.scale(SH_C3[5]),
                x.mul(xx.sub(yy.scale(3.0))?)?.scale(SH_C3[6]),
            ]);
        }
    }
    Ok(Var::concat_last(&cols)?)
}

/// Differentiable clamped colour: `sh: [n, 3B]`, `dirs: [n, 3]` unit, returns `[n, 3]`.
pub(crate) fn color_var<'t>(tape: &'t Tape, sh: Var<'t>, dirs: Var<'t>, degree: usize) -> Result<Var<'t>> {
    let n = dirs.shape()[0];
    let b = basis_count(degree);
    let y = basis_var(tape, dirs, degree)?.reshape(&[n, 1, b])?;
    let h = sh.reshape(&[n, b, 3])?;
    Ok(y.batch_matmul(h)?.reshape(&[n, 3])?.offset(0.5).relu())
}
