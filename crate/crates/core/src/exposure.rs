//! Per-frame affine colour correction fitted in closed form against a
//! reference image.

use ibgs_autodiff::{Tape, Tensor, Var};
use nalgebra::{Matrix4, Matrix4x3};

use crate::error::Result;
use crate::imagebuf::Image;

/// Fits with fewer valid pixels fall back to the identity.
pub const MIN_PIXELS: usize = 50;
pub const DAMPING: f64 = 1e-8;
/// Normal-equation condition numbers above this are flagged. A rank-deficient
/// design over `MIN_PIXELS` or more pixels sits near `pixels / DAMPING`, far above.
pub const ILL_CONDITIONED: f64 = 1e8;

/// `c' = A [c; 1]` with `A` a 3x4 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureAffine {
    pub a: [[f64; 4]; 3],
    /// Condition number of the damped normal matrix (1 for the identity fallback).
    pub condition: f64,
    /// Number of pixels the fit used.
    pub pixels: usize,
    /// Too few pixels; `a` is the identity.
    pub fallback: bool,
}

impl ExposureAffine {
    pub fn identity() -> Self {
        ExposureAffine {
            a: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
            condition: 1.0,
            pixels: 0,
            fallback: true,
        }
    }

    pub fn from_matrix(a: [[f64; 4]; 3]) -> Self {
        ExposureAffine {
            a,
            condition: 1.0,
            pixels: 0,
            fallback: false,
        }
    }

    pub fn ill_conditioned(&self) -> bool {
        self.condition > ILL_CONDITIONED
    }

    pub fn apply(&self, c: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| self.a[i][0] * c[0] + self.a[i][1] * c[1] + self.a[i][2] * c[2] + self.a[i][3])
    }

    pub fn apply_image(&self, img: &Image) -> Image {
        let mut out = img.clone();
        for px in out.data.chunks_mut(3) {
            let c = self.apply([px[0], px[1], px[2]]);
            px.copy_from_slice(&c);
        }
        out
    }

    /// Applies the (constant) affine to a `[P, 3]` colour variable.
    pub fn apply_var<'t>(&self, tape: &'t Tape, c: Var<'t>) -> Result<Var<'t>> {
        let at: Vec<f64> = (0..3).flat_map(|j| (0..3).map(move |i| (i, j))).map(|(i, j)| self.a[i][j]).collect();
        let lin = tape.constant(Tensor::new(vec![3, 3], at)?);
        let b = tape.constant(Tensor::vector(vec![self.a[0][3], self.a[1][3], self.a[2][3]]));
        Ok(c.matmul(lin)?.add(b)?)
    }
}

/// Least-squares objective `Σ ‖A [c; 1] - t‖²` over `valid` pixels.
pub fn objective(a: &ExposureAffine, c: &Image, target: &Image, valid: &[bool]) -> f64 {
    (0..c.pixels())
        .filter(|&p| valid[p])
        .map(|p| {
            let r = a.apply(c.pixel(p));
            let t = target.pixel(p);
            (0..3).map(|k| (r[k] - t[k]).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Closed-form damped least squares fit of `A` mapping `c` to `target` on `valid`.
pub fn fit_affine(c: &Image, target: &Image, valid: &[bool]) -> ExposureAffine {
    let pixels = valid.iter().filter(|&&v| v).count();
    if pixels < MIN_PIXELS {
        log::warn!("exposure fit has {} valid pixels (< {}); using identity", pixels, MIN_PIXELS);
        return ExposureAffine::identity();
    }
    let mut g = Matrix4::<f64>::zeros();
    let mut b = Matrix4x3::<f64>::zeros();
    for p in (0..c.pixels()).filter(|&p| valid[p]) {
        let [r, gc, bl] = c.pixel(p);
        let x = nalgebra::Vector4::new(r, gc, bl, 1.0);
        let t = target.pixel(p);
        g += x * x.transpose();
        for k in 0..3 {
            b.column_mut(k).axpy(t[k], &x, 1.0);
        }
    }
    g += Matrix4::identity() * DAMPING;
    let eig = g.symmetric_eigenvalues();
    let condition = eig.max() / eig.min();
    let sol = g
        .cholesky()
        .map(|ch| ch.solve(&b))
        .or_else(|| g.lu().solve(&b))
        .unwrap_or_else(|| {
            let mut id = Matrix4x3::zeros();
            id[(0, 0)] = 1.0;
            id[(1, 1)] = 1.0;
            id[(2, 2)] = 1.0;
            id
        });
    let mut a = [[0.0; 4]; 3];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = sol[(j, i)];
        }
    }
    let fit = ExposureAffine {
        a,
        condition,
        pixels,
        fallback: false,
    };
    if fit.ill_conditioned() {
        log::warn!("exposure fit is ill-conditioned (condition number {:.3e})", condition);
    }
    fit
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_pixels_falls_back_to_identity() {
        let img = Image::filled(7, 7, [0.3; 3]);
        let f = fit_affine(&img, &img, &vec![true; 49]);
        assert!(f.fallback);
        assert_eq!(f.a, ExposureAffine::identity().a);
    }

    #[test]
    fn apply_examples() {
        let c = [0.2, 0.4, 0.6];
        assert_eq!(ExposureAffine::identity().apply(c), c);
        let a = ExposureAffine::from_matrix([[0.0, 0.0, 0.0, 0.1], [0.0, 0.0, 0.0, 0.2], [0.0, 0.0, 0.0, 0.3]]);
        assert_eq!(a.apply(c), [0.1, 0.2, 0.3]);
    }
}
