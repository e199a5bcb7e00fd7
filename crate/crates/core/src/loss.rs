//! Training objectives and image-quality metrics.

use ibgs_autodiff::{Tape, Tensor, Var};

use crate::camera::Vec3;
use crate::error::{Error, Result};
use crate::imagebuf::Image;

pub const BETA: f64 = 0.8;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_SIGMA: f64 = 1.5;
/// Depth-normal cross products shorter than this are treated as degenerate.
pub const MIN_CROSS: f64 = 1e-9;

pub fn gaussian_taps() -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Pixels whose SSIM window lies entirely on valid pixels.
pub fn window_mask(valid: &[bool], width: usize, height: usize) -> Vec<bool> {
    let r = SSIM_RADIUS as isize;
    let mut rows = vec![true; valid.len()];
    for y in 0..height {
        for x in 0..width {
            rows[y * width + x] = (-r..=r).all(|d| {
                let xx = x as isize + d;
                xx < 0 || xx >= width as isize || valid[y * width + xx as usize]
            });
        }
    }
    let mut out = vec![true; valid.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = (-r..=r).all(|d| {
                let yy = y as isize + d;
                yy < 0 || yy >= height as isize || rows[yy as usize * width + x]
            });
        }
    }
    out
}

fn masked_mean<'t>(tape: &'t Tape, x: Var<'t>, mask: &[bool]) -> Result<Option<Var<'t>>> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Ok(None);
    }
    let cols = x.shape()[1];
    let m = crate::warp::mask_var(tape, mask)?;
    Ok(Some(x.mul(m)?.sum().scale(1.0 / (n * cols) as f64)))
}

/// Per-pixel SSIM `[P, 3]` of two `[P, 3]` images.
pub fn ssim_map<'t>(x: Var<'t>, y: Var<'t>, width: usize, height: usize) -> Result<Var<'t>> {
    let taps = gaussian_taps();
    let img = |v: Var<'t>| v.reshape(&[height, width, 3]);
    let (xi, yi) = (img(x)?, img(y)?);
    let mx = xi.window_filter(&taps)?;
    let my = yi.window_filter(&taps)?;
    let mxx = mx.mul(mx)?;
    let myy = my.mul(my)?;
    let mxy = mx.mul(my)?;
    let sxx = xi.mul(xi)?.window_filter(&taps)?.sub(mxx)?;
    let syy = yi.mul(yi)?.window_filter(&taps)?.sub(myy)?;
    let sxy = xi.mul(yi)?.window_filter(&taps)?.sub(mxy)?;
    let num = mxy.scale(2.0).offset(SSIM_C1).mul(sxy.scale(2.0).offset(SSIM_C2))?;
    let den = mxx.add(myy)?.offset(SSIM_C1).mul(sxx.add(syy)?.offset(SSIM_C2))?;
    Ok(num.div(den)?.reshape(&[width * height, 3])?)
}

/// Mean SSIM over the windows lying fully on valid pixels; `None` if there are none.
pub fn ssim_var<'t>(tape: &'t Tape, x: Var<'t>, y: Var<'t>, valid: Option<&[bool]>, width: usize, height: usize) -> Result<Option<Var<'t>>> {
    let map = ssim_map(x, y, width, height)?;
    let windows = match valid {
        Some(v) => window_mask(v, width, height),
        None => vec![true; width * height],
    };
    masked_mean(tape, map, &windows)
}

/// `β·L1 + (1-β)·(1 - SSIM)` over valid pixels (all pixels when `valid` is
/// `None`). `None` when no pixel is valid.
pub fn mixed_loss<'t>(
    tape: &'t Tape,
    c: Var<'t>,
    gt: Var<'t>,
    valid: Option<&[bool]>,
    width: usize,
    height: usize,
) -> Result<Option<Var<'t>>> {
    let all = vec![true; width * height];
    let mask = valid.unwrap_or(&all);
    let Some(l1) = masked_mean(tape, c.sub(gt)?.abs(), mask)? else {
        return Ok(None);
    };
    let loss = match ssim_var(tape, c, gt, valid, width, height)? {
        Some(s) => l1.scale(BETA).add(s.neg().offset(1.0).scale(1.0 - BETA))?,
        None => l1.scale(BETA),
    };
    Ok(Some(loss))
}

/// `γ·L(C, C_real) + (1-γ)·L(C_final, C_real)`; the final-image term is
/// omitted when `γ = 1`.
pub fn rgb_loss<'t>(
    tape: &'t Tape,
    c: Var<'t>,
    c_final: Option<Var<'t>>,
    real: Var<'t>,
    gamma: f64,
    width: usize,
    height: usize,
) -> Result<Var<'t>> {
    let base = mixed_loss(tape, c, real, None, width, height)?.expect("unmasked loss");
    if gamma >= 1.0 {
        return Ok(base.scale(gamma));
    }
    let fin = c_final.ok_or_else(|| Error::Invalid("gamma < 1 needs the final image".into()))?;
    let fin = mixed_loss(tape, fin, real, None, width, height)?.expect("unmasked loss");
    Ok(base.scale(gamma).add(fin.scale(1.0 - gamma))?)
}

/// Mean of the masked mixed loss over the warped views that have at least
/// one valid pixel. Returns the loss and the number of views used.
pub fn photo_loss<'t>(
    tape: &'t Tape,
    warps: &[(Var<'t>, &[bool])],
    real: Var<'t>,
    width: usize,
    height: usize,
) -> Result<(Var<'t>, usize)> {
    let mut terms = Vec::new();
    for (w, mask) in warps {
        if let Some(l) = mixed_loss(tape, *w, real, Some(mask), width, height)? {
            terms.push(l);
        }
    }
    if terms.is_empty() {
        return Ok((tape.scalar(0.0), 0));
    }
    let n = terms.len();
    let mut sum = terms[0];
    for t in &terms[1..] {
        sum = sum.add(*t)?;
    }
    Ok((sum.scale(1.0 / n as f64), n))
}

/// `mean over Ω of (1 - Nᵀ N_depth)` where `N_depth` is the camera-facing unit
/// normal from central differences of the point map. Ω holds interior pixels
/// whose centre and four neighbours are valid and whose cross product is not
/// degenerate. Returns the loss and `|Ω|`; the loss is 0 when Ω is empty.
pub fn normal_loss<'t>(
    tape: &'t Tape,
    normals: Var<'t>,
    points: Var<'t>,
    valid: &[bool],
    rays: &[Vec3],
    width: usize,
    height: usize,
) -> Result<(Var<'t>, usize)> {
    let xv = points.value();
    let px = |i: usize| [xv.data()[3 * i], xv.data()[3 * i + 1], xv.data()[3 * i + 2]];
    let (mut c, mut l, mut r, mut u, mut d) = (vec![], vec![], vec![], vec![], vec![]);
    let mut signs = Vec::new();
    for y in 1..height.saturating_sub(1) {
        for x in 1..width.saturating_sub(1) {
            let p = y * width + x;
            let nb = [p - 1, p + 1, p - width, p + width];
            if !valid[p] || nb.iter().any(|&q| !valid[q]) {
                continue;
            }
            let du = crate::camera::sub(px(p + 1), px(p - 1)).map(|v| 0.5 * v);
            let dv = crate::camera::sub(px(p + width), px(p - width)).map(|v| 0.5 * v);
            let n = crate::camera::cross(du, dv);
            if crate::camera::norm(n) < MIN_CROSS {
                continue;
            }
            signs.push(if crate::camera::dot(n, rays[p]) > 0.0 { -1.0 } else { 1.0 });
            c.push(p);
            l.push(p - 1);
            r.push(p + 1);
            u.push(p - width);
            d.push(p + width);
        }
    }
    let n = c.len();
    if n == 0 {
        return Ok((tape.scalar(0.0), 0));
    }
    let du = points.gather_rows(&r)?.sub(points.gather_rows(&l)?)?.scale(0.5);
    let dv = points.gather_rows(&d)?.sub(points.gather_rows(&u)?)?.scale(0.5);
    let (yzx, zxy) = ([1, 2, 0], [2, 0, 1]);
    let cross = du
        .select_last(&yzx)?
        .mul(dv.select_last(&zxy)?)?
        .sub(du.select_last(&zxy)?.mul(dv.select_last(&yzx)?)?)?;
    let sign = tape.constant(Tensor::new(vec![n, 1], signs)?);
    let nd = cross.normalize_last()?.mul(sign)?;
    let cos = normals.gather_rows(&c)?.dot_last(nd)?;
    Ok((cos.neg().offset(1.0).mean(), n))
}

/// `L_rgb + λ₁ L_photo + λ₂ L_normal`.
pub fn total_loss<'t>(rgb: Var<'t>, photo: Var<'t>, normal: Var<'t>, lambda1: f64, lambda2: f64) -> Result<Var<'t>> {
    Ok(rgb.add(photo.scale(lambda1))?.add(normal.scale(lambda2))?)
}

/// `10 log10(1 / MSE)`; `+∞` for identical images.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    let n = a.data.len().max(1) as f64;
    let mse: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (1.0 / mse).log10()
}

/// Mean SSIM of two images.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Invalid("ssim: image sizes differ".into()));
    }
    let tape = Tape::new();
    let x = tape.constant(a.to_tensor());
    let y = tape.constant(b.to_tensor());
    Ok(ssim_var(&tape, x, y, None, a.width, a.height)?
        .expect("unmasked ssim")
        .item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_sum_to_one() {
        let t = gaussian_taps();
        assert_eq!(t.len(), 11);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, [0.5; 3]);
        let b = Image::filled(4, 4, [0.6; 3]);
        assert!((psnr(&a, &b) - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a), f64::INFINITY);
    }

    #[test]
    fn window_mask_drops_neighbourhood() {
        let mut valid = vec![true; 20 * 20];
        valid[10 * 20 + 10] = false;
        let w = window_mask(&valid, 20, 20);
        assert!(!w[10 * 20 + 10] && !w[15 * 20 + 5] && w[16 * 20 + 10] && w[10 * 20 + 4]);
    }
}
