//! Warping rendered geometry into neighbouring source views: bilinear colour
//! lookup, per-view aggregation, camera features and the depth-consistency
//! visibility check.

use ibgs_autodiff::{CustomOp, Tape, Tensor, Var};

use crate::camera::{dot, norm, normalize, sub, Camera, Vec3};
use crate::error::{Error, Result};
use crate::imagebuf::Image;
use crate::raster::{MedianRecord, Rendered};

/// Minimum source-frame depth of a warped point.
pub const WARP_NEAR: f64 = 0.01;
/// Pixels whose valid weight sum is below this are invalid for a view.
pub const MIN_WEIGHT: f64 = 1e-6;

fn in_bounds(u: f64, v: f64, w: usize, h: usize) -> bool {
    u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64
}

/// Top-left tap and fractional offsets; the last row and column reuse the
/// preceding cell so every tap stays inside the image.
fn cell(u: f64, v: f64, w: usize, h: usize) -> (usize, usize, f64, f64) {
    let x0 = (u.floor() as usize).min(w - 2);
    let y0 = (v.floor() as usize).min(h - 2);
    (x0, y0, u - x0 as f64, v - y0 as f64)
}

/// Bilinear lookup; `None` outside `[0, W-1] x [0, H-1]`.
pub fn bilinear(img: &Image, u: f64, v: f64) -> Option<[f64; 3]> {
    if !in_bounds(u, v, img.width, img.height) {
        return None;
    }
    let (x0, y0, fx, fy) = cell(u, v, img.width, img.height);
    let (c00, c10) = (img.get(x0, y0), img.get(x0 + 1, y0));
    let (c01, c11) = (img.get(x0, y0 + 1), img.get(x0 + 1, y0 + 1));
    Some(std::array::from_fn(|k| {
        (1.0 - fy) * ((1.0 - fx) * c00[k] + fx * c10[k]) + fy * ((1.0 - fx) * c01[k] + fx * c11[k])
    }))
}

/// Colour of the source image where `x` projects; `None` when behind the
/// camera or out of bounds.
pub fn warp_color(x: Vec3, src: &Camera) -> Result<Option<[f64; 3]>> {
    let img = source_image(src)?;
    let (u, v, z) = src.project(x);
    if !(z > WARP_NEAR) {
        return Ok(None);
    }
    Ok(bilinear(img, u, v))
}

fn source_image(src: &Camera) -> Result<&Image> {
    src.image
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("camera {} has no image", src.id)))
}

struct BilinearSample {
    /// Per sample: the four tap colours `c00, c10, c01, c11` and `(fx, fy)`.
    taps: Vec<([[f64; 3]; 4], f64, f64)>,
}

impl CustomOp for BilinearSample {
    fn name(&self) -> &'static str {
        "bilinear"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        if !needs[0] {
            return vec![None];
        }
        let g = grad.data();
        let mut d = vec![0.0; 2 * self.taps.len()];
        for (i, (c, fx, fy)) in self.taps.iter().enumerate() {
            for k in 0..3 {
                let du = (1.0 - fy) * (c[1][k] - c[0][k]) + fy * (c[3][k] - c[2][k]);
                let dv = (1.0 - fx) * (c[2][k] - c[0][k]) + fx * (c[3][k] - c[1][k]);
                d[2 * i] += g[3 * i + k] * du;
                d[2 * i + 1] += g[3 * i + k] * dv;
            }
        }
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), d).expect("bilinear grad"))]
    }
}

/// Differentiable bilinear sample of a constant image at `[n, 2]` pixel
/// coordinates, all of which must be in bounds.
pub fn sample_var<'t>(tape: &'t Tape, uv: Var<'t>, img: &Image) -> Result<Var<'t>> {
    let vals = uv.value();
    let n = vals.shape()[0];
    let mut out = Vec::with_capacity(3 * n);
    let mut taps = Vec::with_capacity(n);
    for i in 0..n {
        let (u, v) = (vals.data()[2 * i], vals.data()[2 * i + 1]);
        if !in_bounds(u, v, img.width, img.height) {
            return Err(Error::Invalid(format!("bilinear sample ({}, {}) out of bounds", u, v)));
        }
        let (x0, y0, fx, fy) = cell(u, v, img.width, img.height);
        let c = [img.get(x0, y0), img.get(x0 + 1, y0), img.get(x0, y0 + 1), img.get(x0 + 1, y0 + 1)];
        for k in 0..3 {
            out.push((1.0 - fy) * ((1.0 - fx) * c[0][k] + fx * c[1][k]) + fy * ((1.0 - fx) * c[2][k] + fx * c[3][k]));
        }
        taps.push((c, fx, fy));
    }
    Ok(tape.custom(Box::new(BilinearSample { taps }), &[uv], Tensor::new(vec![n, 3], out)?))
}

/// Per-view warped colour: `[P, 3]`, zero where invalid.
pub struct Warped<'t> {
    pub color: Var<'t>,
    /// Alpha-valid, at least one in-bounds record, weight sum ≥ [`MIN_WEIGHT`].
    pub valid: Vec<bool>,
}

/// Weighted mean of the warped median records of every alpha-valid pixel.
pub fn aggregate_warped<'t>(tape: &'t Tape, r: &Rendered<'t>, src: &Camera) -> Result<Warped<'t>> {
    let img = source_image(src)?;
    let p = r.pixels();
    let xs = r.records.x.value();
    let mut keep = Vec::new();
    let mut keep_pixel = Vec::new();
    for (i, &pix) in r.records.pixel.iter().enumerate() {
        if !r.valid[pix] {
            continue;
        }
        let x = [xs.data()[3 * i], xs.data()[3 * i + 1], xs.data()[3 * i + 2]];
        let (u, v, z) = src.project(x);
        if z > WARP_NEAR && in_bounds(u, v, src.width, src.height) {
            keep.push(i);
            keep_pixel.push(pix);
        }
    }
    let n = keep.len();
    let x = r.records.x.gather_rows(&keep)?;
    let rt: Vec<f64> = crate::camera::transpose(&src.rotation).iter().flatten().copied().collect();
    let pc = x
        .matmul(tape.constant(Tensor::new(vec![3, 3], rt)?))?
        .add(tape.constant(Tensor::vector(src.translation.to_vec())))?;
    let inv_z = pc.select_last(&[2])?.powf(-1.0);
    let uv = Var::concat_last(&[
        pc.select_last(&[0])?.mul(inv_z)?.scale(src.fx).offset(src.cx),
        pc.select_last(&[1])?.mul(inv_z)?.scale(src.fy).offset(src.cy),
    ])?;
    debug_assert_eq!(uv.shape(), vec![n, 2]);
    let col = sample_var(tape, uv, img)?;
    let w = r.records.w.gather_rows(&keep)?;
    let num = w.mul(col)?.scatter_rows(&keep_pixel, p)?;
    let den = w.scatter_rows(&keep_pixel, p)?;
    let valid: Vec<bool> = den.value().data().iter().map(|&s| s >= MIN_WEIGHT).collect();
    let pad = tape.constant(Tensor::new(
        vec![p, 1],
        valid.iter().map(|&v| if v { 0.0 } else { 1.0 }).collect(),
    )?);
    let color = num.div(den.add(pad)?)?.mul(mask_var(tape, &valid)?)?;
    Ok(Warped { color, valid })
}

/// Value-level aggregation over per-pixel median records.
pub fn aggregate_values(medians: &[Vec<MedianRecord>], valid: &[bool], src: &Camera) -> Result<(Image, Vec<bool>)> {
    let mut img = Image::filled(src.width, src.height, [0.0; 3]);
    if medians.len() != img.pixels() {
        return Err(Error::Invalid("median map size does not match source camera".into()));
    }
    let mut ok = vec![false; medians.len()];
    for (pix, recs) in medians.iter().enumerate() {
        if !valid[pix] {
            continue;
        }
        let mut acc = [0.0; 3];
        let mut wsum = 0.0;
        for rec in recs {
            if let Some(c) = warp_color(rec.point, src)? {
                for k in 0..3 {
                    acc[k] += rec.weight * c[k];
                }
                wsum += rec.weight;
            }
        }
        if wsum >= MIN_WEIGHT {
            ok[pix] = true;
            img.data[3 * pix..3 * pix + 3].copy_from_slice(&acc.map(|a| a / wsum));
        }
    }
    Ok((img, ok))
}

/// `[P, 1]` constant with ones where `mask` is set.
pub fn mask_var<'t>(tape: &'t Tape, mask: &[bool]) -> Result<Var<'t>> {
    Ok(tape.constant(Tensor::new(
        vec![mask.len(), 1],
        mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )?))
}

/// Camera feature `[o_m - o, d_mᵀ d]` from a point and the target ray.
/// A point at the source centre gives a last component of 1 and `false`.
pub fn camera_feature(x: Vec3, ray: Vec3, target: &Camera, src: &Camera) -> ([f64; 4], bool) {
    let (o, om) = (target.center(), src.center());
    let shift = sub(om, o);
    let rel = sub(x, om);
    if norm(rel) == 0.0 {
        return ([shift[0], shift[1], shift[2], 1.0], false);
    }
    ([shift[0], shift[1], shift[2], dot(normalize(rel), ray)], true)
}

/// Value-level camera features for a point map; `None` where there is no point.
pub fn camera_features(pointmap: &[Option<Vec3>], target: &Camera, src: &Camera) -> Vec<Option<[f64; 4]>> {
    let rays = target.rays();
    pointmap
        .iter()
        .zip(&rays)
        .map(|(x, &d)| x.map(|x| camera_feature(x, d, target, src).0))
        .collect()
}

/// Differentiable camera features `[P, 4]` at pixels in `mask` (zero elsewhere).
pub fn camera_features_var<'t>(tape: &'t Tape, r: &Rendered<'t>, target: &Camera, src: &Camera, mask: &[bool]) -> Result<Var<'t>> {
    let p = r.pixels();
    let om = src.center();
    let shift = sub(om, target.center());
    let pts = r.points.value();
    let mut pix = Vec::new();
    let mut slots = Vec::new();
    let mut degenerate = Vec::new();
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let s = r.slot_of[i].ok_or_else(|| Error::Invalid("camera feature at pixel without geometry".into()))?;
        let x = [pts.data()[3 * s], pts.data()[3 * s + 1], pts.data()[3 * s + 2]];
        if norm(sub(x, om)) == 0.0 {
            degenerate.push(i);
        } else {
            pix.push(i);
            slots.push(s);
        }
    }
    if !degenerate.is_empty() {
        log::warn!("{} pixels coincide with the centre of camera {}", degenerate.len(), src.id);
    }
    let n = pix.len();
    let x = r.points.gather_rows(&slots)?;
    let d = tape.constant(Tensor::new(vec![n, 3], pix.iter().flat_map(|&i| r.rays[i]).collect())?);
    let cosine = x
        .sub(tape.constant(Tensor::vector(om.to_vec())))?
        .normalize_last()?
        .dot_last(d)?;
    let shift_rows = tape.constant(Tensor::new(vec![n, 3], (0..n).flat_map(|_| shift).collect())?);
    let feat = Var::concat_last(&[shift_rows, cosine])?.scatter_rows(&pix, p)?;
    let mut fixed = vec![0.0; 4 * p];
    for &i in &degenerate {
        fixed[4 * i..4 * i + 4].copy_from_slice(&[shift[0], shift[1], shift[2], 1.0]);
    }
    Ok(feat.add(tape.constant(Tensor::new(vec![p, 4], fixed)?))?)
}

/// Indices into `train` of the `s` cameras whose centres are closest to the
/// target, excluding cameras with the target's id. Ties keep list order.
pub fn candidate_views(target: &Camera, train: &[&Camera], s: usize) -> Vec<usize> {
    let c = target.center();
    let mut idx: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .filter(|(_, cam)| cam.id != target.id)
        .map(|(i, cam)| (norm(sub(cam.center(), c)), i))
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    idx.into_iter().take(s).map(|(_, i)| i).collect()
}

/// Bilinear blend of a point map; requires all four taps to be present.
pub fn sample_points(points: &[Option<Vec3>], w: usize, h: usize, u: f64, v: f64) -> Option<Vec3> {
    if !in_bounds(u, v, w, h) {
        return None;
    }
    let (x0, y0, fx, fy) = cell(u, v, w, h);
    let p00 = points[y0 * w + x0]?;
    let p10 = points[y0 * w + x0 + 1]?;
    let p01 = points[(y0 + 1) * w + x0]?;
    let p11 = points[(y0 + 1) * w + x0 + 1]?;
    Some(std::array::from_fn(|k| {
        (1.0 - fy) * ((1.0 - fx) * p00[k] + fx * p10[k]) + fy * ((1.0 - fx) * p01[k] + fx * p11[k])
    }))
}

/// Relative depth-consistency test between a target point and the source
/// geometry found where that point projects. Depths are measured in the
/// target frame. An infinite `tau` accepts every in-bounds projection.
pub fn depth_consistent(target: &Camera, x: Vec3, src: &Camera, src_points: &[Option<Vec3>], tau: f64) -> bool {
    let (u, v, z) = src.project(x);
    if !(z > WARP_NEAR) || !in_bounds(u, v, src.width, src.height) {
        return false;
    }
    if tau == f64::INFINITY {
        return true;
    }
    let Some(xs) = sample_points(src_points, src.width, src.height, u, v) else {
        return false;
    };
    let z1 = target.to_camera(x)[2];
    let z2 = target.to_camera(xs)[2];
    (z1 - z2).abs() / (z1 + z2) <= tau
}

/// Per-pixel pass mask of one candidate view.
pub fn visibility_mask(
    target: &Camera,
    target_points: &[Option<Vec3>],
    src: &Camera,
    src_points: &[Option<Vec3>],
    tau: f64,
) -> Vec<bool> {
    target_points
        .iter()
        .map(|&x| x.is_some_and(|x| depth_consistent(target, x, src, src_points, tau)))
        .collect()
}

/// Per pixel, the first `m` candidates (in the given order) whose mask passes.
pub fn first_passing(passes: &[Vec<bool>], pixels: usize, m: usize) -> Vec<Vec<usize>> {
    (0..pixels)
        .map(|p| {
            passes
                .iter()
                .enumerate()
                .filter(|(_, mask)| mask[p])
                .map(|(i, _)| i)
                .take(m)
                .collect()
        })
        .collect()
}

/// A candidate view together with its rendered world point map.
pub struct SourceGeometry<'a> {
    pub camera: &'a Camera,
    pub points: &'a [Option<Vec3>],
}

/// For each target pixel, up to `m` candidate indices passing the
/// depth-consistency test, in candidate order.
pub fn select_source_views(
    target: &Camera,
    target_points: &[Option<Vec3>],
    candidates: &[SourceGeometry<'_>],
    m: usize,
    tau: f64,
) -> Vec<Vec<usize>> {
    let passes: Vec<Vec<bool>> = candidates
        .iter()
        .map(|c| visibility_mask(target, target_points, c.camera, c.points, tau))
        .collect();
    first_passing(&passes, target_points.len(), m)
}
