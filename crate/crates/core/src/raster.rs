//! Differentiable per-pixel splatting rasteriser.
//!
//! Per-Gaussian quantities (EWA projection, colour, opacity) are built from
//! tape operations; front-to-back compositing is one fused [`CustomOp`]
//! whose packed output holds the base image, accumulated alpha, and the
//! blend weights of every median record.

use ibgs_autodiff::{CustomOp, Tape, Tensor, Var};

use crate::camera::{dot, Camera, Vec3};
use crate::error::{Error, Result};
use crate::imagebuf::Image;
use crate::scene::Gaussians;
use crate::sh;

pub const NEAR: f64 = 0.01;
pub const DILATION: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
pub const T_MIN: f64 = 1e-4;
/// Fragments with a smaller alpha are not composited.
pub const ALPHA_MIN: f64 = 1e-10;
/// Pixels below this accumulated alpha carry no usable geometry.
pub const ALPHA_VALID: f64 = 0.02;
pub const PLANE_EPS: f64 = 1e-6;
/// Relative median-depth spread above which a pixel is flagged as a discontinuity.
pub const DISCONTINUITY: f64 = 0.01;

/// Gaussian attributes recorded on a tape (leaves or constants).
#[derive(Clone, Copy)]
pub struct GaussianVars<'t> {
    pub sh_degree: usize,
    pub mu: Var<'t>,
    pub quat: Var<'t>,
    pub log_scale: Var<'t>,
    pub opacity_logit: Var<'t>,
    pub sh: Var<'t>,
    pub normal: Var<'t>,
}

impl<'t> GaussianVars<'t> {
    pub fn fields(&self) -> [Var<'t>; 6] {
        [self.mu, self.quat, self.log_scale, self.opacity_logit, self.sh, self.normal]
    }
}

impl Gaussians {
    pub fn leaves<'t>(&self, tape: &'t Tape) -> GaussianVars<'t> {
        self.on_tape(tape, true)
    }

    pub fn constants<'t>(&self, tape: &'t Tape) -> GaussianVars<'t> {
        self.on_tape(tape, false)
    }

    fn on_tape<'t>(&self, tape: &'t Tape, trainable: bool) -> GaussianVars<'t> {
        let put = |t: &Tensor| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        GaussianVars {
            sh_degree: self.sh_degree,
            mu: put(&self.mu),
            quat: put(&self.quat),
            log_scale: put(&self.log_scale),
            opacity_logit: put(&self.opacity_logit),
            sh: put(&self.sh),
            normal: put(&self.normal),
        }
    }
}

/// A Gaussian projected onto the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub index: usize,
    pub mean: [f64; 2],
    /// Dilated screen covariance `(xx, xy, yy)` in px².
    pub cov: [f64; 3],
    pub depth: f64,
}

impl Splat2D {
    pub fn conic(&self) -> [f64; 3] {
        let [a, b, c] = self.cov;
        let det = a * c - b * b;
        [c / det, -b / det, a / det]
    }
}

fn lambda_max(cov: [f64; 3]) -> f64 {
    let [a, b, c] = cov;
    let mid = 0.5 * (a + c);
    let det = a * c - b * b;
    mid + (mid * mid - det).max(0.1).sqrt()
}

fn misses_image(mean: [f64; 2], radius: f64, width: usize, height: usize) -> bool {
    mean[0] + radius < 0.0
        || mean[0] - radius > (width - 1) as f64
        || mean[1] + radius < 0.0
        || mean[1] - radius > (height - 1) as f64
}

/// Per-Gaussian tape quantities for the Gaussians in front of the near plane.
struct Projection<'t> {
    vis: Vec<usize>,
    depth: Vec<f64>,
    mean2d: Var<'t>,
    cov2d: Var<'t>,
    conic: Var<'t>,
    opacity: Var<'t>,
    color: Var<'t>,
    mu: Var<'t>,
    normal: Var<'t>,
}

fn rotmat_var<'t>(q: Var<'t>) -> Result<Var<'t>> {
    let n = q.shape()[0];
    let w = q.select_last(&[0])?;
    let x = q.select_last(&[1])?;
    let y = q.select_last(&[2])?;
    let z = q.select_last(&[3])?;
    let (xx, yy, zz) = (x.mul(x)?, y.mul(y)?, z.mul(z)?);
    let (xy, xz, yz) = (x.mul(y)?, x.mul(z)?, y.mul(z)?);
    let (wx, wy, wz) = (w.mul(x)?, w.mul(y)?, w.mul(z)?);
    let one_minus = |a: Var<'t>, b: Var<'t>| -> Result<Var<'t>> { Ok(a.add(b)?.scale(-2.0).offset(1.0)) };
    let twice = |a: Var<'t>, b: Var<'t>, sign: f64| -> Result<Var<'t>> { Ok(a.add(b.scale(sign))?.scale(2.0)) };
    let cols = [
        one_minus(yy, zz)?,
        twice(xy, wz, -1.0)?,
        twice(xz, wy, 1.0)?,
        twice(xy, wz, 1.0)?,
        one_minus(xx, zz)?,
        twice(yz, wx, -1.0)?,
        twice(xz, wy, -1.0)?,
        twice(yz, wx, 1.0)?,
        one_minus(xx, yy)?,
    ];
    Ok(Var::concat_last(&cols)?.reshape(&[n, 3, 3])?)
}

fn project<'t>(tape: &'t Tape, g: &GaussianVars<'t>, cam: &Camera) -> Result<Projection<'t>> {
    let mu_all = g.mu.value();
    let n = mu_all.shape()[0];
    let mut vis = Vec::new();
    let mut depth = Vec::new();
    for i in 0..n {
        let p = &mu_all.data()[3 * i..3 * i + 3];
        let z = cam.to_camera([p[0], p[1], p[2]])[2];
        if z > NEAR {
            vis.push(i);
            depth.push(z);
        }
    }
    let v = vis.len();
    let mu = g.mu.gather_rows(&vis)?;
    let q = g.quat.gather_rows(&vis)?.normalize_last()?;
    let s = g.log_scale.gather_rows(&vis)?.exp();
    let opacity = g.opacity_logit.gather_rows(&vis)?.sigmoid();
    let shv = g.sh.gather_rows(&vis)?;
    let normal = g.normal.gather_rows(&vis)?.normalize_last()?;

    let m = rotmat_var(q)?.mul(s.reshape(&[v, 1, 3])?)?;
    let sigma = m.batch_matmul(m.transpose_last2()?)?;
    let r = cam.rotation;
    let rt = crate::camera::transpose(&r);
    let flat = |m: [[f64; 3]; 3]| m.iter().flatten().copied().collect::<Vec<f64>>();
    let rc = tape.constant(Tensor::new(vec![1, 3, 3], flat(r))?);
    let rct = tape.constant(Tensor::new(vec![1, 3, 3], flat(rt))?);
    let sigma_c = rc.batch_matmul(sigma)?.batch_matmul(rct)?;

    let pc = mu
        .matmul(tape.constant(Tensor::new(vec![3, 3], flat(rt))?))?
        .add(tape.constant(Tensor::vector(cam.translation.to_vec())))?;
    let x = pc.select_last(&[0])?;
    let y = pc.select_last(&[1])?;
    let z = pc.select_last(&[2])?;
    let inv_z = z.powf(-1.0);
    let inv_z2 = inv_z.mul(inv_z)?;
    let zero = tape.constant(Tensor::zeros(vec![v, 1]));
    let jac = Var::concat_last(&[
        inv_z.scale(cam.fx),
        zero,
        x.mul(inv_z2)?.scale(-cam.fx),
        zero,
        inv_z.scale(cam.fy),
        y.mul(inv_z2)?.scale(-cam.fy),
    ])?
    .reshape(&[v, 2, 3])?;
    let cov = jac.batch_matmul(sigma_c)?.batch_matmul(jac.transpose_last2()?)?.reshape(&[v, 4])?;
    let a = cov.select_last(&[0])?.offset(DILATION);
    let b = cov.select_last(&[1])?;
    let c = cov.select_last(&[3])?.offset(DILATION);
    let det = a.mul(c)?.sub(b.mul(b)?)?;
    let conic = Var::concat_last(&[c.div(det)?, b.neg().div(det)?, a.div(det)?])?;
    let cov2d = Var::concat_last(&[a, b, c])?;
    let mean2d = Var::concat_last(&[
        x.mul(inv_z)?.scale(cam.fx).offset(cam.cx),
        y.mul(inv_z)?.scale(cam.fy).offset(cam.cy),
    ])?;
    let dirs = mu
        .sub(tape.constant(Tensor::vector(cam.center().to_vec())))?
        .normalize_last()?;
    let color = sh::color_var(tape, shv, dirs, g.sh_degree)?;
    Ok(Projection {
        vis,
        depth,
        mean2d,
        cov2d,
        conic,
        opacity,
        color,
        mu,
        normal,
    })
}

/// Projects one Gaussian; `None` if it is behind the near plane or its 3σ
/// footprint misses the image.
pub fn project_gaussian(gaussians: &Gaussians, index: usize, cam: &Camera) -> Result<Option<Splat2D>> {
    if index >= gaussians.len() {
        return Err(Error::Invalid(format!("gaussian {} out of range", index)));
    }
    let one = gaussians.select(&[index]);
    let tape = Tape::new();
    let p = project(&tape, &one.constants(&tape), cam)?;
    if p.vis.is_empty() {
        return Ok(None);
    }
    let m = p.mean2d.value();
    let c = p.cov2d.value();
    let splat = Splat2D {
        index,
        mean: [m.data()[0], m.data()[1]],
        cov: [c.data()[0], c.data()[1], c.data()[2]],
        depth: p.depth[0],
    };
    if misses_image(splat.mean, 3.0 * lambda_max(splat.cov).sqrt(), cam.width, cam.height) {
        return Ok(None);
    }
    Ok(Some(splat))
}

#[derive(Debug, Clone, Copy)]
struct Frag {
    v: u32,
    alpha: f64,
    gval: f64,
    t: f64,
    clamped: bool,
}

/// `(alpha before clamp, gaussian falloff)` at pixel centre `(px, py)`.
fn splat_alpha(opacity: f64, conic: [f64; 3], mean: [f64; 2], px: f64, py: f64) -> (f64, f64) {
    let dx = px - mean[0];
    let dy = py - mean[1];
    let power = -0.5 * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy;
    let g = power.exp();
    (opacity * g, g)
}

fn make_frag(v: usize, opacity: f64, conic: [f64; 3], mean: [f64; 2], px: f64, py: f64) -> Option<Frag> {
    let (raw, gval) = splat_alpha(opacity, conic, mean, px, py);
    if !(raw >= ALPHA_MIN) {
        return None;
    }
    Some(Frag {
        v: v as u32,
        alpha: raw.min(ALPHA_MAX),
        gval,
        t: 0.0,
        clamped: raw > ALPHA_MAX,
    })
}

/// Sets each fragment's incoming transmittance and drops the fragments after
/// transmittance falls below [`T_MIN`]. Returns the final transmittance.
fn composite(frags: &mut Vec<Frag>) -> f64 {
    let mut t = 1.0;
    let mut keep = frags.len();
    for (i, f) in frags.iter_mut().enumerate() {
        f.t = t;
        t *= 1.0 - f.alpha;
        if t < T_MIN {
            keep = i + 1;
            break;
        }
    }
    frags.truncate(keep);
    t
}

/// A projected Gaussian with its activated opacity and colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredSplat {
    pub splat: Splat2D,
    pub opacity: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelBlend {
    pub color: [f64; 3],
    pub alpha: f64,
    /// Blend weights `w_i = α_i T_i` of the composited splats, front to back.
    pub weights: Vec<f64>,
    /// Incoming transmittance `T_i` of the composited splats.
    pub transmittance: Vec<f64>,
    /// Positions in the input list of the composited splats.
    pub used: Vec<usize>,
}

/// Front-to-back compositing of depth-sorted splats at one pixel centre.
/// Background is black.
pub fn blend_pixel(px: f64, py: f64, splats: &[ColoredSplat]) -> PixelBlend {
    let mut frags: Vec<Frag> = splats
        .iter()
        .enumerate()
        .filter_map(|(i, s)| make_frag(i, s.opacity, s.splat.conic(), s.splat.mean, px, py))
        .collect();
    let t_final = composite(&mut frags);
    let mut color = [0.0; 3];
    let mut weights = Vec::with_capacity(frags.len());
    for f in &frags {
        let w = f.alpha * f.t;
        let c = splats[f.v as usize].color;
        for k in 0..3 {
            color[k] += w * c[k];
        }
        weights.push(w);
    }
    PixelBlend {
        color,
        alpha: 1.0 - t_final,
        weights,
        transmittance: frags.iter().map(|f| f.t).collect(),
        used: frags.iter().map(|f| f.v as usize).collect(),
    }
}

/// Window of `k` consecutive composited entries centred on the first entry
/// whose incoming transmittance is below 0.5, shifted inward at the ends.
/// Falls back to the last `k` entries when transmittance never drops below 0.5.
pub fn select_medians(transmittance: &[f64], k: usize) -> std::ops::Range<usize> {
    let n = transmittance.len();
    if n <= k {
        return 0..n;
    }
    match transmittance.iter().position(|&t| t < 0.5) {
        Some(c) => {
            let start = c.saturating_sub((k.max(1) - 1) / 2).min(n - k);
            start..start + k
        }
        None => n - k..n,
    }
}

/// Intersection of the ray `o + t d` with the plane through `mu` with normal
/// `n`; `None` when the ray is parallel within [`PLANE_EPS`] or `t <= 0`.
pub fn ray_plane_intersect(o: Vec3, d: Vec3, mu: Vec3, n: Vec3) -> Option<Vec3> {
    let den = dot(n, d);
    if den.abs() <= PLANE_EPS {
        return None;
    }
    let t = dot(n, crate::camera::sub(mu, o)) / den;
    if !(t > 0.0) {
        return None;
    }
    Some([o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]])
}

struct BlendOp {
    width: usize,
    offsets: Vec<usize>,
    frags: Vec<Frag>,
    record_frag: Vec<usize>,
}

impl CustomOp for BlendOp {
    fn name(&self) -> &'static str {
        "blend"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (mean, conic, opac, color) = (inputs[0].data(), inputs[1].data(), inputs[2].data(), inputs[3].data());
        let v = inputs[2].len();
        let p = self.offsets.len() - 1;
        let g = grad.data();
        let mut d_mean = vec![0.0; 2 * v];
        let mut d_conic = vec![0.0; 3 * v];
        let mut d_opac = vec![0.0; v];
        let mut d_color = vec![0.0; 3 * v];
        let mut g_record = vec![0.0; self.frags.len()];
        for (r, &f) in self.record_frag.iter().enumerate() {
            g_record[f] += g[4 * p + r];
        }
        for pix in 0..p {
            let (s, e) = (self.offsets[pix], self.offsets[pix + 1]);
            if s == e {
                continue;
            }
            let gc = [g[3 * pix], g[3 * pix + 1], g[3 * pix + 2]];
            let ga = g[3 * p + pix];
            let px = (pix % self.width) as f64;
            let py = (pix / self.width) as f64;
            let mut behind = 0.0;
            for j in (s..e).rev() {
                let f = &self.frags[j];
                let vi = f.v as usize;
                let c = &color[3 * vi..3 * vi + 3];
                let w = f.alpha * f.t;
                let gj = gc[0] * c[0] + gc[1] * c[1] + gc[2] * c[2] + ga + g_record[j];
                let d_alpha = gj * f.t - behind / (1.0 - f.alpha);
                behind += gj * w;
                for k in 0..3 {
                    d_color[3 * vi + k] += gc[k] * w;
                }
                if f.clamped {
                    continue;
                }
                let o = opac[vi];
                d_opac[vi] += d_alpha * f.gval;
                let d_power = d_alpha * o * f.gval;
                let dx = px - mean[2 * vi];
                let dy = py - mean[2 * vi + 1];
                let (a, b, cc) = (conic[3 * vi], conic[3 * vi + 1], conic[3 * vi + 2]);
                d_conic[3 * vi] += -0.5 * dx * dx * d_power;
                d_conic[3 * vi + 1] += -dx * dy * d_power;
                d_conic[3 * vi + 2] += -0.5 * dy * dy * d_power;
                d_mean[2 * vi] += (a * dx + b * dy) * d_power;
                d_mean[2 * vi + 1] += (b * dx + cc * dy) * d_power;
            }
        }
        let wrap = |need: bool, shape: &[usize], d: Vec<f64>| need.then(|| Tensor::new(shape.to_vec(), d).expect("blend grad"));
        vec![
            wrap(needs[0], inputs[0].shape(), d_mean),
            wrap(needs[1], inputs[1].shape(), d_conic),
            wrap(needs[2], inputs[2].shape(), d_opac),
            wrap(needs[3], inputs[3].shape(), d_color),
        ]
    }
}

/// Median intersection records of a rendered view, one row per record.
pub struct Records<'t> {
    /// Flat pixel index of each record.
    pub pixel: Vec<usize>,
    /// Row of the record's pixel in the compact geometry maps.
    pub slot: Vec<usize>,
    /// Index of the source Gaussian.
    pub gaussian: Vec<usize>,
    /// `[R, 3]` ray-plane intersections.
    pub x: Var<'t>,
    /// `[R, 1]` blend weights.
    pub w: Var<'t>,
}

/// Everything the rest of the pipeline needs from rendering one view.
pub struct Rendered<'t> {
    pub width: usize,
    pub height: usize,
    pub origin: Vec3,
    /// Unit world rays through each pixel centre.
    pub rays: Vec<Vec3>,
    /// `[P, 3]` base colour.
    pub base: Var<'t>,
    /// `[P, 1]` accumulated opacity.
    pub alpha: Var<'t>,
    pub records: Records<'t>,
    /// Pixels with at least one record, ascending; row `i` of `points`/`normals`.
    pub geom_pixels: Vec<usize>,
    /// Per pixel: its row in the geometry maps, if any.
    pub slot_of: Vec<Option<usize>>,
    /// `[G, 3]` blended intersection points.
    pub points: Var<'t>,
    /// `[G, 3]` camera-facing blended normals.
    pub normals: Var<'t>,
    /// Alpha at least [`ALPHA_VALID`] and at least one record.
    pub valid: Vec<bool>,
    pub discontinuity: Vec<bool>,
    pub visible: usize,
    pub fragments: usize,
}

impl Rendered<'_> {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn base_image(&self) -> Image {
        Image::from_tensor(self.width, self.height, &self.base.value()).expect("base image shape")
    }

    /// World point per pixel (`None` where there is no record).
    pub fn point_map(&self) -> Vec<Option<Vec3>> {
        let pts = self.points.value();
        self.slot_of
            .iter()
            .map(|s| s.map(|i| [pts.data()[3 * i], pts.data()[3 * i + 1], pts.data()[3 * i + 2]]))
            .collect()
    }

    pub fn normal_map(&self) -> Vec<Option<Vec3>> {
        let n = self.normals.value();
        self.slot_of
            .iter()
            .map(|s| s.map(|i| [n.data()[3 * i], n.data()[3 * i + 1], n.data()[3 * i + 2]]))
            .collect()
    }

    pub fn rays_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rays.len(), 3], self.rays.iter().flatten().copied().collect()).expect("ray map")
    }
}

/// Renders `cam` from the Gaussians on `tape`, keeping up to `k` median records per pixel.
pub fn render_vars<'t>(tape: &'t Tape, g: &GaussianVars<'t>, cam: &Camera, k: usize) -> Result<Rendered<'t>> {
    if k == 0 {
        return Err(Error::Invalid("median count K must be at least 1".into()));
    }
    let (w, h) = (cam.width, cam.height);
    let p_count = w * h;
    let proj = project(tape, g, cam)?;
    let v = proj.vis.len();
    let means = proj.mean2d.value();
    let covs = proj.cov2d.value();
    let conics = proj.conic.value();
    let opac = proj.opacity.value();
    let mu_v = proj.mu.value();
    let nrm_v = proj.normal.value();

    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| proj.depth[a].total_cmp(&proj.depth[b]).then(a.cmp(&b)));

    let mut lists: Vec<Vec<Frag>> = vec![Vec::new(); p_count];
    for &i in &order {
        let mean = [means.data()[2 * i], means.data()[2 * i + 1]];
        let cov = [covs.data()[3 * i], covs.data()[3 * i + 1], covs.data()[3 * i + 2]];
        let conic = [conics.data()[3 * i], conics.data()[3 * i + 1], conics.data()[3 * i + 2]];
        let o = opac.data()[i];
        let lmax = lambda_max(cov);
        if !lmax.is_finite() || !mean.iter().all(|m| m.is_finite()) {
            continue;
        }
        if misses_image(mean, 3.0 * lmax.sqrt(), w, h) || o < ALPHA_MIN {
            continue;
        }
        let r = (2.0 * lmax * (o / ALPHA_MIN).ln()).sqrt();
        let x0 = (mean[0] - r).floor().max(0.0) as usize;
        let y0 = (mean[1] - r).floor().max(0.0) as usize;
        let x1 = ((mean[0] + r).ceil().min((w - 1) as f64)).max(0.0) as usize;
        let y1 = ((mean[1] + r).ceil().min((h - 1) as f64)).max(0.0) as usize;
        for py in y0..=y1 {
            for px in x0..=x1 {
                if let Some(f) = make_frag(i, o, conic, mean, px as f64, py as f64) {
                    lists[py * w + px].push(f);
                }
            }
        }
    }

    let rays = cam.rays();
    let origin = cam.center();
    let fwd = cam.forward();
    let mut offsets = Vec::with_capacity(p_count + 1);
    let mut frags = Vec::new();
    let mut alpha_out = vec![0.0; p_count];
    let mut base_out = vec![0.0; 3 * p_count];
    let colors = proj.color.value();
    let mut record_frag = Vec::new();
    let mut rec_pixel = Vec::new();
    let mut rec_v = Vec::new();
    let mut rec_sign = Vec::new();
    let mut rec_depth = Vec::new();
    for (pix, list) in lists.iter_mut().enumerate() {
        offsets.push(frags.len());
        let t_final = composite(list);
        alpha_out[pix] = 1.0 - t_final;
        let ts: Vec<f64> = list.iter().map(|f| f.t).collect();
        for f in list.iter() {
            let wgt = f.alpha * f.t;
            let vi = f.v as usize;
            for c in 0..3 {
                base_out[3 * pix + c] += wgt * colors.data()[3 * vi + c];
            }
        }
        let d = rays[pix];
        for j in select_medians(&ts, k) {
            let vi = list[j].v as usize;
            let mu = [mu_v.data()[3 * vi], mu_v.data()[3 * vi + 1], mu_v.data()[3 * vi + 2]];
            let n = [nrm_v.data()[3 * vi], nrm_v.data()[3 * vi + 1], nrm_v.data()[3 * vi + 2]];
            if let Some(x) = ray_plane_intersect(origin, d, mu, n) {
                record_frag.push(frags.len() + j);
                rec_pixel.push(pix);
                rec_v.push(vi);
                rec_sign.push(if dot(n, d) < 0.0 { 1.0 } else { -1.0 });
                rec_depth.push(dot(crate::camera::sub(x, origin), fwd));
            }
        }
        frags.extend_from_slice(list);
    }
    offsets.push(frags.len());
    let fragments = frags.len();

    let mut slot_of = vec![None; p_count];
    let mut geom_pixels = Vec::new();
    let mut rec_slot = Vec::with_capacity(rec_pixel.len());
    for &pix in &rec_pixel {
        if slot_of[pix].is_none() {
            slot_of[pix] = Some(geom_pixels.len());
            geom_pixels.push(pix);
        }
        rec_slot.push(slot_of[pix].expect("slot just set"));
    }
    let n_geom = geom_pixels.len();
    let mut zmin = vec![f64::INFINITY; n_geom];
    let mut zmax = vec![f64::NEG_INFINITY; n_geom];
    let mut zsum = vec![0.0; n_geom];
    let mut zcnt = vec![0usize; n_geom];
    for (r, &s) in rec_slot.iter().enumerate() {
        zmin[s] = zmin[s].min(rec_depth[r]);
        zmax[s] = zmax[s].max(rec_depth[r]);
        zsum[s] += rec_depth[r];
        zcnt[s] += 1;
    }
    let mut discontinuity = vec![false; p_count];
    for (s, &pix) in geom_pixels.iter().enumerate() {
        let mean = zsum[s] / zcnt[s] as f64;
        discontinuity[pix] = (zmax[s] - zmin[s]) > DISCONTINUITY * mean;
    }
    let valid: Vec<bool> = (0..p_count)
        .map(|pix| alpha_out[pix] >= ALPHA_VALID && slot_of[pix].is_some())
        .collect();

    let record_weights: Vec<f64> = record_frag.iter().map(|&f| frags[f].alpha * frags[f].t).collect();
    let mut packed = base_out;
    packed.extend_from_slice(&alpha_out);
    packed.extend_from_slice(&record_weights);
    let n_rec = record_frag.len();
    let op = BlendOp {
        width: w,
        offsets,
        frags,
        record_frag,
    };
    let out = tape.custom(
        Box::new(op),
        &[proj.mean2d, proj.conic, proj.opacity, proj.color],
        Tensor::new(vec![packed.len()], packed)?,
    );
    let base = out.range(0, &[p_count, 3])?;
    let alpha = out.range(3 * p_count, &[p_count, 1])?;
    let wr = out.range(4 * p_count, &[n_rec, 1])?;

    let mu_r = proj.mu.gather_rows(&rec_v)?;
    let n_r = proj.normal.gather_rows(&rec_v)?;
    let d_r = tape.constant(Tensor::new(
        vec![n_rec, 3],
        rec_pixel.iter().flat_map(|&p| rays[p]).collect(),
    )?);
    let o = tape.constant(Tensor::vector(origin.to_vec()));
    let t = mu_r.sub(o)?.dot_last(n_r)?.div(d_r.dot_last(n_r)?)?;
    let x = d_r.mul(t)?.add(o)?;
    let den = wr.scatter_rows(&rec_slot, n_geom)?;
    let points = wr.mul(x)?.scatter_rows(&rec_slot, n_geom)?.div(den)?;
    let sign = tape.constant(Tensor::new(vec![n_rec, 1], rec_sign)?);
    let normals = wr
        .mul(n_r.mul(sign)?)?
        .scatter_rows(&rec_slot, n_geom)?
        .normalize_last()?;
    let gaussian = rec_v.iter().map(|&vi| proj.vis[vi]).collect();

    Ok(Rendered {
        width: w,
        height: h,
        origin,
        rays,
        base,
        alpha,
        records: Records {
            pixel: rec_pixel,
            slot: rec_slot,
            gaussian,
            x,
            w: wr,
        },
        geom_pixels,
        slot_of,
        points,
        normals,
        valid,
        discontinuity,
        visible: v,
        fragments,
    })
}

/// One median record in value form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianRecord {
    pub gaussian: usize,
    pub weight: f64,
    pub point: Vec3,
}

/// Value-only render result.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub base: Image,
    pub alpha: Vec<f64>,
    pub raydir: Vec<Vec3>,
    pub pointmap: Vec<Option<Vec3>>,
    pub normalmap: Vec<Option<Vec3>>,
    pub medians: Vec<Vec<MedianRecord>>,
    pub valid: Vec<bool>,
    pub discontinuity: Vec<bool>,
}

pub fn render(gaussians: &Gaussians, cam: &Camera, k: usize) -> Result<RenderOutput> {
    let tape = Tape::new();
    let r = render_vars(&tape, &gaussians.constants(&tape), cam, k)?;
    Ok(RenderOutput::from_rendered(&r))
}

impl RenderOutput {
    pub fn from_rendered(r: &Rendered<'_>) -> RenderOutput {
        let mut medians = vec![Vec::new(); r.pixels()];
        let x = r.records.x.value();
        let w = r.records.w.value();
        for (i, &pix) in r.records.pixel.iter().enumerate() {
            medians[pix].push(MedianRecord {
                gaussian: r.records.gaussian[i],
                weight: w.data()[i],
                point: [x.data()[3 * i], x.data()[3 * i + 1], x.data()[3 * i + 2]],
            });
        }
        RenderOutput {
            base: r.base_image(),
            alpha: r.alpha.value().data().to_vec(),
            raydir: r.rays.clone(),
            pointmap: r.point_map(),
            normalmap: r.normal_map(),
            medians,
            valid: r.valid.clone(),
            discontinuity: r.discontinuity.clone(),
        }
    }
}
