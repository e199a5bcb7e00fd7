//! One forward pass for a target view: render, warp candidate views, select
//! visible ones, optionally correct exposure, then predict the residual.

use ibgs_autodiff::{Tape, Var};

use crate::camera::{Camera, Vec3};
use crate::error::{Error, Result};
use crate::exposure::{fit_affine, ExposureAffine};
use crate::imagebuf::Image;
use crate::loss;
use crate::net::{compose_final, NetVars};
use crate::raster::{render, render_vars, GaussianVars, Rendered};
use crate::scene::Gaussians;
use crate::warp::{aggregate_warped, camera_features_var, depth_consistent, first_passing, mask_var, Warped};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewParams {
    /// Median records per pixel.
    pub k: usize,
    /// Candidate source views.
    pub s: usize,
    /// Views kept per pixel.
    pub m: usize,
    /// Relative depth tolerance of the visibility check.
    pub tau: f64,
    pub exposure: bool,
}

impl Default for ViewParams {
    fn default() -> Self {
        ViewParams {
            k: 4,
            s: 4,
            m: 3,
            tau: 0.001,
            exposure: false,
        }
    }
}

impl ViewParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.s < self.m {
            return Err(Error::Config(format!("need K >= 1 and S >= M >= 1 (K={}, S={}, M={})", self.k, self.s, self.m)));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Config(format!("tau must be non-negative, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Which parts of the pipeline to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Needs {
    pub warps: bool,
    pub residual: bool,
}

pub struct Forward<'t> {
    pub rendered: Rendered<'t>,
    /// Base colour after exposure correction (the rendered colour when it is off).
    pub color: Var<'t>,
    pub exposure: Option<ExposureAffine>,
    /// One entry per candidate, in ranked order (see [`rank_candidates`]).
    pub warps: Vec<Warped<'t>>,
    /// Per candidate: pixels at which the view is among the selected ones.
    pub selected: Vec<Vec<bool>>,
    pub pooled: Option<Var<'t>>,
    pub residual: Option<Var<'t>>,
    pub final_color: Option<Var<'t>>,
}

/// Scatters the compact `[G, 3]` geometry maps to `[P, 3]`.
pub fn full_map<'t>(r: &Rendered<'t>, compact: Var<'t>) -> Result<Var<'t>> {
    Ok(compact.scatter_rows(&r.geom_pixels, r.pixels())?)
}

/// Renders each candidate's world point map (no gradients).
pub fn candidate_point_maps(g: &Gaussians, candidates: &[&Camera], k: usize) -> Result<Vec<Vec<Option<Vec3>>>> {
    candidates.iter().map(|c| Ok(render(g, c, k)?.pointmap)).collect()
}

/// Candidate indices by centre distance to `target`, ties broken by id.
pub fn rank_candidates(target: &Camera, candidates: &[&Camera]) -> Vec<usize> {
    let o = target.center();
    let dist = |c: &Camera| {
        let p = c.center();
        (0..3).map(|k| (p[k] - o[k]).powi(2)).sum::<f64>()
    };
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (candidates[a], candidates[b]);
        dist(ca).total_cmp(&dist(cb)).then_with(|| ca.id.cmp(&cb.id)).then(a.cmp(&b))
    });
    order
}

/// Runs the pipeline for `target`. `point_maps` holds one map per candidate
/// and is only consulted when `tau` is finite. Candidates are ranked first,
/// so the result does not depend on the order they are passed in.
#[allow(clippy::too_many_arguments)]
pub fn forward<'t>(
    tape: &'t Tape,
    g: &GaussianVars<'t>,
    net: Option<&NetVars<'t>>,
    target: &Camera,
    candidates: &[&Camera],
    point_maps: Option<&[Vec<Option<Vec3>>]>,
    params: &ViewParams,
    needs: Needs,
) -> Result<Forward<'t>> {
    let order = rank_candidates(target, candidates);
    let candidates: Vec<&Camera> = order.iter().map(|&i| candidates[i]).collect();
    let point_maps: Option<Vec<&Vec<Option<Vec3>>>> = point_maps.map(|m| order.iter().map(|&i| &m[i]).collect());
    let rendered = render_vars(tape, g, target, params.k)?;
    let p = rendered.pixels();
    let need_warps = needs.warps || needs.residual || params.exposure;
    let mut warps = Vec::new();
    let mut passes = Vec::new();
    if need_warps {
        let target_points = rendered.point_map();
        for (ci, cand) in candidates.iter().enumerate() {
            let w = aggregate_warped(tape, &rendered, cand)?;
            let pass: Vec<bool> = if params.tau == f64::INFINITY {
                w.valid.clone()
            } else {
                let maps = point_maps.as_ref().ok_or_else(|| Error::Invalid("visibility check needs candidate point maps".into()))?;
                (0..p)
                    .map(|i| {
                        w.valid[i]
                            && target_points[i].is_some_and(|x| depth_consistent(target, x, cand, &maps[ci], params.tau))
                    })
                    .collect()
            };
            warps.push(w);
            passes.push(pass);
        }
    }
    let chosen = first_passing(&passes, p, params.m);
    let mut selected = vec![vec![false; p]; passes.len()];
    for (i, views) in chosen.iter().enumerate() {
        for &v in views {
            selected[v][i] = true;
        }
    }

    let mut color = rendered.base;
    let mut exposure = None;
    if params.exposure && !warps.is_empty() {
        let base = rendered.base_image();
        let reference = Image::from_tensor(target.width, target.height, &warps[0].color.value())?;
        let fit = fit_affine(&base, &reference, &passes[0]);
        color = fit.apply_var(tape, color)?;
        exposure = Some(fit);
    }

    let (mut pooled, mut residual, mut final_color) = (None, None, None);
    if let (true, Some(net)) = (needs.residual, net) {
        let mut feats = Vec::with_capacity(warps.len());
        for (ci, w) in warps.iter().enumerate() {
            let mask = &selected[ci];
            let dc = w.color.sub(color)?.mul(mask_var(tape, mask)?)?;
            let dd = camera_features_var(tape, &rendered, target, candidates[ci], mask)?;
            feats.push(Var::concat_last(&[dc, dd])?);
        }
        let f = net.extract_and_pool(tape, &feats, &selected, p)?;
        let rays = tape.constant(rendered.rays_tensor());
        let dres = net.decode(color, rays, f, target.height, target.width)?;
        final_color = Some(compose_final(color, dres)?);
        pooled = Some(f);
        residual = Some(dres);
    }
    Ok(Forward {
        rendered,
        color,
        exposure,
        warps,
        selected,
        pooled,
        residual,
        final_color,
    })
}

/// Loss weights for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

pub struct Losses<'t> {
    pub total: Var<'t>,
    pub rgb: Var<'t>,
    pub photo: Var<'t>,
    pub normal: Var<'t>,
    pub photo_views: usize,
    pub normal_pixels: usize,
}

/// Evaluates the total objective against the target's ground-truth image.
pub fn losses<'t>(tape: &'t Tape, f: &Forward<'t>, real: &Image, w: &LossWeights) -> Result<Losses<'t>> {
    let r = &f.rendered;
    let (width, height) = (r.width, r.height);
    let gt = tape.constant(real.to_tensor());
    let rgb = loss::rgb_loss(tape, f.color, f.final_color, gt, w.gamma, width, height)?;
    let (photo, photo_views) = if w.lambda1 > 0.0 {
        let pairs: Vec<(Var<'t>, &[bool])> = f
            .warps
            .iter()
            .zip(&f.selected)
            .map(|(wp, m)| (wp.color, m.as_slice()))
            .collect();
        loss::photo_loss(tape, &pairs, gt, width, height)?
    } else {
        (tape.scalar(0.0), 0)
    };
    let (normal, normal_pixels) = if w.lambda2 > 0.0 {
        let n = full_map(r, r.normals)?;
        let x = full_map(r, r.points)?;
        loss::normal_loss(tape, n, x, &r.valid, &r.rays, width, height)?
    } else {
        (tape.scalar(0.0), 0)
    };
    let total = loss::total_loss(rgb, photo, normal, w.lambda1, w.lambda2)?;
    Ok(Losses {
        total,
        rgb,
        photo,
        normal,
        photo_views,
        normal_pixels,
    })
}

/// Value-level images for one view: base, residual and final colour.
pub struct Decomposition {
    pub base: Image,
    pub residual: Image,
    pub final_image: Image,
}

pub fn decompose(
    g: &Gaussians,
    net: &crate::net::ResidualNet,
    target: &Camera,
    candidates: &[&Camera],
    params: &ViewParams,
) -> Result<Decomposition> {
    let maps = if params.tau == f64::INFINITY {
        None
    } else {
        Some(candidate_point_maps(g, candidates, params.k)?)
    };
    let tape = Tape::new();
    let gv = g.constants(&tape);
    let nv = net.constants(&tape);
    let f = forward(
        &tape,
        &gv,
        Some(&nv),
        target,
        candidates,
        maps.as_deref(),
        params,
        Needs {
            warps: true,
            residual: true,
        },
    )?;
    let to_img = |v: Var<'_>| Image::from_tensor(target.width, target.height, &v.value());
    let residual = f.residual.map(to_img).unwrap_or_else(|| Ok(Image::filled(target.width, target.height, [0.0; 3])))?;
    let base = to_img(f.color)?;
    let final_image = match f.final_color {
        Some(v) => to_img(v)?,
        None => base.clone(),
    };
    Ok(Decomposition {
        base,
        residual,
        final_image,
    })
}
