//! Synthetic multi-view scenes rendered by a direct analytic ray tracer.
//! Nothing here goes through the Gaussian rasteriser.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ibgs_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{dot, normalize, sub, Camera, Vec3};
use crate::error::{Error, Result};
use crate::imagebuf::Image;
use crate::scene::{default_split, logit, quat_from_z_to, Gaussians, Scene};
use crate::sh::{self, SH_C0};

macro_rules! kebab_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => {
                        let names: Vec<&str> = $name::ALL.iter().map(|v| v.as_str()).collect();
                        Err(Error::Config(format!("unknown {} {:?} (expected one of {})", stringify!($name), s, names.join(", "))))
                    }
                }
            }
        }
    };
}

kebab_enum!(SceneKind {
    TexturedPlane => "textured-plane",
    TwoPlane => "two-plane-occlusion",
    SpecularSphere => "specular-sphere",
});

kebab_enum!(Pattern {
    Checker => "checker",
    Stripes => "stripes",
    Sine => "sine",
});

kebab_enum!(InitMode {
    Surface => "surface",
    Volume => "volume",
});

/// Blinn-Phong highlight added on the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Specular {
    pub strength: f64,
    pub shininess: f64,
    /// Direction towards the light (normalised on use).
    pub light: Vec3,
}

impl Default for Specular {
    fn default() -> Self {
        Specular {
            strength: 0.6,
            shininess: 40.0,
            light: [0.4, 0.8, -0.6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub kind: SceneKind,
    pub pattern: Pattern,
    /// Pattern periods across the texture domain.
    pub frequency: f64,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length as a multiple of the image width.
    pub focal_scale: f64,
    /// Camera distance from the origin.
    pub radius: f64,
    /// Total horizontal arc covered by the camera ring, in degrees.
    pub arc_degrees: f64,
    /// Amplitude of the smooth per-view exposure perturbation (0 disables it).
    pub jitter: f64,
    pub specular: Specular,
    pub gaussians: usize,
    pub init: InitMode,
    pub sh_degree: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            kind: SceneKind::TexturedPlane,
            pattern: Pattern::Sine,
            frequency: 4.0,
            views: 20,
            width: 64,
            height: 64,
            focal_scale: 1.2,
            radius: 3.0,
            arc_degrees: 40.0,
            jitter: 0.0,
            specular: Specular::default(),
            gaussians: 1000,
            init: InitMode::Surface,
            sh_degree: 2,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Defaults suited to `kind` (the sphere uses a full ring closer in).
    pub fn for_kind(kind: SceneKind) -> Self {
        let mut s = SynthSpec {
            kind,
            ..SynthSpec::default()
        };
        if kind == SceneKind::SpecularSphere {
            s.radius = 2.5;
            s.arc_degrees = 360.0;
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.views < 3 {
            return bad(format!("need at least 3 views, got {}", self.views));
        }
        if self.width < 16 || self.height < 16 {
            return bad(format!("resolution must be at least 16x16, got {}x{}", self.width, self.height));
        }
        if self.sh_degree > sh::MAX_DEGREE {
            return bad(format!("SH degree {} exceeds {}", self.sh_degree, sh::MAX_DEGREE));
        }
        if !(self.radius > 0.0 && self.focal_scale > 0.0 && self.frequency > 0.0) {
            return bad("radius, focal scale and frequency must be positive".into());
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return bad(format!("jitter must be in [0, 0.5), got {}", self.jitter));
        }
        if self.gaussians == 0 {
            return bad("need at least one gaussian".into());
        }
        Ok(())
    }
}

/// Half-extent of the back plane (z = 0).
pub const PLANE_EXTENT: f64 = 2.0;
/// Depth and half-extent of the occluding square.
pub const FRONT_Z: f64 = -0.8;
pub const FRONT_EXTENT: f64 = 0.35;
pub const SPHERE_RADIUS: f64 = 0.6;

/// A ray-surface hit of the analytic tracer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    /// Unit normal facing the ray origin.
    pub normal: Vec3,
    pub albedo: [f64; 3],
    pub surface: usize,
}

fn pattern_value(pattern: Pattern, freq: f64, u: f64, v: f64, channel: usize) -> f64 {
    let (lo, hi) = (0.15, 0.75);
    let phase = [0.0, 1.3, 2.6][channel];
    match pattern {
        Pattern::Checker => {
            let even = ((freq * u).floor() as i64 + (freq * v).floor() as i64).rem_euclid(2) == 0;
            let tint = [[0.75, 0.45, 0.2], [0.2, 0.35, 0.7]];
            tint[usize::from(!even)][channel]
        }
        Pattern::Stripes => {
            let even = ((freq * u).floor() as i64).rem_euclid(2) == 0;
            if even { [0.7, 0.6, 0.25][channel] } else { [0.2, 0.25, 0.55][channel] }
        }
        Pattern::Sine => {
            let s = (2.0 * PI * freq * u + phase).sin() * (2.0 * PI * freq * v + 0.5 * phase).cos();
            0.5 * (lo + hi) + 0.5 * (hi - lo) * s
        }
    }
}

fn texture(pattern: Pattern, freq: f64, u: f64, v: f64) -> [f64; 3] {
    std::array::from_fn(|c| pattern_value(pattern, freq, u, v, c))
}

fn plane_hit(o: Vec3, d: Vec3, z: f64, extent: f64, surface: usize, pattern: Pattern, freq: f64) -> Option<Hit> {
    if d[2].abs() < 1e-12 {
        return None;
    }
    let t = (z - o[2]) / d[2];
    if t <= 0.0 {
        return None;
    }
    let p = [o[0] + t * d[0], o[1] + t * d[1], z];
    if p[0].abs() > extent || p[1].abs() > extent {
        return None;
    }
    let u = (p[0] + extent) / (2.0 * extent);
    let v = (p[1] + extent) / (2.0 * extent);
    let n = if d[2] > 0.0 { [0.0, 0.0, -1.0] } else { [0.0, 0.0, 1.0] };
    Some(Hit {
        t,
        point: p,
        normal: n,
        albedo: texture(pattern, freq, u, v),
        surface,
    })
}

fn sphere_uv(n: Vec3) -> (f64, f64) {
    (n[2].atan2(n[0]) / (2.0 * PI) + 0.5, n[1].clamp(-1.0, 1.0).acos() / PI)
}

fn sphere_hit(o: Vec3, d: Vec3, pattern: Pattern, freq: f64) -> Option<Hit> {
    let b = dot(o, d);
    let c = dot(o, o) - SPHERE_RADIUS * SPHERE_RADIUS;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    if t <= 0.0 {
        return None;
    }
    let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
    let n = p.map(|v| v / SPHERE_RADIUS);
    let (u, v) = sphere_uv(n);
    Some(Hit {
        t,
        point: p,
        normal: n,
        albedo: texture(pattern, freq, u, v),
        surface: 0,
    })
}

/// Closest surface hit of the ray `o + t d` (unit `d`).
pub fn trace(spec: &SynthSpec, o: Vec3, d: Vec3) -> Option<Hit> {
    let (pat, f) = (spec.pattern, spec.frequency);
    match spec.kind {
        SceneKind::TexturedPlane => plane_hit(o, d, 0.0, PLANE_EXTENT, 0, pat, f),
        SceneKind::TwoPlane => {
            let back = plane_hit(o, d, 0.0, PLANE_EXTENT, 0, pat, f);
            let front = plane_hit(o, d, FRONT_Z, FRONT_EXTENT, 1, Pattern::Checker, 3.0);
            match (back, front) {
                (Some(b), Some(fr)) => Some(if fr.t < b.t { fr } else { b }),
                (b, fr) => b.or(fr),
            }
        }
        SceneKind::SpecularSphere => sphere_hit(o, d, pat, f),
    }
}

/// Outgoing radiance towards `o` at a hit, before exposure.
pub fn shade(spec: &SynthSpec, hit: &Hit, o: Vec3) -> [f64; 3] {
    if spec.kind != SceneKind::SpecularSphere {
        return hit.albedo;
    }
    let l = normalize(spec.specular.light);
    let v = normalize(sub(o, hit.point));
    let h = normalize([l[0] + v[0], l[1] + v[1], l[2] + v[2]]);
    let diffuse = 0.45 + 0.55 * dot(hit.normal, l).max(0.0);
    let spec_term = spec.specular.strength * dot(hit.normal, h).max(0.0).powf(spec.specular.shininess);
    hit.albedo.map(|a| (a * diffuse + spec_term).clamp(0.0, 1.0))
}

/// Heading of ring camera `i` around the y axis, in radians.
pub fn ring_angle(spec: &SynthSpec, i: usize) -> f64 {
    let n = spec.views;
    if spec.arc_degrees >= 360.0 {
        2.0 * PI * i as f64 / n as f64
    } else {
        let half = 0.5 * spec.arc_degrees.to_radians();
        -half + 2.0 * half * i as f64 / (n - 1) as f64
    }
}

/// Per-view exposure `(gain, offset)` per channel. Varies smoothly with the
/// camera heading, so neighbouring views are exposed alike.
pub fn exposure_jitter(spec: &SynthSpec, view: usize) -> ([f64; 3], [f64; 3]) {
    let a = spec.jitter;
    let phase = ring_angle(spec, view);
    let gain = std::array::from_fn(|c| 1.0 + a * (phase + 0.4 * c as f64).sin());
    let offset = std::array::from_fn(|c| 0.1 * a * (phase + 0.4 * c as f64).cos());
    (gain, offset)
}

pub fn ring_cameras(spec: &SynthSpec) -> Vec<Camera> {
    let focal = spec.focal_scale * spec.width as f64;
    (0..spec.views)
        .map(|i| {
            let theta = ring_angle(spec, i);
            let height = if spec.arc_degrees >= 360.0 { 0.35 } else { 0.1 } * spec.radius;
            let eye = [spec.radius * theta.sin(), height, -spec.radius * theta.cos()];
            Camera::look_at(&format!("view{:03}", i), eye, [0.0; 3], [0.0, 1.0, 0.0], spec.width, spec.height, focal)
        })
        .collect()
}

/// Traced view: image plus analytic geometry per pixel.
#[derive(Debug, Clone)]
pub struct TracedView {
    pub image: Image,
    pub depth: Vec<Option<f64>>,
    pub points: Vec<Option<Vec3>>,
    pub surface: Vec<Option<usize>>,
}

/// Traces `cam` (unjittered unless `view` is given).
pub fn trace_view(spec: &SynthSpec, cam: &Camera, view: Option<usize>) -> TracedView {
    let o = cam.center();
    let (gain, offset) = match view {
        Some(i) if spec.jitter > 0.0 => exposure_jitter(spec, i),
        _ => ([1.0; 3], [0.0; 3]),
    };
    let mut image = Image::filled(cam.width, cam.height, [0.0; 3]);
    let mut depth = vec![None; cam.pixels()];
    let mut points = vec![None; cam.pixels()];
    let mut surface = vec![None; cam.pixels()];
    for (p, d) in cam.rays().into_iter().enumerate() {
        if let Some(hit) = trace(spec, o, d) {
            let c = shade(spec, &hit, o);
            let c: [f64; 3] = std::array::from_fn(|k| (gain[k] * c[k] + offset[k]).clamp(0.0, 1.0));
            image.data[3 * p..3 * p + 3].copy_from_slice(&c);
            depth[p] = Some(cam.to_camera(hit.point)[2]);
            points[p] = Some(hit.point);
            surface[p] = Some(hit.surface);
        }
    }
    TracedView {
        image,
        depth,
        points,
        surface,
    }
}

pub struct Synthesized {
    pub scene: Scene,
    pub views: Vec<TracedView>,
}

/// Surface samples `(point, outward normal facing the cameras, albedo, spacing)`.
fn surface_samples(spec: &SynthSpec, n: usize) -> Vec<(Vec3, Vec3, [f64; 3], f64)> {
    let mut out = Vec::with_capacity(n);
    let grid = |count: usize, z: f64, extent: f64, pat: Pattern, freq: f64, out: &mut Vec<_>| {
        let side = (count as f64).sqrt().floor().max(1.0) as usize;
        let step = 2.0 * extent / side as f64;
        for j in 0..side {
            for i in 0..side {
                let x = -extent + (i as f64 + 0.5) * step;
                let y = -extent + (j as f64 + 0.5) * step;
                let u = (x + extent) / (2.0 * extent);
                let v = (y + extent) / (2.0 * extent);
                out.push(([x, y, z], [0.0, 0.0, -1.0], texture(pat, freq, u, v), step));
            }
        }
    };
    match spec.kind {
        SceneKind::TexturedPlane => grid(n, 0.0, PLANE_EXTENT, spec.pattern, spec.frequency, &mut out),
        SceneKind::TwoPlane => {
            let front_share = ((FRONT_EXTENT / PLANE_EXTENT).powi(2) * n as f64).ceil().max(4.0) as usize;
            grid(n.saturating_sub(front_share), 0.0, PLANE_EXTENT, spec.pattern, spec.frequency, &mut out);
            grid(front_share, FRONT_Z, FRONT_EXTENT, Pattern::Checker, 3.0, &mut out);
        }
        SceneKind::SpecularSphere => {
            let golden = PI * (3.0 - 5f64.sqrt());
            let spacing = (4.0 * PI / n as f64).sqrt() * SPHERE_RADIUS;
            for i in 0..n {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let phi = golden * i as f64;
                let nrm = [r * phi.cos(), y, r * phi.sin()];
                let (u, v) = sphere_uv(nrm);
                out.push((
                    nrm.map(|c| c * SPHERE_RADIUS),
                    nrm,
                    texture(spec.pattern, spec.frequency, u, v),
                    spacing,
                ));
            }
        }
    }
    out
}

fn bounds(spec: &SynthSpec) -> (Vec3, Vec3) {
    match spec.kind {
        SceneKind::TexturedPlane => ([-PLANE_EXTENT, -PLANE_EXTENT, -1.0], [PLANE_EXTENT, PLANE_EXTENT, 0.1]),
        SceneKind::TwoPlane => ([-PLANE_EXTENT, -PLANE_EXTENT, FRONT_Z - 0.5], [PLANE_EXTENT, PLANE_EXTENT, 0.1]),
        SceneKind::SpecularSphere => ([-SPHERE_RADIUS; 3], [SPHERE_RADIUS; 3]),
    }
}

/// Initial Gaussians: flat disks on the true surface, or isotropic blobs
/// scattered uniformly through the bounding volume.
pub fn init_gaussians(spec: &SynthSpec, rng: &mut impl Rng) -> Result<Gaussians> {
    let nb = sh::coeff_count(spec.sh_degree);
    let (mut mu, mut quat, mut ls, mut op, mut shc, mut nrm) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    let push_sh = |c: [f64; 3], shc: &mut Vec<f64>| {
        let mut row = vec![0.0; nb];
        for k in 0..3 {
            row[k] = (c[k] - 0.5) / SH_C0;
        }
        shc.extend(row);
    };
    match spec.init {
        InitMode::Surface => {
            for (p, n, c, spacing) in surface_samples(spec, spec.gaussians) {
                mu.extend(p);
                quat.extend(quat_from_z_to(n));
                let s = (0.6 * spacing).ln();
                ls.extend([s, s, (0.02 * spacing).ln()]);
                op.push(logit(0.95));
                push_sh(c, &mut shc);
                nrm.extend(n);
            }
        }
        InitMode::Volume => {
            let (lo, hi) = bounds(spec);
            let vol: f64 = (0..3).map(|k| (hi[k] - lo[k]).max(0.05)).product();
            let spacing = (vol / spec.gaussians as f64).cbrt();
            for _ in 0..spec.gaussians {
                mu.extend(std::array::from_fn::<f64, 3, _>(|k| rng.gen_range(lo[k]..=hi[k])));
                let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
                let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6);
                quat.extend(q.map(|v| v / qn));
                ls.extend([(0.5 * spacing).ln(); 3]);
                op.push(logit(0.1));
                push_sh(std::array::from_fn(|_| rng.gen_range(0.2..0.7)), &mut shc);
                nrm.extend([0.0, 0.0, 1.0]);
            }
        }
    }
    let n = op.len();
    let mut g = Gaussians {
        sh_degree: spec.sh_degree,
        mu: Tensor::new(vec![n, 3], mu)?,
        quat: Tensor::new(vec![n, 4], quat)?,
        log_scale: Tensor::new(vec![n, 3], ls)?,
        opacity_logit: Tensor::new(vec![n, 1], op)?,
        sh: Tensor::new(vec![n, nb], shc)?,
        normal: Tensor::new(vec![n, 3], nrm)?,
    };
    if spec.init == InitMode::Volume {
        let eye = ring_cameras(spec)[0].center();
        g.init_normals(eye)?;
    }
    Ok(g)
}

pub fn synthesize(spec: &SynthSpec) -> Result<Synthesized> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cameras = ring_cameras(spec);
    let mut views = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter_mut().enumerate() {
        let v = trace_view(spec, cam, Some(i));
        cam.image = Some(v.image.clone());
        views.push(v);
    }
    let gaussians = init_gaussians(spec, &mut rng)?;
    let (train, test) = default_split(cameras.len());
    let scene = Scene {
        gaussians,
        cameras,
        train,
        test,
    };
    scene.validate()?;
    Ok(Synthesized { scene, views })
}
