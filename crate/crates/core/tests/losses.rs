use ibgs_autodiff::{Tape, Tensor, Var};
use ibgs_core::camera::Vec3;
use ibgs_core::imagebuf::Image;
use ibgs_core::loss::{mixed_loss, normal_loss, photo_loss, psnr, rgb_loss, ssim, total_loss, window_mask, BETA, SSIM_C1};
use ibgs_core::raster::ray_plane_intersect;
use ibgs_core::synth::{ring_cameras, trace_view, SceneKind, SynthSpec};
use ibgs_core::warp::warp_color;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, |_, _| std::array::from_fn(|_| rng.gen_range(0.0..1.0)))
}

fn scalar(v: Var) -> f64 {
    v.value().data()[0]
}

#[test]
fn constant_images_match_closed_form_ssim() {
    for (a, b) in [(0.3, 0.3), (0.3, 0.5), (0.9, 0.1), (0.0, 0.2)] {
        let x = Image::filled(16, 12, [a; 3]);
        let y = Image::filled(16, 12, [b; 3]);
        // Zero variance leaves only the luminance term.
        let want = (2.0 * a * b + SSIM_C1) / (a * a + b * b + SSIM_C1);
        assert!((ssim(&x, &y).unwrap() - want).abs() < 1e-12);

        let tape = Tape::new();
        let l = mixed_loss(&tape, tape.constant(x.to_tensor()), tape.constant(y.to_tensor()), None, 16, 12).unwrap().unwrap();
        assert!((scalar(l) - (BETA * (a - b).abs() + (1.0 - BETA) * (1.0 - want))).abs() < 1e-12);
    }
}

#[test]
fn ssim_is_one_on_identity_and_symmetric() {
    let (a, b) = (noise(1, 20, 14), noise(2, 20, 14));
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    assert!(ssim(&a, &b).unwrap() < 0.5);
    assert!(ssim(&a, &Image::filled(3, 3, [0.0; 3])).is_err());
}

#[test]
fn psnr_examples() {
    let a = Image::filled(4, 4, [0.5; 3]);
    assert_eq!(psnr(&a, &a), f64::INFINITY);
    assert!((psnr(&a, &a.map(|v| v + 0.1)) - 20.0).abs() < 1e-9);
    assert!((psnr(&a, &a.map(|v| v - 0.01)) - 40.0).abs() < 1e-9);
}

#[test]
fn window_mask_shrinks_by_the_radius() {
    let (w, h) = (30, 30);
    let mut valid = vec![true; w * h];
    valid[15 * w + 15] = false;
    let m = window_mask(&valid, w, h);
    for y in 0..h {
        for x in 0..w {
            let near = (x as i64 - 15).abs() <= 5 && (y as i64 - 15).abs() <= 5;
            assert_eq!(m[y * w + x], !near);
        }
    }
}

#[test]
fn masked_loss_ignores_masked_pixels() {
    let (w, h) = (24, 24);
    let a = noise(3, w, h);
    let mut b = a.clone();
    let mut valid = vec![true; w * h];
    for p in 0..w * 4 {
        valid[p] = false;
        b.data[3 * p] = 1.0 - b.data[3 * p];
    }
    let tape = Tape::new();
    let l = mixed_loss(&tape, tape.constant(a.to_tensor()), tape.constant(b.to_tensor()), Some(&valid), w, h).unwrap();
    assert_eq!(scalar(l.unwrap()), 0.0);
    let none = mixed_loss(&tape, tape.constant(a.to_tensor()), tape.constant(b.to_tensor()), Some(&vec![false; w * h]), w, h).unwrap();
    assert!(none.is_none());
}

#[test]
fn rgb_loss_blends_base_and_final() {
    let (w, h) = (16, 16);
    let (c, f, r) = (noise(4, w, h), noise(5, w, h), noise(6, w, h));
    let tape = Tape::new();
    let (cv, fv, rv) = (tape.constant(c.to_tensor()), tape.constant(f.to_tensor()), tape.constant(r.to_tensor()));
    let lc = scalar(mixed_loss(&tape, cv, rv, None, w, h).unwrap().unwrap());
    let lf = scalar(mixed_loss(&tape, fv, rv, None, w, h).unwrap().unwrap());
    assert_eq!(scalar(rgb_loss(&tape, cv, None, rv, 1.0, w, h).unwrap()), lc);
    assert!((scalar(rgb_loss(&tape, cv, Some(fv), rv, 0.5, w, h).unwrap()) - 0.5 * (lc + lf)).abs() < 1e-15);
    assert!((scalar(rgb_loss(&tape, cv, Some(fv), rv, 0.0, w, h).unwrap()) - lf).abs() < 1e-15);
    assert!(rgb_loss(&tape, cv, None, rv, 0.5, w, h).is_err());
}

#[test]
fn total_loss_weights_terms() {
    let tape = Tape::new();
    let t = total_loss(tape.scalar(1.0), tape.scalar(2.0), tape.scalar(4.0), 0.3, 0.03).unwrap();
    assert!((scalar(t) - (1.0 + 0.6 + 0.12)).abs() < 1e-15);
}

/// Target view and one neighbour of the textured plane, with true geometry.
struct PlanePair {
    target: ibgs_core::camera::Camera,
    src: ibgs_core::camera::Camera,
    points: Vec<Option<Vec3>>,
    image: Image,
}

fn plane_pair() -> PlanePair {
    let spec = SynthSpec {
        width: 64,
        height: 64,
        frequency: 2.0,
        ..SynthSpec::for_kind(SceneKind::TexturedPlane)
    };
    let cams = ring_cameras(&spec);
    let tv = trace_view(&spec, &cams[8], None);
    let mut src = cams[9].clone();
    src.image = Some(trace_view(&spec, &src, None).image);
    PlanePair {
        target: cams[8].clone(),
        src,
        points: tv.points,
        image: tv.image,
    }
}

/// Warps the source image through `points`; invalid where a point is missing or leaves the source.
fn warp_points(src: &ibgs_core::camera::Camera, points: &[Option<Vec3>]) -> (Image, Vec<bool>) {
    let mut img = Image::filled(src.width, src.height, [0.0; 3]);
    let mut valid = vec![false; points.len()];
    for (p, x) in points.iter().enumerate() {
        if let Some(c) = x.and_then(|x| warp_color(x, src).unwrap()) {
            img.data[3 * p..3 * p + 3].copy_from_slice(&c);
            valid[p] = true;
        }
    }
    (img, valid)
}

fn photo(warps: &[(Image, Vec<bool>)], real: &Image) -> (f64, usize) {
    let tape = Tape::new();
    let vars: Vec<(Var, &[bool])> = warps.iter().map(|(i, m)| (tape.constant(i.to_tensor()), m.as_slice())).collect();
    let (l, n) = photo_loss(&tape, &vars, tape.constant(real.to_tensor()), real.width, real.height).unwrap();
    (scalar(l), n)
}

#[test]
fn photo_loss_is_small_with_true_geometry_and_grows_when_normals_tilt() {
    let pp = plane_pair();
    let exact = warp_points(&pp.src, &pp.points);
    let (good, n) = photo(&[exact], &pp.image);
    assert_eq!(n, 1);
    assert!(good < 1e-3, "photometric loss {good}");

    // Median-plane points from a Gaussian centre 0.1 away on the surface,
    // with the learned normal tilted by 30 degrees about the y axis.
    let (s, c) = (30f64.to_radians().sin(), 30f64.to_radians().cos());
    let o = pp.target.center();
    let rays = pp.target.rays();
    let tilted: Vec<Option<Vec3>> = pp
        .points
        .iter()
        .zip(&rays)
        .map(|(x, &d)| x.and_then(|x| ray_plane_intersect(o, d, [x[0] + 0.1, x[1], 0.0], [s, 0.0, -c])))
        .collect();
    let (bad, _) = photo(&[warp_points(&pp.src, &tilted)], &pp.image);
    assert!(bad > 2.0 * good, "tilted {bad} vs exact {good}");
}

#[test]
fn photo_loss_averages_views_with_support() {
    let (w, h) = (16, 16);
    let real = noise(7, w, h);
    let a = (noise(8, w, h), vec![true; w * h]);
    let b = (noise(9, w, h), (0..w * h).map(|p| p % 2 == 0).collect::<Vec<_>>());
    let empty = (noise(10, w, h), vec![false; w * h]);
    let tape = Tape::new();
    let single = |x: &(Image, Vec<bool>)| {
        scalar(mixed_loss(&tape, tape.constant(x.0.to_tensor()), tape.constant(real.to_tensor()), Some(&x.1), w, h).unwrap().unwrap())
    };
    let (la, lb) = (single(&a), single(&b));
    assert_eq!(photo(&[a.clone()], &real), (la, 1));
    let (both, n) = photo(&[a.clone(), empty.clone(), b.clone()], &real);
    assert_eq!(n, 2);
    assert!((both - 0.5 * (la + lb)).abs() < 1e-15);
    let (swapped, _) = photo(&[b, empty.clone(), a], &real);
    assert!((swapped - both).abs() < 1e-15);
    assert_eq!(photo(&[empty], &real), (0.0, 0));
    assert_eq!(photo(&[], &real), (0.0, 0));
}

/// Points on the plane z = 0 for a camera looking at it from z = -3.
fn plane_points(w: usize, h: usize) -> (Vec<f64>, Vec<Vec3>) {
    let cam = ibgs_core::camera::Camera::look_at("p", [0.3, 0.2, -3.0], [0.0; 3], [0.0, -1.0, 0.0], w, h, 12.0);
    let rays = cam.rays();
    let o = cam.center();
    let pts = rays.iter().flat_map(|r| (0..3).map(|k| o[k] + (-o[2] / r[2]) * r[k]).collect::<Vec<_>>()).collect();
    (pts, rays)
}

fn eval_normal(normals: &[f64], points: &[f64], valid: &[bool], rays: &[Vec3], w: usize, h: usize) -> (f64, usize) {
    let tape = Tape::new();
    let n = tape.constant(Tensor::new(vec![w * h, 3], normals.to_vec()).unwrap());
    let x = tape.constant(Tensor::new(vec![w * h, 3], points.to_vec()).unwrap());
    let (l, count) = normal_loss(&tape, n, x, valid, rays, w, h).unwrap();
    (scalar(l), count)
}

#[test]
fn normal_loss_support_excludes_borders_and_holes() {
    let (w, h) = (10, 8);
    let (pts, rays) = plane_points(w, h);
    let field: Vec<f64> = (0..w * h).flat_map(|_| [0.0, 0.0, -1.0]).collect();
    let mut valid = vec![true; w * h];
    assert_eq!(eval_normal(&field, &pts, &valid, &rays, w, h), (0.0, (w - 2) * (h - 2)));
    valid[3 * w + 4] = false;
    // The hole and its four neighbours drop out.
    assert_eq!(eval_normal(&field, &pts, &valid, &rays, w, h).1, (w - 2) * (h - 2) - 5);
    assert_eq!(eval_normal(&field, &pts, &vec![false; w * h], &rays, w, h), (0.0, 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normal_loss_is_one_minus_mean_cosine(n in prop::array::uniform3(-1.0f64..1.0)) {
        let len = n.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(len > 1e-3);
        let n = n.map(|v| v / len);
        let (w, h) = (8, 8);
        let (pts, rays) = plane_points(w, h);
        let field: Vec<f64> = (0..w * h).flat_map(|_| n).collect();
        let (l, _) = eval_normal(&field, &pts, &vec![true; w * h], &rays, w, h);
        // Depth normals of z = 0 facing a camera at negative z are (0, 0, -1).
        prop_assert!((l - (1.0 + n[2])).abs() < 1e-12);
    }

    #[test]
    fn mixed_loss_is_symmetric_and_non_negative(seed in 0u64..10_000) {
        let (a, b) = (noise(seed, 12, 12), noise(seed + 1, 12, 12));
        let tape = Tape::new();
        let (x, y) = (tape.constant(a.to_tensor()), tape.constant(b.to_tensor()));
        let l1 = scalar(mixed_loss(&tape, x, y, None, 12, 12).unwrap().unwrap());
        let l2 = scalar(mixed_loss(&tape, y, x, None, 12, 12).unwrap().unwrap());
        prop_assert!(l1 > 0.0);
        prop_assert_eq!(l1, l2);
    }
}

#[test]
fn tilting_one_gaussian_normal_raises_the_rendered_photo_loss() {
    use ibgs_core::pipeline::{candidate_point_maps, forward, losses, LossWeights, Needs, ViewParams};
    use ibgs_core::raster::render;
    use ibgs_core::synth::synthesize;
    use ibgs_core::train::candidates_for;

    let spec = SynthSpec {
        width: 32,
        height: 32,
        gaussians: 900,
        ..SynthSpec::for_kind(SceneKind::TexturedPlane)
    };
    let scene = synthesize(&spec).unwrap().scene;
    let target = &scene.cameras[scene.train[4]];
    let cands = candidates_for(&scene, target, 4);
    let params = ViewParams::default();
    let photo_of = |g: &ibgs_core::scene::Gaussians| {
        let maps = candidate_point_maps(g, &cands, params.k).unwrap();
        let tape = Tape::new();
        let needs = Needs { warps: true, residual: false };
        let f = forward(&tape, &g.constants(&tape), None, target, &cands, Some(&maps), &params, needs).unwrap();
        let w = LossWeights { gamma: 1.0, lambda1: 1.0, lambda2: 0.0 };
        scalar(losses(&tape, &f, target.image.as_ref().unwrap(), &w).unwrap().photo)
    };
    let before = photo_of(&scene.gaussians);

    // Pick the Gaussian with the largest median weight at the centre pixel.
    let out = render(&scene.gaussians, target, params.k).unwrap();
    let centre = &out.medians[16 * 32 + 16];
    let pick = centre.iter().max_by(|a, b| a.weight.total_cmp(&b.weight)).unwrap().gaussian;
    let mut g = scene.gaussians.clone();
    let n = g.normal_unit(pick);
    let (s, c) = (30f64.to_radians().sin(), 30f64.to_radians().cos());
    // Rotate about the x axis, which is orthogonal to the plane normal.
    let tilted = [n[0], c * n[1] - s * n[2], s * n[1] + c * n[2]];
    g.normal.data_mut()[3 * pick..3 * pick + 3].copy_from_slice(&tilted);
    let after = photo_of(&g);
    assert!(after > before, "photo loss {before} -> {after}");
}
