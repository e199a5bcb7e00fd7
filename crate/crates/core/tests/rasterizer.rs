mod common;

use common::{axis_camera, build, close, G};
use ibgs_core::raster::{blend_pixel, project_gaussian, render, select_medians, ColoredSplat, Splat2D, ALPHA_MAX};
use proptest::prelude::*;

#[test]
fn on_axis_projection() {
    let cam = axis_camera(200, 200, 100.0);
    let mut g = G::at([0.0, 0.0, 1.0]);
    g.scale = [0.01; 3];
    let s = project_gaussian(&build(&[g]), 0, &cam).unwrap().unwrap();
    assert!(close(s.mean[0], cam.cx, 1e-12) && close(s.mean[1], cam.cy, 1e-12));
    assert!(close(s.depth, 1.0, 1e-15));
    // (f s / z)^2 = 1 plus the 0.3 px^2 dilation.
    assert!(close(s.cov[0], 1.3, 1e-12), "{:?}", s.cov);
    assert!(close(s.cov[2], 1.3, 1e-12));
    assert!(close(s.cov[1], 0.0, 1e-15));
}

#[test]
fn behind_camera_is_culled() {
    let cam = axis_camera(16, 16, 10.0);
    let gs = build(&[G::at([0.0, 0.0, -1.0]), G::at([0.0, 0.0, 0.005])]);
    assert!(project_gaussian(&gs, 0, &cam).unwrap().is_none());
    assert!(project_gaussian(&gs, 1, &cam).unwrap().is_none());
}

#[test]
fn projection_is_invariant_to_a_shared_translation() {
    let cam = axis_camera(32, 24, 30.0);
    let mut g = G::at([0.3, -0.2, 2.5]);
    g.quat = [0.9, 0.2, -0.3, 0.1];
    g.scale = [0.2, 0.05, 0.1];
    let a = project_gaussian(&build(&[g]), 0, &cam).unwrap().unwrap();

    let shift = [1.5, -2.0, 4.0];
    let mut moved = cam.clone();
    // With identity rotation, moving the centre by `shift` means t -= shift.
    for k in 0..3 {
        moved.translation[k] -= shift[k];
        g.mu[k] += shift[k];
    }
    let b = project_gaussian(&build(&[g]), 0, &moved).unwrap().unwrap();
    for k in 0..2 {
        assert!(close(a.mean[k], b.mean[k], 1e-9));
    }
    for k in 0..3 {
        assert!(close(a.cov[k], b.cov[k], 1e-9));
    }
    assert!(close(a.depth, b.depth, 1e-12));
}

fn splat_at(x: f64, y: f64, depth: f64, opacity: f64, color: [f64; 3]) -> ColoredSplat {
    ColoredSplat {
        splat: Splat2D {
            index: 0,
            mean: [x, y],
            cov: [1.0, 0.0, 1.0],
            depth,
        },
        opacity,
        color,
    }
}

#[test]
fn opaque_splat_is_clamped() {
    let b = blend_pixel(2.0, 3.0, &[splat_at(2.0, 3.0, 1.0, 1.0, [1.0, 0.0, 0.0])]);
    assert_eq!(b.color, [ALPHA_MAX, 0.0, 0.0]);
    assert!(close(b.alpha, 0.99, 1e-15));
}

#[test]
fn two_half_splats() {
    let a = [0.2, 0.4, 0.6];
    let c = [1.0, 0.0, 0.5];
    let b = blend_pixel(0.0, 0.0, &[splat_at(0.0, 0.0, 1.0, 0.5, a), splat_at(0.0, 0.0, 2.0, 0.5, c)]);
    for k in 0..3 {
        assert!(close(b.color[k], 0.5 * a[k] + 0.25 * c[k], 1e-15));
    }
    assert_eq!(b.weights, vec![0.5, 0.25]);
    assert_eq!(b.transmittance, vec![1.0, 0.5]);
}

#[test]
fn empty_pixel_is_black() {
    let b = blend_pixel(0.0, 0.0, &[]);
    assert_eq!(b.color, [0.0; 3]);
    assert_eq!(b.alpha, 0.0);
    assert!(b.weights.is_empty());
}

#[test]
fn median_windows() {
    let t = [1.0, 0.8, 0.6, 0.4, 0.2, 0.1];
    assert_eq!(select_medians(&t, 3), 2..5);
    assert_eq!(select_medians(&t, 1), 3..4);
    assert_eq!(select_medians(&t, 4), 2..6);
    assert_eq!(select_medians(&[0.4, 0.2, 0.1, 0.05], 2), 0..2);
    assert_eq!(select_medians(&[1.0, 0.9, 0.8, 0.7], 2), 2..4);
    assert_eq!(select_medians(&[1.0, 0.3], 4), 0..2);
    assert_eq!(select_medians(&[], 4), 0..0);
}

#[test]
fn principal_ray_is_the_optical_axis() {
    let cam = axis_camera(9, 7, 20.0);
    let out = render(&build(&[]), &cam, 4).unwrap();
    let d = out.raydir[3 * 9 + 4];
    assert!(close(d[0], 0.0, 1e-15) && close(d[1], 0.0, 1e-15) && close(d[2], 1.0, 1e-15));
    assert!(out.base.data.iter().all(|&v| v == 0.0));
    assert!(out.pointmap.iter().all(Option::is_none));
}

/// A fronto-parallel layer of flat Gaussians on the plane z = `z`.
fn plane_layer(z: f64) -> Vec<G> {
    let mut gs = Vec::new();
    for i in -6..=6 {
        for j in -6..=6 {
            let mut g = G::at([i as f64 * 0.1, j as f64 * 0.1, z]);
            g.scale = [0.08, 0.08, 1e-4];
            g.opacity = 0.7;
            g.color = [0.3, 0.6, 0.2];
            gs.push(g);
        }
    }
    gs
}

#[test]
fn flat_fronto_layer_has_camera_facing_normals_and_planar_points() {
    let cam = axis_camera(24, 24, 40.0);
    let out = render(&build(&plane_layer(2.0)), &cam, 4).unwrap();
    let mut hits = 0;
    for i in 0..cam.pixels() {
        if let Some(p) = out.pointmap[i] {
            hits += 1;
            assert!(close(p[2], 2.0, 1e-9), "point {:?}", p);
            let n = out.normalmap[i].unwrap();
            assert!(close(n[0], 0.0, 1e-12) && close(n[1], 0.0, 1e-12) && close(n[2], -1.0, 1e-12));
        }
    }
    assert!(hits > cam.pixels() / 2);
    // Uniform colour everywhere the layer is dense enough to saturate.
    let centre = out.base.get(12, 12);
    let a = out.alpha[12 * 24 + 12];
    for k in 0..3 {
        assert!(close(centre[k], a * [0.3, 0.6, 0.2][k], 1e-12));
    }
}

#[test]
fn medians_lie_on_their_gaussian_planes() {
    let cam = axis_camera(16, 16, 30.0);
    let mut gs = plane_layer(2.0);
    gs.extend(plane_layer(2.6));
    let out = render(&build(&gs), &cam, 3).unwrap();
    for recs in &out.medians {
        assert!(recs.len() <= 3);
        for r in recs {
            let z = gs[r.gaussian].mu[2];
            assert!(close(r.point[2], z, 1e-9));
            assert!(r.weight > 0.0 && r.weight <= 1.0);
        }
    }
}

fn arb_splat() -> impl Strategy<Value = ColoredSplat> {
    (
        -2.0f64..2.0,
        -2.0f64..2.0,
        0.3f64..3.0,
        -0.9f64..0.9,
        0.3f64..3.0,
        0.0f64..1.0,
        prop::array::uniform3(0.0f64..1.0),
    )
        .prop_map(|(x, y, a, r, c, o, col)| {
            let b = r * (a * c).sqrt();
            ColoredSplat {
                splat: Splat2D {
                    index: 0,
                    mean: [x, y],
                    cov: [a, b, c],
                    depth: 1.0,
                },
                opacity: o,
                color: col,
            }
        })
}

proptest! {
    #[test]
    fn blending_is_a_sub_convex_combination(splats in prop::collection::vec(arb_splat(), 0..12)) {
        let b = blend_pixel(0.0, 0.0, &splats);
        let total: f64 = b.weights.iter().sum();
        prop_assert!(total <= 1.0 + 1e-12);
        prop_assert!(close(total, b.alpha, 1e-12));
        for w in b.transmittance.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        for k in 0..3 {
            let hi = splats.iter().map(|s| s.color[k]).fold(0.0, f64::max);
            prop_assert!(b.color[k] >= 0.0 && b.color[k] <= hi * total + 1e-12);
        }
    }
}
