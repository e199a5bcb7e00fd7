#![allow(dead_code)]

use ibgs_autodiff::Tensor;
use ibgs_core::camera::Camera;
use ibgs_core::scene::Gaussians;
use ibgs_core::sh::SH_C0;

/// One hand-built Gaussian with a view-independent colour.
#[derive(Clone, Copy)]
pub struct G {
    pub mu: [f64; 3],
    pub quat: [f64; 4],
    pub scale: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    pub normal: [f64; 3],
}

impl G {
    pub fn at(mu: [f64; 3]) -> G {
        G {
            mu,
            quat: [1.0, 0.0, 0.0, 0.0],
            scale: [0.05; 3],
            opacity: 0.5,
            color: [0.5; 3],
            normal: [0.0, 0.0, -1.0],
        }
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn build(gs: &[G]) -> Gaussians {
    let n = gs.len();
    let flat = |f: &dyn Fn(&G) -> Vec<f64>| gs.iter().flat_map(f).collect::<Vec<f64>>();
    Gaussians {
        sh_degree: 0,
        mu: Tensor::new(vec![n, 3], flat(&|g| g.mu.to_vec())).unwrap(),
        quat: Tensor::new(vec![n, 4], flat(&|g| g.quat.to_vec())).unwrap(),
        log_scale: Tensor::new(vec![n, 3], flat(&|g| g.scale.iter().map(|s| s.ln()).collect())).unwrap(),
        opacity_logit: Tensor::new(vec![n, 1], flat(&|g| vec![logit(g.opacity)])).unwrap(),
        sh: Tensor::new(vec![n, 3], flat(&|g| g.color.iter().map(|c| (c - 0.5) / SH_C0).collect())).unwrap(),
        normal: Tensor::new(vec![n, 3], flat(&|g| g.normal.to_vec())).unwrap(),
    }
}

/// Camera at the origin looking down +z with identity rotation.
pub fn axis_camera(width: usize, height: usize, focal: f64) -> Camera {
    Camera {
        id: "axis".into(),
        width,
        height,
        fx: focal,
        fy: focal,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
        image: None,
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
