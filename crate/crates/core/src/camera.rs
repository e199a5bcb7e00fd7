//! Pinhole cameras. Conventions: pixel centres sit at integer coordinates,
//! camera frame is x right / y down / z forward, and `rotation`,
//! `translation` map world points into the camera frame.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imagebuf::Image;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub image: Option<Image>,
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

pub(crate) fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub(crate) fn mat_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub(crate) fn transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            t[j][i] = *v;
        }
    }
    t
}

impl Camera {
    /// Camera at `eye` looking at `target`; `up` is the world direction that
    /// should appear upwards in the image. Principal point at the image centre.
    pub fn look_at(id: &str, eye: Vec3, target: Vec3, up: Vec3, width: usize, height: usize, focal: f64) -> Camera {
        let f = normalize(sub(target, eye));
        let r = normalize(cross(f, up));
        let d = cross(f, r);
        let rotation = [r, d, f];
        let t = mat_vec(&rotation, eye);
        Camera {
            id: id.to_string(),
            width,
            height,
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            rotation,
            translation: [-t[0], -t[1], -t[2]],
            image: None,
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// World position of the optical centre, `-Rᵀt`.
    pub fn center(&self) -> Vec3 {
        let c = mat_t_vec(&self.rotation, self.translation);
        [-c[0], -c[1], -c[2]]
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let q = mat_vec(&self.rotation, p);
        [q[0] + self.translation[0], q[1] + self.translation[1], q[2] + self.translation[2]]
    }

    /// Pixel coordinates and camera-frame depth of a world point (no bounds check).
    pub fn project(&self, p: Vec3) -> (f64, f64, f64) {
        let q = self.to_camera(p);
        (self.fx * q[0] / q[2] + self.cx, self.fy * q[1] / q[2] + self.cy, q[2])
    }

    /// Unit world-space ray through the centre of pixel `(px, py)`.
    pub fn ray(&self, px: f64, py: f64) -> Vec3 {
        let d = normalize([(px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0]);
        mat_t_vec(&self.rotation, d)
    }

    /// Per-pixel unit rays in row-major order.
    pub fn rays(&self) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.pixels());
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.ray(x as f64, y as f64));
            }
        }
        out
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation[2]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("camera {}: {}", self.id, m)));
        if self.id.is_empty() || self.id.chars().any(char::is_whitespace) {
            return bad("id must be non-empty without whitespace");
        }
        if self.width < 2 || self.height < 2 {
            return bad("image must be at least 2x2");
        }
        let scalars = [self.fx, self.fy, self.cx, self.cy];
        if scalars.iter().chain(self.rotation.iter().flatten()).chain(&self.translation).any(|v| !v.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return bad("focal lengths must be positive");
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let e = dot(r[i], r[j]) - if i == j { 1.0 } else { 0.0 };
                if e.abs() > 1e-6 {
                    return bad("rotation is not orthonormal");
                }
            }
        }
        if dot(cross(r[0], r[1]), r[2]) < 0.0 {
            return bad("rotation has negative determinant");
        }
        if let Some(img) = &self.image {
            if img.width != self.width || img.height != self.height {
                return bad("image size does not match camera");
            }
        }
        Ok(())
    }
}

/// One line of a camera list: `id fx fy cx cy w h R(9) t(3) image-path`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraEntry {
    pub camera: Camera,
    pub image_path: PathBuf,
}

/// Parses a plain-text camera list. Blank lines and `#` comments are skipped.
pub fn parse_camera_list(text: &str) -> Result<Vec<CameraEntry>> {
    const WHAT: &str = "camera list";
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 20 {
            return Err(Error::parse(WHAT, line_no, format!("expected 20 fields, found {}", fields.len())));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| Error::parse(WHAT, line_no, format!("field {} ({}) is not a number: {:?}", i + 1, name, fields[i])))
        };
        let dim = |i: usize, name: &str| -> Result<usize> {
            fields[i]
                .parse::<usize>()
                .map_err(|_| Error::parse(WHAT, line_no, format!("field {} ({}) is not a size: {:?}", i + 1, name, fields[i])))
        };
        let mut rotation = [[0.0; 3]; 3];
        for (k, v) in rotation.iter_mut().flatten().enumerate() {
            *v = num(7 + k, "R")?;
        }
        let translation = [num(16, "t")?, num(17, "t")?, num(18, "t")?];
        let camera = Camera {
            id: fields[0].to_string(),
            fx: num(1, "fx")?,
            fy: num(2, "fy")?,
            cx: num(3, "cx")?,
            cy: num(4, "cy")?,
            width: dim(5, "w")?,
            height: dim(6, "h")?,
            rotation,
            translation,
            image: None,
        };
        camera
            .validate()
            .map_err(|e| Error::parse(WHAT, line_no, e.to_string()))?;
        out.push(CameraEntry {
            camera,
            image_path: PathBuf::from(fields[19..].join(" ")),
        });
    }
    Ok(out)
}

/// Writes one camera-list line per `(camera, image path)` pair; the inverse of
/// [`parse_camera_list`].
pub fn format_camera_list<'a>(entries: impl IntoIterator<Item = (&'a Camera, &'a str)>) -> String {
    let mut out = String::from("# id fx fy cx cy w h R(row-major) t image\n");
    for (c, path) in entries {
        out.push_str(&format!("{} {} {} {} {} {} {}", c.id, c.fx, c.fy, c.cx, c.cy, c.width, c.height));
        for v in c.rotation.iter().flatten().chain(&c.translation) {
            out.push_str(&format!(" {}", v));
        }
        out.push_str(&format!(" {}\n", path));
    }
    out
}

/// Loads a camera list and the images it references (relative to the list's directory).
pub fn load_camera_list(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_camera_list(&text)?
        .into_iter()
        .map(|entry| {
            let mut cam = entry.camera;
            let img = crate::imagebuf::read_png(&base.join(&entry.image_path))?;
            if img.width != cam.width || img.height != cam.height {
                return Err(Error::Invalid(format!(
                    "camera {}: image is {}x{}, camera says {}x{}",
                    cam.id, img.width, img.height, cam.width, cam.height
                )));
            }
            cam.image = Some(img);
            Ok(cam)
        })
        .collect()
}
