//! Gaussian primitives, scenes, and the scene file.
//!
//! File layout: a UTF-8 header of whitespace-separated lines terminated by a
//! line reading `data`, followed by little-endian `f64` values: all Gaussian
//! rows (attributes in header order), then every attached camera image.
//!
//! ```text
//! ibgs-scene 1
//! sh_degree 2
//! camera <id> <w> <h> <fx> <fy> <cx> <cy> <R row-major x9> <t x3> <has-image 0|1>
//! train 0 1 2
//! test 3
//! gaussians <N>
//! attributes mu:3 quat:4 log_scale:3 opacity_logit:1 sh:27 normal:3
//! data
//! ```

use std::path::Path;

use ibgs_autodiff::Tensor;

use crate::camera::{cross, dot, norm, sub, Camera, Mat3, Vec3};
use crate::error::{Error, Result};
use crate::imagebuf::Image;
use crate::sh;

/// Trainable Gaussian attributes, stored unconstrained, one row per Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussians {
    pub sh_degree: usize,
    /// `[n, 3]` world positions.
    pub mu: Tensor,
    /// `[n, 4]` rotation quaternions `(w, x, y, z)`, normalised on use.
    pub quat: Tensor,
    /// `[n, 3]`.
    pub log_scale: Tensor,
    /// `[n, 1]`.
    pub opacity_logit: Tensor,
    /// `[n, 3 (l+1)²]`, RGB per basis function.
    pub sh: Tensor,
    /// `[n, 3]`, normalised on use.
    pub normal: Tensor,
}

/// Attribute names in canonical order with their widths.
pub fn attribute_layout(sh_degree: usize) -> [(&'static str, usize); 6] {
    [
        ("mu", 3),
        ("quat", 4),
        ("log_scale", 3),
        ("opacity_logit", 1),
        ("sh", sh::coeff_count(sh_degree)),
        ("normal", 3),
    ]
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a quaternion `(w, x, y, z)`; normalises first.
pub fn quat_to_rotmat(q: [f64; 4]) -> Result<Mat3> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Invalid(format!("quaternion {:?} cannot be normalised", q)));
    }
    let [w, x, y, z] = q.map(|v| v / n);
    Ok([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

/// `Σ = R diag(s²) Rᵀ`.
pub fn covariance(q: [f64; 4], s: [f64; 3]) -> Result<Mat3> {
    let r = quat_to_rotmat(q)?;
    let mut cov = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            cov[i][j] = (0..3).map(|k| r[i][k] * r[j][k] * (s[k] * s[k])).sum();
        }
    }
    Ok(cov)
}

/// Quaternion `(w, x, y, z)` rotating the z axis onto unit vector `n`.
pub fn quat_from_z_to(n: Vec3) -> [f64; 4] {
    let d = n[2];
    if d < -1.0 + 1e-12 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    let axis = cross([0.0, 0.0, 1.0], n);
    let w = 1.0 + d;
    let q = [w, axis[0], axis[1], axis[2]];
    let l = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
    q.map(|v| v / l)
}

fn row3(t: &Tensor, i: usize) -> [f64; 3] {
    let d = &t.data()[3 * i..3 * i + 3];
    [d[0], d[1], d[2]]
}

impl Gaussians {
    pub fn empty(sh_degree: usize) -> Self {
        let z = |w: usize| Tensor::zeros(vec![0, w]);
        Gaussians {
            sh_degree,
            mu: z(3),
            quat: z(4),
            log_scale: z(3),
            opacity_logit: z(1),
            sh: z(sh::coeff_count(sh_degree)),
            normal: z(3),
        }
    }

    pub fn len(&self) -> usize {
        self.mu.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fields(&self) -> [&Tensor; 6] {
        [&self.mu, &self.quat, &self.log_scale, &self.opacity_logit, &self.sh, &self.normal]
    }

    pub fn fields_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.mu,
            &mut self.quat,
            &mut self.log_scale,
            &mut self.opacity_logit,
            &mut self.sh,
            &mut self.normal,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > sh::MAX_DEGREE {
            return Err(Error::Invalid(format!("SH degree {} unsupported", self.sh_degree)));
        }
        let n = self.len();
        for (t, (name, w)) in self.fields().iter().zip(attribute_layout(self.sh_degree)) {
            if t.shape() != [n, w] {
                return Err(Error::Invalid(format!("{} has shape {:?}, expected [{}, {}]", name, t.shape(), n, w)));
            }
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("{} contains non-finite values", name)));
            }
        }
        Ok(())
    }

    pub fn position(&self, i: usize) -> Vec3 {
        row3(&self.mu, i)
    }

    pub fn quaternion(&self, i: usize) -> [f64; 4] {
        let d = &self.quat.data()[4 * i..4 * i + 4];
        [d[0], d[1], d[2], d[3]]
    }

    pub fn scale(&self, i: usize) -> Vec3 {
        row3(&self.log_scale, i).map(f64::exp)
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logit.data()[i])
    }

    pub fn normal_unit(&self, i: usize) -> Vec3 {
        let n = row3(&self.normal, i);
        let l = norm(n);
        n.map(|v| v / l)
    }

    pub fn sh_coeffs(&self, i: usize) -> &[f64] {
        let w = sh::coeff_count(self.sh_degree);
        &self.sh.data()[w * i..w * (i + 1)]
    }

    pub fn covariance(&self, i: usize) -> Result<Mat3> {
        covariance(self.quaternion(i), self.scale(i))
    }

    /// Sets each normal to the Gaussian's smallest-scale axis, signed to face `toward`.
    pub fn init_normals(&mut self, toward: Vec3) -> Result<()> {
        let mut normals = Vec::with_capacity(3 * self.len());
        for i in 0..self.len() {
            let r = quat_to_rotmat(self.quaternion(i))?;
            let ls = row3(&self.log_scale, i);
            let mut k = 0;
            for j in 1..3 {
                if ls[j] < ls[k] {
                    k = j;
                }
            }
            let mut axis = [r[0][k], r[1][k], r[2][k]];
            if dot(axis, sub(toward, self.position(i))) < 0.0 {
                axis = axis.map(|v| -v);
            }
            normals.extend_from_slice(&axis);
        }
        self.normal = Tensor::new(vec![self.len(), 3], normals)?;
        Ok(())
    }

    /// Keeps only the rows in `keep` (ascending indices).
    pub fn select(&self, keep: &[usize]) -> Gaussians {
        let pick = |t: &Tensor| {
            let w = t.shape()[1];
            let mut d = Vec::with_capacity(keep.len() * w);
            for &i in keep {
                d.extend_from_slice(&t.data()[i * w..(i + 1) * w]);
            }
            Tensor::new(vec![keep.len(), w], d).expect("row selection")
        };
        Gaussians {
            sh_degree: self.sh_degree,
            mu: pick(&self.mu),
            quat: pick(&self.quat),
            log_scale: pick(&self.log_scale),
            opacity_logit: pick(&self.opacity_logit),
            sh: pick(&self.sh),
            normal: pick(&self.normal),
        }
    }

    /// Normalises quaternion and normal rows in place; returns how many
    /// quaternions were off unit length by more than rounding.
    pub fn renormalize(&mut self) -> usize {
        let mut fixed = 0;
        for row in self.quat.data_mut().chunks_mut(4) {
            fixed += usize::from(unit_row(row));
        }
        // Rows already unit up to rounding are left alone so that a save/load
        // round trip is bit-exact.
        for row in self.normal.data_mut().chunks_mut(3) {
            unit_row(row);
        }
        fixed
    }
}

/// Rescales `row` to unit length unless it already is one (or is zero).
/// Divides by the largest entry first so huge or tiny rows do not overflow.
fn unit_row(row: &mut [f64]) -> bool {
    let n2: f64 = row.iter().map(|v| v * v).sum();
    let big = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if (n2 - 1.0).abs() <= 1e-12 || !(big > 0.0) {
        return false;
    }
    row.iter_mut().for_each(|v| *v /= big);
    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    row.iter_mut().for_each(|v| *v /= n);
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Gaussians,
    pub cameras: Vec<Camera>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Side effects of loading a scene that callers may want to report.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub normalized_quaternions: usize,
    pub normals_initialized: bool,
}

/// Every 8th camera (index divisible by 8) is held out.
pub fn default_split(n: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|i| i % 8 != 0)
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.gaussians.validate()?;
        for c in &self.cameras {
            c.validate()?;
        }
        let mut seen = vec![0u8; self.cameras.len()];
        for &i in self.train.iter().chain(&self.test) {
            if i >= self.cameras.len() {
                return Err(Error::Invalid(format!("split index {} out of range", i)));
            }
            seen[i] += 1;
        }
        if seen.iter().any(|&s| s != 1) {
            return Err(Error::Invalid("train/test split must be disjoint and cover every camera".into()));
        }
        Ok(())
    }

    pub fn train_cameras(&self) -> impl Iterator<Item = &Camera> {
        self.train.iter().map(|&i| &self.cameras[i])
    }

    /// Radius of the sphere around the mean training-camera centre that holds all of them.
    pub fn camera_extent(&self) -> f64 {
        let centers: Vec<Vec3> = self.train_cameras().map(|c| c.center()).collect();
        if centers.is_empty() {
            return 1.0;
        }
        let mut m = [0.0; 3];
        for c in &centers {
            for k in 0..3 {
                m[k] += c[k] / centers.len() as f64;
            }
        }
        let r = centers.iter().map(|c| norm(sub(*c, m))).fold(0.0, f64::max);
        if r > 0.0 {
            1.1 * r
        } else {
            1.0
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let g = &self.gaussians;
        let mut head = String::new();
        head.push_str("ibgs-scene 1\n");
        head.push_str(&format!("sh_degree {}\n", g.sh_degree));
        for c in &self.cameras {
            head.push_str(&format!(
                "camera {} {} {} {} {} {} {}",
                c.id, c.width, c.height, c.fx, c.fy, c.cx, c.cy
            ));
            for v in c.rotation.iter().flatten().chain(&c.translation) {
                head.push_str(&format!(" {}", v));
            }
            head.push_str(if c.image.is_some() { " 1\n" } else { " 0\n" });
        }
        let list = |v: &[usize]| v.iter().map(|i| format!(" {}", i)).collect::<String>();
        head.push_str(&format!("train{}\n", list(&self.train)));
        head.push_str(&format!("test{}\n", list(&self.test)));
        head.push_str(&format!("gaussians {}\n", g.len()));
        head.push_str("attributes");
        for (name, w) in attribute_layout(g.sh_degree) {
            head.push_str(&format!(" {}:{}", name, w));
        }
        head.push_str("\ndata\n");
        let mut out = head.into_bytes();
        let fields = g.fields();
        for i in 0..g.len() {
            for t in fields {
                let w = t.shape()[1];
                for v in &t.data()[i * w..(i + 1) * w] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        for c in &self.cameras {
            if let Some(img) = &c.image {
                for v in &img.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Scene> {
        Ok(Self::from_bytes_with_report(bytes)?.0)
    }

    pub fn from_bytes_with_report(bytes: &[u8]) -> Result<(Scene, LoadReport)> {
        const WHAT: &str = "scene file";
        let mut pos = 0;
        let mut line_no = 0;
        let mut next_line = |pos: &mut usize| -> Result<(usize, &str)> {
            line_no += 1;
            let rest = &bytes[*pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::parse(WHAT, line_no, "unterminated header (missing `data` line)"))?;
            *pos += end + 1;
            let s = std::str::from_utf8(&rest[..end]).map_err(|_| Error::parse(WHAT, line_no, "header is not UTF-8"))?;
            Ok((line_no, s.trim_end_matches('\r')))
        };

        let (ln, magic) = next_line(&mut pos)?;
        if magic.trim() != "ibgs-scene 1" {
            return Err(Error::parse(WHAT, ln, format!("bad magic {:?}", magic)));
        }
        let mut sh_degree = None;
        let mut cameras: Vec<(Camera, bool)> = Vec::new();
        let mut train = None;
        let mut test = None;
        let mut count = None;
        let mut attributes: Option<Vec<(String, usize)>> = None;
        loop {
            let (ln, line) = next_line(&mut pos)?;
            let f: Vec<&str> = line.split_whitespace().collect();
            let Some(&key) = f.first() else { continue };
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .ok_or_else(|| Error::parse(WHAT, ln, format!("{}: missing field {}", key, i)))?
                    .parse::<f64>()
                    .map_err(|_| Error::parse(WHAT, ln, format!("{}: field {} is not a number", key, i)))
            };
            let int = |s: &str| -> Result<usize> {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(WHAT, ln, format!("{}: {:?} is not a non-negative integer", key, s)))
            };
            match key {
                "data" => break,
                "sh_degree" => {
                    let d = int(f.get(1).copied().unwrap_or(""))?;
                    if d > sh::MAX_DEGREE {
                        return Err(Error::parse(WHAT, ln, format!("SH degree {} unsupported", d)));
                    }
                    sh_degree = Some(d);
                }
                "camera" => {
                    if f.len() != 21 {
                        return Err(Error::parse(WHAT, ln, format!("camera: expected 21 fields, found {}", f.len())));
                    }
                    let mut rotation = [[0.0; 3]; 3];
                    for (k, v) in rotation.iter_mut().flatten().enumerate() {
                        *v = num(8 + k)?;
                    }
                    let cam = Camera {
                        id: f[1].to_string(),
                        width: int(f[2])?,
                        height: int(f[3])?,
                        fx: num(4)?,
                        fy: num(5)?,
                        cx: num(6)?,
                        cy: num(7)?,
                        rotation,
                        translation: [num(17)?, num(18)?, num(19)?],
                        image: None,
                    };
                    cam.validate().map_err(|e| Error::parse(WHAT, ln, e.to_string()))?;
                    let has = match f[20] {
                        "0" => false,
                        "1" => true,
                        other => return Err(Error::parse(WHAT, ln, format!("camera: image flag {:?}", other))),
                    };
                    cameras.push((cam, has));
                }
                "train" => train = Some(f[1..].iter().map(|s| int(s)).collect::<Result<Vec<_>>>()?),
                "test" => test = Some(f[1..].iter().map(|s| int(s)).collect::<Result<Vec<_>>>()?),
                "gaussians" => count = Some(int(f.get(1).copied().unwrap_or(""))?),
                "attributes" => {
                    let mut attrs = Vec::new();
                    for item in &f[1..] {
                        let (name, w) = item
                            .split_once(':')
                            .ok_or_else(|| Error::parse(WHAT, ln, format!("attribute {:?} lacks a width", item)))?;
                        attrs.push((name.to_string(), int(w)?));
                    }
                    attributes = Some(attrs);
                }
                other => return Err(Error::parse(WHAT, ln, format!("unknown header key {:?}", other))),
            }
        }
        let ln = line_no;
        let missing = |k: &str| Error::parse(WHAT, ln, format!("header lacks `{}`", k));
        let sh_degree = sh_degree.ok_or_else(|| missing("sh_degree"))?;
        let count = count.ok_or_else(|| missing("gaussians"))?;
        let attributes = attributes.ok_or_else(|| missing("attributes"))?;
        let train = train.ok_or_else(|| missing("train"))?;
        let test = test.ok_or_else(|| missing("test"))?;

        let layout = attribute_layout(sh_degree);
        let mut slot: [Option<usize>; 6] = [None; 6];
        let mut offset = 0usize;
        let mut offsets = Vec::new();
        for (name, w) in &attributes {
            let k = layout
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::parse(WHAT, ln, format!("unknown attribute {:?}", name)))?;
            if *w != layout[k].1 {
                return Err(Error::parse(WHAT, ln, format!("attribute {} has width {}, expected {}", name, w, layout[k].1)));
            }
            if slot[k].is_some() {
                return Err(Error::parse(WHAT, ln, format!("attribute {} repeated", name)));
            }
            slot[k] = Some(offsets.len());
            offsets.push(offset);
            offset += w;
        }
        for (k, (name, _)) in layout.iter().enumerate().take(5) {
            if slot[k].is_none() {
                return Err(Error::parse(WHAT, ln, format!("required attribute {} missing", name)));
            }
        }
        let stride = offset;
        let body = &bytes[pos..];
        let mut expected = count
            .checked_mul(stride)
            .ok_or_else(|| Error::parse(WHAT, ln, "gaussian block size overflows"))?;
        for (c, has) in &cameras {
            if *has {
                let px = c
                    .width
                    .checked_mul(c.height)
                    .and_then(|p| p.checked_mul(3))
                    .ok_or_else(|| Error::parse(WHAT, ln, "image size overflows"))?;
                expected = expected
                    .checked_add(px)
                    .ok_or_else(|| Error::parse(WHAT, ln, "image block size overflows"))?;
            }
        }
        if expected.checked_mul(8) != Some(body.len()) {
            return Err(Error::parse(
                WHAT,
                ln,
                format!("binary block holds {} bytes, header implies {} values", body.len(), expected),
            ));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();

        let mut fields: Vec<Vec<f64>> = layout.iter().map(|(_, w)| Vec::with_capacity(count * w)).collect();
        for i in 0..count {
            let row = &values[i * stride..(i + 1) * stride];
            for (k, (_, w)) in layout.iter().enumerate() {
                if let Some(s) = slot[k] {
                    fields[k].extend_from_slice(&row[offsets[s]..offsets[s] + w]);
                }
            }
        }
        if slot[5].is_none() {
            // Placeholder; replaced by init_normals below.
            fields[5] = vec![0.0; 3 * count];
        }
        let mut cursor = count * stride;
        let mut cams = Vec::with_capacity(cameras.len());
        for (mut c, has) in cameras {
            if has {
                let n = c.width * c.height * 3;
                c.image = Some(Image::new(c.width, c.height, values[cursor..cursor + n].to_vec())?);
                cursor += n;
            }
            cams.push(c);
        }

        let mut it = fields.into_iter();
        let mut next = |w: usize| Tensor::new(vec![count, w], it.next().expect("six fields"));
        let mut gaussians = Gaussians {
            sh_degree,
            mu: next(3)?,
            quat: next(4)?,
            log_scale: next(3)?,
            opacity_logit: next(1)?,
            sh: next(sh::coeff_count(sh_degree))?,
            normal: next(3)?,
        };
        let mut report = LoadReport::default();
        for (i, row) in gaussians.quat.data().chunks(4).enumerate() {
            let n2: f64 = row.iter().map(|v| v * v).sum();
            if !(n2 > 0.0) || !n2.is_finite() {
                return Err(Error::parse(WHAT, ln, format!("gaussian {} has a degenerate quaternion", i)));
            }
        }
        let mut scene = Scene {
            gaussians: Gaussians::empty(sh_degree),
            cameras: cams,
            train,
            test,
        };
        if slot[5].is_none() {
            let toward = scene
                .train
                .first()
                .or(scene.test.first())
                .and_then(|&i| scene.cameras.get(i))
                .map(|c| c.center())
                .unwrap_or([0.0, 0.0, 0.0]);
            gaussians.init_normals(toward)?;
            report.normals_initialized = true;
            log::info!("scene file has no normals; initialised from the smallest scale axis");
        }
        for (i, row) in gaussians.normal.data().chunks(3).enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::parse(WHAT, ln, format!("gaussian {} has a zero normal", i)));
            }
        }
        report.normalized_quaternions = gaussians.renormalize();
        if report.normalized_quaternions > 0 {
            log::warn!("normalised {} non-unit quaternions on load", report.normalized_quaternions);
        }
        scene.gaussians = gaussians;
        scene.validate().map_err(|e| Error::parse(WHAT, ln, e.to_string()))?;
        Ok((scene, report))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Scene> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Scene::from_bytes(&bytes)
    }
}
