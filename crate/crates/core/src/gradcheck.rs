//! Finite-difference check of every loss term against every parameter group
//! on a two-Gaussian 8x8 scene with two source views.

use std::f64::consts::PI;

use ibgs_autodiff::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::error::Result;
use crate::imagebuf::Image;
use crate::loss;
use crate::net::{layout, NetVars, ResidualNet, DECODER_LAYERS};
use crate::pipeline::{forward, losses, Forward, LossWeights, Needs, ViewParams};
use crate::scene::{attribute_layout, logit, quat_from_z_to, Gaussians};
use crate::sh;

pub const SIZE: usize = 8;
pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
/// Smallest `|analytic| + |numeric|` used as the relative-error denominator.
/// Central differences of an O(1) loss in double precision resolve
/// derivatives to about 1e-11 absolute, so below this magnitude the bound
/// becomes an absolute one of `TOLERANCE * FLOOR`.
pub const FLOOR: f64 = 1e-7;

/// `|a - n| / max(|a| + |n|, FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(FLOOR)
}
pub const LOSSES: [&str; 4] = ["rgb", "photo", "normal", "total"];

pub struct GradFixture {
    pub gaussians: Gaussians,
    pub net: ResidualNet,
    pub target: Camera,
    pub sources: Vec<Camera>,
    pub params: ViewParams,
    pub weights: LossWeights,
}

fn smooth_image(rng: &mut ChaCha8Rng) -> Image {
    let k: [[f64; 4]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(0.2..1.2)));
    Image::from_fn(SIZE, SIZE, |x, y| {
        std::array::from_fn(|c| {
            let (u, v) = (x as f64 / SIZE as f64, y as f64 / SIZE as f64);
            0.5 + 0.35 * (k[c][0] * 2.0 * PI * u + k[c][1] * 3.0 * v + k[c][2]).sin() * (k[c][3] * PI * v).cos()
        })
    })
}

impl GradFixture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let up = [0.0, -1.0, 0.0];
        let focal = 9.0;
        let mut target = Camera::look_at("target", [0.0, 0.0, -3.0], [0.0; 3], up, SIZE, SIZE, focal);
        target.image = Some(smooth_image(&mut rng));
        let sources: Vec<Camera> = [[0.7, 0.15, -2.9], [-0.5, -0.3, -2.95]]
            .iter()
            .enumerate()
            .map(|(i, &eye)| {
                let mut c = Camera::look_at(&format!("source{i}"), eye, [0.0; 3], up, SIZE, SIZE, focal);
                c.image = Some(smooth_image(&mut rng));
                c
            })
            .collect();

        let degree = 2;
        let mut g = Gaussians::empty(degree);
        let mut rows: [Vec<f64>; 6] = Default::default();
        let centres = [[-0.12, 0.06, 0.0], [0.15, -0.08, 0.35]];
        let opacities = [0.62, 0.78];
        for (i, mu) in centres.iter().enumerate() {
            let tilt = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), -1.0];
            rows[0].extend(mu);
            rows[1].extend(quat_from_z_to(tilt).map(|q| q + rng.gen_range(-0.05..0.05)));
            rows[2].extend([0.55f64, 0.45, 0.08].map(|s| (s * rng.gen_range(0.9..1.1f64)).ln()));
            rows[3].push(logit(opacities[i]));
            rows[4].extend((0..sh::coeff_count(degree)).map(|j| if j < 3 { rng.gen_range(-0.6..0.6) } else { rng.gen_range(-0.15..0.15) }));
            let n = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), -1.0];
            rows[5].extend(n);
        }
        for ((t, (_, w)), data) in g.fields_mut().into_iter().zip(attribute_layout(degree)).zip(rows) {
            *t = Tensor::new(vec![data.len() / w, w], data).expect("fixture shapes");
        }

        // He-uniform weights and small nonzero biases everywhere, including the
        // final layer, so that every tensor receives a gradient.
        let mut net = ResidualNet::zeros();
        for ((name, shape), t) in layout().iter().zip(net.tensors.iter_mut()) {
            let bound = if name.ends_with("weight") { (6.0 / shape[0] as f64).sqrt() } else { 0.1 };
            for v in t.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        GradFixture {
            gaussians: g,
            net,
            target,
            sources,
            params: ViewParams {
                k: 4,
                s: 2,
                m: 2,
                tau: f64::INFINITY,
                exposure: false,
            },
            weights: LossWeights {
                gamma: 0.5,
                lambda1: 0.3,
                lambda2: 0.03,
            },
        }
    }

    fn run<'t>(&self, tape: &'t Tape, g: &crate::raster::GaussianVars<'t>, net: &NetVars<'t>) -> Result<(Forward<'t>, [Var<'t>; 4])> {
        let cands: Vec<&Camera> = self.sources.iter().collect();
        let needs = Needs {
            warps: true,
            residual: true,
        };
        let f = forward(tape, g, Some(net), &self.target, &cands, None, &self.params, needs)?;
        let l = losses(tape, &f, self.target.image.as_ref().expect("fixture image"), &self.weights)?;
        Ok((f, [l.rgb, l.photo, l.normal, l.total]))
    }

    /// The four loss values at the given parameters.
    pub fn evaluate(&self, g: &Gaussians, net: &ResidualNet) -> Result<[f64; 4]> {
        let tape = Tape::new();
        let (_, l) = self.run(&tape, &g.constants(&tape), &net.constants(&tape))?;
        Ok(l.map(|v| v.item()))
    }
}

/// Result for one (parameter group, loss) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub group: String,
    pub loss: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbed loss was not finite.
    pub nonfinite: usize,
    /// Coordinates whose gradient magnitude fell below [`FLOOR`].
    pub floored: usize,
    /// Largest analytic gradient magnitude in the group.
    pub scale: f64,
}

impl GroupCheck {
    pub fn passed(&self) -> bool {
        self.nonfinite == 0 && self.max_rel_error < TOLERANCE
    }
}

struct Accum {
    max_rel: [f64; 4],
    nonfinite: [usize; 4],
    floored: [usize; 4],
    scale: [f64; 4],
}

impl Accum {
    fn new() -> Self {
        Accum {
            max_rel: [0.0; 4],
            nonfinite: [0; 4],
            floored: [0; 4],
            scale: [0.0; 4],
        }
    }

    fn add(&mut self, analytic: [f64; 4], numeric: [f64; 4]) {
        for l in 0..4 {
            self.scale[l] = self.scale[l].max(analytic[l].abs());
            if !numeric[l].is_finite() {
                self.nonfinite[l] += 1;
                continue;
            }
            if analytic[l].abs() + numeric[l].abs() < FLOOR {
                self.floored[l] += 1;
            }
            self.max_rel[l] = self.max_rel[l].max(rel_error(analytic[l], numeric[l]));
        }
    }

    fn finish(self, group: &str, checked: usize, out: &mut Vec<GroupCheck>) {
        for (l, name) in LOSSES.iter().enumerate() {
            out.push(GroupCheck {
                group: group.to_string(),
                loss: name,
                max_rel_error: self.max_rel[l],
                checked,
                nonfinite: self.nonfinite[l],
                floored: self.floored[l],
                scale: self.scale[l],
            });
        }
    }
}

/// Numerical derivative of the four losses along one coordinate. `f(h)` is
/// the losses with the coordinate offset by `h`. A central difference with
/// `step` is used where it already agrees with `analytic`; elsewhere the
/// estimate is refined with Ridders' extrapolation, which resolves both
/// gradients near the roundoff floor and kinks close to the base point.
fn derivative(mut f: impl FnMut(f64) -> Result<[f64; 4]>, step: f64, analytic: [f64; 4]) -> Result<[f64; 4]> {
    let (p, m) = (f(step)?, f(-step)?);
    let mut out: [f64; 4] = std::array::from_fn(|l| (p[l] - m[l]) / (2.0 * step));
    let refine: Vec<usize> = (0..4).filter(|&l| !(rel_error(analytic[l], out[l]) < TOLERANCE)).collect();
    if refine.is_empty() {
        return Ok(out);
    }
    let refined = ridders(&mut f, RIDDERS_START)?;
    for l in refine {
        out[l] = refined[l];
    }
    Ok(out)
}

const RIDDERS_START: f64 = 1e-4;
const RIDDERS_SHRINK: f64 = 1.4;
const RIDDERS_TABLE: usize = 12;

fn ridders(f: &mut impl FnMut(f64) -> Result<[f64; 4]>, start: f64) -> Result<[f64; 4]> {
    let c2 = RIDDERS_SHRINK * RIDDERS_SHRINK;
    let mut table = vec![vec![[0.0; 4]; RIDDERS_TABLE]; RIDDERS_TABLE];
    let mut best = [f64::NAN; 4];
    let mut err = [f64::INFINITY; 4];
    let mut done = [false; 4];
    let mut h = start;
    for i in 0..RIDDERS_TABLE {
        if i > 0 {
            h /= RIDDERS_SHRINK;
        }
        let (p, m) = (f(h)?, f(-h)?);
        table[0][i] = std::array::from_fn(|l| (p[l] - m[l]) / (2.0 * h));
        let mut fac = c2;
        for j in 1..=i {
            table[j][i] = std::array::from_fn(|l| (table[j - 1][i][l] * fac - table[j - 1][i - 1][l]) / (fac - 1.0));
            fac *= c2;
            for l in 0..4 {
                if done[l] {
                    continue;
                }
                let e = (table[j][i][l] - table[j - 1][i][l]).abs().max((table[j][i][l] - table[j - 1][i - 1][l]).abs());
                if e <= err[l] {
                    err[l] = e;
                    best[l] = table[j][i][l];
                }
            }
        }
        if i > 0 {
            for l in 0..4 {
                if !done[l] && (table[i][i][l] - table[i - 1][i - 1][l]).abs() >= 2.0 * err[l] {
                    done[l] = true;
                }
            }
        }
        if i == 0 {
            best = table[0][0];
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    Ok(best)
}

/// Checks every coordinate of every Gaussian attribute and network tensor
/// against numerical derivatives (see [`derivative`]).
pub fn check_gradients(fx: &GradFixture, step: f64) -> Result<Vec<GroupCheck>> {
    let tape = Tape::new();
    let gv = fx.gaussians.leaves(&tape);
    let nv = fx.net.leaves(&tape);
    let (f, l) = fx.run(&tape, &gv, &nv)?;
    let grads = l.iter().map(|v| tape.backward(*v)).collect::<std::result::Result<Vec<_>, _>>()?;
    let analytic = |var: Var<'_>, i: usize| -> [f64; 4] { std::array::from_fn(|k| grads[k].get(var).map_or(0.0, |t| t.data()[i])) };
    let mut out = Vec::new();

    let gfields = gv.fields();
    for (gi, (name, _)) in attribute_layout(fx.gaussians.sh_degree).iter().enumerate() {
        let mut acc = Accum::new();
        let n = fx.gaussians.fields()[gi].len();
        let mut g = fx.gaussians.clone();
        for i in 0..n {
            let orig = g.fields()[gi].data()[i];
            let a = analytic(gfields[gi], i);
            let numeric = derivative(
                |h| {
                    g.fields_mut()[gi].data_mut()[i] = orig + h;
                    fx.evaluate(&g, &fx.net)
                },
                step,
                a,
            )?;
            g.fields_mut()[gi].data_mut()[i] = orig;
            acc.add(a, numeric);
        }
        acc.finish(name, n, &mut out);
    }

    // Extractor tensors feed the whole decoder; decoder tensors only need the
    // layers from their own onwards, evaluated on the cached layer input.
    let names = layout();
    let extractor = 4;
    for ti in 0..extractor {
        let mut acc = Accum::new();
        let n = fx.net.tensors[ti].len();
        let mut net = fx.net.clone();
        for i in 0..n {
            let orig = net.tensors[ti].data()[i];
            let a = analytic(nv.vars[ti], i);
            let numeric = derivative(
                |h| {
                    net.tensors[ti].data_mut()[i] = orig + h;
                    fx.evaluate(&fx.gaussians, &net)
                },
                step,
                a,
            )?;
            net.tensors[ti].data_mut()[i] = orig;
            acc.add(a, numeric);
        }
        acc.finish(&names[ti].0, n, &mut out);
    }

    let tail = DecoderTail::new(fx, &f, l)?;
    for layer in 0..DECODER_LAYERS {
        let input = tail.layer_input(&fx.net, layer)?;
        for ti in [extractor + 2 * layer, extractor + 2 * layer + 1] {
            let mut acc = Accum::new();
            let n = fx.net.tensors[ti].len();
            let mut net = fx.net.clone();
            for i in 0..n {
                let orig = net.tensors[ti].data()[i];
                let a = analytic(nv.vars[ti], i);
                let numeric = derivative(
                    |h| {
                        net.tensors[ti].data_mut()[i] = orig + h;
                        tail.evaluate(&net, &input, layer)
                    },
                    step,
                    a,
                )?;
                net.tensors[ti].data_mut()[i] = orig;
                acc.add(a, numeric);
            }
            acc.finish(&names[ti].0, n, &mut out);
        }
    }
    Ok(out)
}

/// Everything the decoder does not influence, frozen at the fixture's values.
struct DecoderTail {
    base: Tensor,
    decoder_input: Tensor,
    real: Tensor,
    photo: f64,
    normal: f64,
    gamma: f64,
    lambda1: f64,
    lambda2: f64,
}

impl DecoderTail {
    fn new<'t>(fx: &GradFixture, f: &Forward<'t>, l: [Var<'t>; 4]) -> Result<Self> {
        let tape = Tape::new();
        let c = tape.constant((*f.color.value()).clone());
        let d = tape.constant(f.rendered.rays_tensor());
        let pooled = tape.constant((*f.pooled.expect("residual evaluated").value()).clone());
        let x = Var::concat_last(&[c, d, pooled])?.reshape(&[SIZE, SIZE, crate::net::DECODER_IN])?;
        Ok(DecoderTail {
            base: (*f.color.value()).clone(),
            decoder_input: (*x.value()).clone(),
            real: fx.target.image.as_ref().expect("fixture image").to_tensor(),
            photo: l[1].item(),
            normal: l[2].item(),
            gamma: fx.weights.gamma,
            lambda1: fx.weights.lambda1,
            lambda2: fx.weights.lambda2,
        })
    }

    /// Input of decoder layer `layer` under the unperturbed weights.
    fn layer_input(&self, net: &ResidualNet, layer: usize) -> Result<Tensor> {
        let tape = Tape::new();
        let nv = net.constants(&tape);
        let mut x = tape.constant(self.decoder_input.clone());
        for i in 0..layer {
            x = x.conv3x3(nv.vars[4 + 2 * i], nv.vars[5 + 2 * i])?.relu();
        }
        Ok((*x.value()).clone())
    }

    fn evaluate(&self, net: &ResidualNet, input: &Tensor, layer: usize) -> Result<[f64; 4]> {
        let tape = Tape::new();
        let nv = net.constants(&tape);
        let residual = nv.decode_from(tape.constant(input.clone()), layer)?;
        let c = tape.constant(self.base.clone());
        let fin = crate::net::compose_final(c, residual)?;
        let real = tape.constant(self.real.clone());
        let rgb = loss::rgb_loss(&tape, c, Some(fin), real, self.gamma, SIZE, SIZE)?.item();
        Ok([rgb, self.photo, self.normal, rgb + self.lambda1 * self.photo + self.lambda2 * self.normal])
    }
}
