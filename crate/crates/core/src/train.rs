//! Optimisation loop: schedules, Adam, opacity pruning, checkpoints and metrics.

use std::path::Path;

use ibgs_autodiff::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::loss::{psnr, ssim};
use crate::net::ResidualNet;
use crate::pipeline::{candidate_point_maps, decompose, forward, losses, LossWeights, Needs, ViewParams};
use crate::scene::Scene;
use crate::warp::candidate_views;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Multiplied by the camera extent.
    pub position: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub normal: f64,
    pub sh: f64,
    pub net: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            opacity: 0.05,
            scale: 5e-3,
            rotation: 1e-3,
            normal: 1e-3,
            sh: 2.5e-3,
            net: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iters: usize,
    /// First iteration with the photometric and normal terms enabled.
    pub warmup: usize,
    pub seed: u64,
    pub k: usize,
    pub s: usize,
    pub m: usize,
    pub tau: f64,
    pub exposure_correction: bool,
    /// When false, γ stays at 1 and the network is never evaluated.
    pub residual: bool,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma_final: f64,
    pub lr: LearningRates,
    pub prune_threshold: f64,
    pub prune_every: usize,
    pub log_every: usize,
    /// Also write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 2000,
            warmup: 300,
            seed: 0,
            k: 4,
            s: 4,
            m: 3,
            tau: 0.001,
            exposure_correction: false,
            residual: true,
            lambda1: 0.3,
            lambda2: 0.03,
            gamma_final: 0.5,
            lr: LearningRates::default(),
            prune_threshold: 0.05,
            prune_every: 500,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.view_params().validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.iters == 0 {
            return bad("iters must be positive".into());
        }
        if self.warmup >= self.iters {
            return bad(format!("warmup ({}) must be below iters ({})", self.warmup, self.iters));
        }
        if !(0.0..1.0).contains(&self.prune_threshold) {
            return bad(format!("prune_threshold must be in [0, 1), got {}", self.prune_threshold));
        }
        if !(0.0..=1.0).contains(&self.gamma_final) {
            return bad(format!("gamma_final must be in [0, 1], got {}", self.gamma_final));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }

    pub fn view_params(&self) -> ViewParams {
        ViewParams {
            k: self.k,
            s: self.s,
            m: self.m,
            tau: self.tau,
            exposure: self.exposure_correction,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr_net: f64,
}

/// Breakpoints of the reference 30k-iteration schedule, scaled to `iters`.
const REF_ITERS: usize = 30_000;
const REF_DECAY_START: usize = 10_000;
const REF_HALVINGS: [usize; 2] = [18_000, 25_000];

pub fn schedule(cfg: &TrainConfig, iter: usize) -> Schedule {
    let after = |reference: usize| iter * REF_ITERS >= reference * cfg.iters;
    let (lambda1, lambda2) = if iter >= cfg.warmup { (cfg.lambda1, cfg.lambda2) } else { (0.0, 0.0) };
    let start = cfg.iters as f64 * REF_DECAY_START as f64 / REF_ITERS as f64;
    let gamma = if !cfg.residual || iter as f64 <= start {
        1.0
    } else {
        let f = ((iter as f64 - start) / (cfg.iters as f64 - start)).min(1.0);
        1.0 - (1.0 - cfg.gamma_final) * f
    };
    let halvings = REF_HALVINGS.iter().filter(|&&r| after(r)).count();
    Schedule {
        gamma,
        lambda1,
        lambda2,
        lr_net: cfg.lr.net * 0.5f64.powi(halvings as i32),
    }
}

/// One Adam update of `param` in place at step `t` (1-based). Elements with a
/// non-finite gradient are left untouched; returns how many were skipped.
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, t: u64) -> usize {
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    let mut skipped = 0;
    for i in 0..param.len() {
        let g = grad[i];
        if !g.is_finite() {
            skipped += 1;
            continue;
        }
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        param[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
    skipped
}

/// Adam moments for the six Gaussian attribute groups followed by the network tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

const GROUPS: [&str; 6] = ["mu", "quat", "log_scale", "opacity_logit", "sh", "normal"];

impl AdamState {
    pub fn new(scene: &Scene, net: &ResidualNet) -> Self {
        let sizes: Vec<usize> = scene
            .gaussians
            .fields()
            .iter()
            .map(|t| t.len())
            .chain(net.tensors.iter().map(Tensor::len))
            .collect();
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn group_names() -> Vec<String> {
        GROUPS
            .iter()
            .map(|s| s.to_string())
            .chain(crate::net::layout().into_iter().map(|(n, _)| n))
            .collect()
    }

    /// Keeps the Gaussian rows in `keep` for every Gaussian group.
    fn select_rows(&mut self, widths: &[usize], keep: &[usize]) {
        for (gi, &w) in widths.iter().enumerate() {
            for buf in [&mut self.m[gi], &mut self.v[gi]] {
                let mut out = Vec::with_capacity(keep.len() * w);
                for &i in keep {
                    out.extend_from_slice(&buf[i * w..(i + 1) * w]);
                }
                *buf = out;
            }
        }
    }

    pub fn to_parts(&self, iteration: usize) -> (String, Vec<u8>) {
        let mut manifest = format!("ibgs-adam 1\niteration {}\nstep {}\n", iteration, self.step);
        let mut bin = Vec::new();
        for (name, (m, v)) in Self::group_names().iter().zip(self.m.iter().zip(&self.v)) {
            manifest.push_str(&format!("group {} {}\n", name, m.len()));
            for x in m.iter().chain(v) {
                bin.extend_from_slice(&x.to_le_bytes());
            }
        }
        (manifest, bin)
    }

    /// Parses a checkpoint; returns the state and the stored iteration.
    pub fn from_parts(manifest: &str, bin: &[u8]) -> Result<(Self, usize)> {
        const WHAT: &str = "optimizer manifest";
        let lines: Vec<(usize, &str)> = manifest
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let field = |idx: usize, key: &str| -> Result<u64> {
            let (no, line) = lines.get(idx).copied().ok_or_else(|| Error::parse(WHAT, idx + 1, format!("missing {}", key)))?;
            let rest = line
                .strip_prefix(key)
                .ok_or_else(|| Error::parse(WHAT, no, format!("expected {}", key)))?;
            rest.trim().parse().map_err(|_| Error::parse(WHAT, no, format!("bad {}", key)))
        };
        match lines.first() {
            Some((_, "ibgs-adam 1")) => {}
            Some((no, _)) => return Err(Error::parse(WHAT, *no, "expected \"ibgs-adam 1\"")),
            None => return Err(Error::parse(WHAT, 1, "empty manifest")),
        }
        let iteration = field(1, "iteration")? as usize;
        let step = field(2, "step")?;
        let names = Self::group_names();
        if lines.len() != 3 + names.len() {
            return Err(Error::parse(WHAT, lines.last().map_or(1, |l| l.0), format!("expected {} groups", names.len())));
        }
        let mut offset = 0usize;
        let (mut ms, mut vs) = (Vec::new(), Vec::new());
        for (gi, name) in names.iter().enumerate() {
            let (no, line) = lines[3 + gi];
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 || parts[0] != "group" || parts[1] != name {
                return Err(Error::parse(WHAT, no, format!("expected group {}", name)));
            }
            let n: usize = parts[2].parse().map_err(|_| Error::parse(WHAT, no, "bad group length"))?;
            let bytes = n
                .checked_mul(16)
                .and_then(|len| bin.get(offset..offset.checked_add(len)?))
                .ok_or_else(|| Error::Invalid(format!("optimizer payload too short at {}", name)))?;
            offset += 16 * n;
            let vals: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            ms.push(vals[..n].to_vec());
            vs.push(vals[n..].to_vec());
        }
        if offset != bin.len() {
            return Err(Error::Invalid("optimizer payload has trailing bytes".into()));
        }
        Ok((AdamState { step, m: ms, v: vs }, iteration))
    }
}

/// Removes Gaussians whose opacity is below `threshold`; returns the kept indices.
/// Refuses (leaving `scene` untouched) when nothing would survive.
pub fn prune(scene: &mut Scene, threshold: f64) -> Result<Vec<usize>> {
    let g = &scene.gaussians;
    let keep: Vec<usize> = (0..g.len()).filter(|&i| g.opacity(i) >= threshold).collect();
    if keep.is_empty() && g.len() > 0 {
        return Err(Error::PruneAll {
            threshold,
            count: g.len(),
        });
    }
    if keep.len() != g.len() {
        scene.gaussians = g.select(&keep);
    }
    Ok(keep)
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iter: usize,
    pub loss: f64,
    /// Mean total loss since the previous record.
    pub loss_avg: f64,
    pub rgb: f64,
    pub photo: f64,
    pub normal: f64,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr_net: f64,
    pub gaussians: usize,
    pub skipped_grads: usize,
    pub test_psnr_base: Option<f64>,
    pub test_psnr_final: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub id: String,
    pub psnr_base: f64,
    pub psnr_final: f64,
    pub ssim_base: f64,
    pub ssim_final: f64,
}

fn json_f64(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Candidate source cameras for `target`, taken from the training split.
pub fn candidates_for<'a>(scene: &'a Scene, target: &Camera, s: usize) -> Vec<&'a Camera> {
    let train: Vec<&Camera> = scene.train_cameras().collect();
    candidate_views(target, &train, s).into_iter().map(|i| train[i]).collect()
}

/// Metrics of base and final images (clamped to `[0, 1]`) against ground truth.
pub fn evaluate(scene: &Scene, net: &ResidualNet, params: &ViewParams, views: &[usize]) -> Result<Vec<ViewMetrics>> {
    views
        .iter()
        .map(|&vi| {
            let cam = &scene.cameras[vi];
            let gt = cam
                .image
                .as_ref()
                .ok_or_else(|| Error::Invalid(format!("camera {} has no image", cam.id)))?;
            let cands = candidates_for(scene, cam, params.s);
            let d = decompose(&scene.gaussians, net, cam, &cands, params)?;
            let (b, f) = (d.base.clamped(), d.final_image.clamped());
            Ok(ViewMetrics {
                id: cam.id.clone(),
                psnr_base: psnr(&b, gt),
                psnr_final: psnr(&f, gt),
                ssim_base: ssim(&b, gt)?,
                ssim_final: ssim(&f, gt)?,
            })
        })
        .collect()
}

/// Mean over views, ignoring infinite PSNRs.
pub fn mean_psnr(m: &[ViewMetrics]) -> (f64, f64) {
    let avg = |f: fn(&ViewMetrics) -> f64| {
        let v: Vec<f64> = m.iter().map(f).filter(|x| x.is_finite()).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    (avg(|x| x.psnr_base), avg(|x| x.psnr_final))
}

pub struct Trainer {
    pub scene: Scene,
    pub net: ResidualNet,
    pub adam: AdamState,
    pub cfg: TrainConfig,
    pub iter: usize,
    pub metrics: Vec<MetricRecord>,
    extent: f64,
    loss_sum: f64,
    loss_count: usize,
    skipped: usize,
}

/// Scalar loss components of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub total: f64,
    pub rgb: f64,
    pub photo: f64,
    pub normal: f64,
    pub skipped: usize,
}

impl Trainer {
    pub fn new(scene: Scene, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        scene.validate()?;
        if scene.train.len() < 2 {
            return Err(Error::Config(format!("need at least 2 training views, got {}", scene.train.len())));
        }
        if scene.cameras.iter().any(|c| c.image.is_none()) {
            return Err(Error::Config("every camera needs an image".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = ResidualNet::init(&mut rng);
        let adam = AdamState::new(&scene, &net);
        let extent = scene.camera_extent();
        Ok(Trainer {
            scene,
            net,
            adam,
            cfg,
            iter: 0,
            metrics: Vec::new(),
            extent,
            loss_sum: 0.0,
            loss_count: 0,
            skipped: 0,
        })
    }

    /// Training view used at iteration `iter`: a fresh seeded permutation per epoch.
    pub fn target_at(&self, iter: usize) -> usize {
        let n = self.scene.train.len();
        let epoch = (iter / n) as u64;
        let mut order = self.scene.train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        order[iter % n]
    }

    fn lrs(&self) -> [f64; 6] {
        let lr = &self.cfg.lr;
        [lr.position * self.extent, lr.rotation, lr.scale, lr.opacity, lr.sh, lr.normal]
    }

    /// Forward, backward and Adam update for the current iteration.
    pub fn step(&mut self) -> Result<StepReport> {
        let sch = schedule(&self.cfg, self.iter);
        let params = self.cfg.view_params();
        let target = &self.scene.cameras[self.target_at(self.iter)];
        let cands = candidates_for(&self.scene, target, params.s);
        let needs = Needs {
            warps: sch.lambda1 > 0.0,
            residual: sch.gamma < 1.0,
        };
        let any_warp = needs.warps || needs.residual || params.exposure;
        let maps = if any_warp && params.tau != f64::INFINITY {
            Some(candidate_point_maps(&self.scene.gaussians, &cands, params.k)?)
        } else {
            None
        };
        let tape = Tape::new();
        let gv = self.scene.gaussians.leaves(&tape);
        let nv = self.net.leaves(&tape);
        let f = forward(&tape, &gv, Some(&nv), target, &cands, maps.as_deref(), &params, needs)?;
        let weights = LossWeights {
            gamma: sch.gamma,
            lambda1: sch.lambda1,
            lambda2: sch.lambda2,
        };
        let gt = target.image.as_ref().expect("checked in new");
        let l = losses(&tape, &f, gt, &weights)?;
        let total = l.total.item();
        if !total.is_finite() {
            return Err(Error::Diverged { iter: self.iter, loss: total });
        }
        let grads = tape.backward(l.total)?;
        self.adam.step += 1;
        let t = self.adam.step;
        let mut skipped = 0;
        let lrs = self.lrs();
        let gfields = gv.fields();
        for (gi, field) in self.scene.gaussians.fields_mut().into_iter().enumerate() {
            let g = grads.get_or_zeros(gfields[gi]);
            skipped += adam_update(field.data_mut(), g.data(), &mut self.adam.m[gi], &mut self.adam.v[gi], lrs[gi], t);
        }
        if needs.residual {
            for (ti, tensor) in self.net.tensors.iter_mut().enumerate() {
                let g = grads.get_or_zeros(nv.vars[ti]);
                let slot = GROUPS.len() + ti;
                skipped += adam_update(tensor.data_mut(), g.data(), &mut self.adam.m[slot], &mut self.adam.v[slot], sch.lr_net, t);
            }
        }
        if skipped > 0 {
            log::warn!("iteration {}: skipped {} non-finite gradient entries", self.iter, skipped);
        }
        self.scene.gaussians.renormalize();
        Ok(StepReport {
            total,
            rgb: l.rgb.item(),
            photo: l.photo.item(),
            normal: l.normal.item(),
            skipped,
        })
    }

    pub fn prune(&mut self) -> Result<usize> {
        let before = self.scene.gaussians.len();
        let keep = prune(&mut self.scene, self.cfg.prune_threshold)?;
        if keep.len() != before {
            let widths: Vec<usize> = self.scene.gaussians.fields().iter().map(|t| t.shape()[1]).collect();
            self.adam.select_rows(&widths, &keep);
            log::info!("pruned {} of {} gaussians", before - keep.len(), before);
        }
        Ok(before - keep.len())
    }

    fn record(&mut self, r: &StepReport) -> Result<MetricRecord> {
        let sch = schedule(&self.cfg, self.iter.saturating_sub(1));
        let (base, fin) = if self.scene.test.is_empty() {
            (None, None)
        } else {
            let m = evaluate(&self.scene, &self.net, &self.cfg.view_params(), &self.scene.test)?;
            let (b, f) = mean_psnr(&m);
            (json_f64(b), json_f64(f))
        };
        let rec = MetricRecord {
            iter: self.iter,
            loss: r.total,
            loss_avg: self.loss_sum / self.loss_count.max(1) as f64,
            rgb: r.rgb,
            photo: r.photo,
            normal: r.normal,
            gamma: sch.gamma,
            lambda1: sch.lambda1,
            lambda2: sch.lambda2,
            lr_net: sch.lr_net,
            gaussians: self.scene.gaussians.len(),
            skipped_grads: self.skipped,
            test_psnr_base: base,
            test_psnr_final: fin,
        };
        self.loss_sum = 0.0;
        self.loss_count = 0;
        self.skipped = 0;
        Ok(rec)
    }

    /// Runs to `cfg.iters`, logging and pruning on schedule. On divergence the
    /// last finite state is checkpointed (when `checkpoint` is given) and the
    /// error returned. `on_record` sees every metrics record as it is made.
    pub fn run(&mut self, checkpoint: Option<&Path>, on_record: impl FnMut(&MetricRecord)) -> Result<()> {
        self.run_until(self.cfg.iters, checkpoint, on_record)
    }

    /// Like [`Trainer::run`] but stops after iteration `stop` (capped at
    /// `cfg.iters`), checkpointing there when `checkpoint` is given.
    pub fn run_until(&mut self, stop: usize, checkpoint: Option<&Path>, mut on_record: impl FnMut(&MetricRecord)) -> Result<()> {
        let stop = stop.min(self.cfg.iters);
        while self.iter < stop {
            let r = match self.step() {
                Ok(r) => r,
                Err(e @ Error::Diverged { .. }) => {
                    if let Some(dir) = checkpoint {
                        self.save_checkpoint(dir)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            self.iter += 1;
            self.loss_sum += r.total;
            self.loss_count += 1;
            self.skipped += r.skipped;
            let at_end = self.iter == self.cfg.iters;
            if (self.cfg.prune_every > 0 && self.iter % self.cfg.prune_every == 0) || at_end {
                match self.prune() {
                    Ok(_) => {}
                    Err(e @ Error::PruneAll { .. }) => log::error!("{}; keeping the current scene", e),
                    Err(e) => return Err(e),
                }
            }
            if (self.cfg.log_every > 0 && self.iter % self.cfg.log_every == 0) || at_end {
                let rec = self.record(&r)?;
                on_record(&rec);
                self.metrics.push(rec);
            }
            if let Some(dir) = checkpoint {
                if self.iter == stop || (self.cfg.checkpoint_every > 0 && self.iter % self.cfg.checkpoint_every == 0) {
                    self.save_checkpoint(dir)?;
                }
            }
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.scene.save(&dir.join("scene.ibgs"))?;
        self.net.save(&dir.join("weights.manifest"), &dir.join("weights.bin"))?;
        let (m, b) = self.adam.to_parts(self.iter);
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        write("optimizer.manifest", m.as_bytes())?;
        write("optimizer.bin", &b)?;
        write("config.toml", self.cfg.to_toml().as_bytes())?;
        let mut log = String::new();
        for r in &self.metrics {
            log.push_str(&serde_json::to_string(r).expect("metrics serialise"));
            log.push('\n');
        }
        write("metrics.jsonl", log.as_bytes())
    }

    /// Restores a checkpoint directory. `cfg` overrides the stored config when given.
    pub fn resume(dir: &Path, cfg: Option<TrainConfig>) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        let cfg = match cfg {
            Some(c) => c,
            None => TrainConfig::from_toml(&String::from_utf8_lossy(&read("config.toml")?))?,
        };
        let scene = Scene::load(&dir.join("scene.ibgs"))?;
        let net = ResidualNet::load(&dir.join("weights.manifest"), &dir.join("weights.bin"))?;
        let (adam, iter) = AdamState::from_parts(&String::from_utf8_lossy(&read("optimizer.manifest")?), &read("optimizer.bin")?)?;
        let expected = AdamState::new(&scene, &net);
        if adam.m.iter().map(Vec::len).ne(expected.m.iter().map(Vec::len)) {
            return Err(Error::Invalid("optimizer state does not match the scene".into()));
        }
        let mut metrics = Vec::new();
        for (i, line) in String::from_utf8_lossy(&read("metrics.jsonl")?).lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            metrics.push(serde_json::from_str(line).map_err(|e| Error::parse("metrics log", i + 1, e.to_string()))?);
        }
        let mut t = Trainer::new(scene, cfg)?;
        t.net = net;
        t.adam = adam;
        t.iter = iter;
        t.metrics = metrics;
        Ok(t)
    }
}
