use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ibgs_core::camera::format_camera_list;
use ibgs_core::gradcheck::{check_gradients, GradFixture, STEP};
use ibgs_core::imagebuf::{write_png, BitDepth, Image};
use ibgs_core::net::ResidualNet;
use ibgs_core::pipeline::{decompose, ViewParams};
use ibgs_core::scene::Scene;
use ibgs_core::synth::{synthesize, InitMode, Pattern, SceneKind, SynthSpec};
use ibgs_core::train::{candidates_for, evaluate, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "ibgs", version, about = "Image-based Gaussian splatting on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory.
    Synth(SynthArgs),
    /// Train a scene, or resume a checkpoint.
    Train(TrainArgs),
    /// Write images for chosen views of a checkpoint.
    Render(RenderArgs),
    /// Print PSNR/SSIM per view.
    Eval(EvalArgs),
    /// Finite-difference check of every gradient on a small fixture.
    CheckGrads(CheckArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with any `SynthSpec` keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    pattern: Option<String>,
    #[arg(long)]
    frequency: Option<f64>,
    #[arg(long)]
    views: Option<usize>,
    /// Square resolution (sets width and height).
    #[arg(long)]
    res: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    focal_scale: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    arc_degrees: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    specular_strength: Option<f64>,
    #[arg(long)]
    shininess: Option<f64>,
    #[arg(long)]
    gaussians: Option<usize>,
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    sh_degree: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Scene file, or a directory holding `scene.ibgs`.
    #[arg(long, required_unless_present = "resume")]
    scene: Option<PathBuf>,
    /// Checkpoint directory to write (defaults to the resumed one).
    #[arg(long, required_unless_present = "resume")]
    out: Option<PathBuf>,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// TOML file with any `TrainConfig` keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    over: TrainOverrides,
}

#[derive(Args, Default)]
struct TrainOverrides {
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    exposure_correction: Option<Switch>,
    #[arg(long)]
    residual: Option<Switch>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    gamma_final: Option<f64>,
    #[arg(long)]
    prune_threshold: Option<f64>,
    #[arg(long)]
    prune_every: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// Comma-separated camera ids (overrides --split).
    #[arg(long, value_delimiter = ',')]
    views: Vec<String>,
    /// Write base, residual and final images instead of the final image only.
    #[arg(long)]
    decompose: bool,
    #[arg(long)]
    exposure_correction: Option<Switch>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
    checkpoint: Option<PathBuf>,
    /// Evaluate a scene as is (no residual network).
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    #[arg(long)]
    exposure_correction: Option<Switch>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = STEP)]
    step: f64,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &a.config {
        Some(p) => read_toml(p)?,
        None => SynthSpec::default(),
    };
    if let Some(k) = &a.kind {
        let kind: SceneKind = k.parse()?;
        if a.config.is_none() {
            spec = SynthSpec::for_kind(kind);
        }
        spec.kind = kind;
    }
    if let Some(p) = &a.pattern {
        spec.pattern = p.parse::<Pattern>()?;
    }
    if let Some(i) = &a.init {
        spec.init = i.parse::<InitMode>()?;
    }
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { spec.$field = v; })* };
    }
    set!(frequency, views, width, height, focal_scale, radius, arc_degrees, jitter, gaussians, sh_degree, seed);
    if let Some(r) = a.res {
        spec.width = r;
        spec.height = r;
    }
    if let Some(v) = a.specular_strength {
        spec.specular.strength = v;
    }
    if let Some(v) = a.shininess {
        spec.specular.shininess = v;
    }
    let s = synthesize(&spec)?;

    let images = a.out.join("images");
    let depth = a.out.join("depth");
    for d in [&images, &depth] {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let mut paths = Vec::new();
    for (cam, view) in s.scene.cameras.iter().zip(&s.views) {
        let rel = format!("images/{}.png", cam.id);
        write_png(&a.out.join(&rel), &view.image, BitDepth::Sixteen)?;
        paths.push(rel);
        let mut text = String::new();
        for row in view.depth.chunks(cam.width) {
            let cells: Vec<String> = row.iter().map(|d| d.map_or_else(|| "nan".to_string(), |z| z.to_string())).collect();
            text.push_str(&cells.join(" "));
            text.push('\n');
        }
        std::fs::write(depth.join(format!("{}.txt", cam.id)), text)?;
    }
    let list = format_camera_list(s.scene.cameras.iter().zip(paths.iter().map(String::as_str)));
    std::fs::write(a.out.join("cameras.txt"), list)?;
    std::fs::write(a.out.join("synth.toml"), toml::to_string(&spec)?)?;
    s.scene.save(&a.out.join("scene.ibgs"))?;
    println!(
        "wrote {} views ({} train, {} test) and {} gaussians to {}",
        s.scene.cameras.len(),
        s.scene.train.len(),
        s.scene.test.len(),
        s.scene.gaussians.len(),
        a.out.display()
    );
    Ok(())
}

fn scene_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("scene.ibgs")
    } else {
        p.to_path_buf()
    }
}

fn apply_overrides(cfg: &mut TrainConfig, o: &TrainOverrides) {
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = o.$field { cfg.$field = v; })* };
    }
    set!(iters, warmup, seed, k, s, m, tau, lambda1, lambda2, gamma_final, prune_threshold, prune_every, log_every, checkpoint_every);
    if let Some(v) = o.exposure_correction {
        cfg.exposure_correction = v.on();
    }
    if let Some(v) = o.residual {
        cfg.residual = v.on();
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let (mut trainer, out) = match &a.resume {
        Some(dir) => {
            let mut cfg = match &a.config {
                Some(p) => read_toml(p)?,
                None => TrainConfig::from_toml(&std::fs::read_to_string(dir.join("config.toml"))?)?,
            };
            apply_overrides(&mut cfg, &a.over);
            cfg.validate()?;
            let t = Trainer::resume(dir, Some(cfg))?;
            (t, a.out.clone().unwrap_or_else(|| dir.clone()))
        }
        None => {
            let mut cfg = match &a.config {
                Some(p) => read_toml(p)?,
                None => TrainConfig::default(),
            };
            apply_overrides(&mut cfg, &a.over);
            let scene = Scene::load(&scene_path(a.scene.as_deref().expect("clap requires --scene")))?;
            (Trainer::new(scene, cfg)?, a.out.clone().expect("clap requires --out"))
        }
    };
    if trainer.iter >= trainer.cfg.iters {
        bail!("checkpoint is already at iteration {} of {}", trainer.iter, trainer.cfg.iters);
    }
    trainer.run(Some(&out), |r| println!("{}", serde_json::to_string(r).expect("metrics serialise")))?;
    log::info!("checkpoint written to {}", out.display());
    Ok(())
}

fn load_checkpoint(dir: &Path, exposure: Option<Switch>) -> Result<(Scene, ResidualNet, ViewParams)> {
    let t = Trainer::resume(dir, None).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    let mut params = t.cfg.view_params();
    if let Some(e) = exposure {
        params.exposure = e.on();
    }
    Ok((t.scene, t.net, params))
}

fn split_views(scene: &Scene, split: Split) -> Vec<usize> {
    match split {
        Split::Train => scene.train.clone(),
        Split::Test => scene.test.clone(),
        Split::All => (0..scene.cameras.len()).collect(),
    }
}

fn render(a: RenderArgs) -> Result<()> {
    let (scene, net, params) = load_checkpoint(&a.checkpoint, a.exposure_correction)?;
    let views = if a.views.is_empty() {
        split_views(&scene, a.split)
    } else {
        a.views
            .iter()
            .map(|id| scene.cameras.iter().position(|c| &c.id == id).with_context(|| format!("no camera with id {:?}", id)))
            .collect::<Result<_>>()?
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for vi in views {
        let cam = &scene.cameras[vi];
        let d = decompose(&scene.gaussians, &net, cam, &candidates_for(&scene, cam, params.s), &params)?;
        let save = |name: &str, img: &Image| write_png(&a.out.join(format!("{}_{}.png", cam.id, name)), img, BitDepth::Eight);
        save("final", &d.final_image)?;
        if a.decompose {
            save("base", &d.base)?;
            save("residual", &d.residual.map(|v| 0.5 + 0.5 * v))?;
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (scene, net, params) = match (&a.checkpoint, &a.scene) {
        (Some(dir), _) => load_checkpoint(dir, a.exposure_correction)?,
        (None, Some(p)) => {
            let mut params = TrainConfig::default().view_params();
            params.exposure = a.exposure_correction.is_some_and(Switch::on);
            (Scene::load(&scene_path(p))?, ResidualNet::zeros(), params)
        }
        (None, None) => bail!("need --checkpoint or --scene"),
    };
    let m = evaluate(&scene, &net, &params, &split_views(&scene, a.split))?;
    println!("{:<12} {:>10} {:>10} {:>10} {:>10}", "view", "psnr_base", "psnr_final", "ssim_base", "ssim_final");
    for v in &m {
        println!("{:<12} {:>10.3} {:>10.3} {:>10.4} {:>10.4}", v.id, v.psnr_base, v.psnr_final, v.ssim_base, v.ssim_final);
    }
    let mean = |f: fn(&ibgs_core::train::ViewMetrics) -> f64| m.iter().map(f).sum::<f64>() / m.len().max(1) as f64;
    println!(
        "{:<12} {:>10.3} {:>10.3} {:>10.4} {:>10.4}",
        "mean",
        mean(|v| v.psnr_base),
        mean(|v| v.psnr_final),
        mean(|v| v.ssim_base),
        mean(|v| v.ssim_final)
    );
    Ok(())
}

fn check_grads(a: CheckArgs) -> Result<bool> {
    let t0 = std::time::Instant::now();
    let checks = check_gradients(&GradFixture::new(a.seed), a.step)?;
    println!("{:<24} {:<7} {:>12} {:>8} {:>8}  result", "group", "loss", "max_rel_err", "checked", "floored");
    for c in &checks {
        println!(
            "{:<24} {:<7} {:>12.3e} {:>8} {:>8}  {}",
            c.group,
            c.loss,
            c.max_rel_error,
            c.checked,
            c.floored,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    let ok = checks.iter().all(|c| c.passed());
    println!("{} in {:.1}s", if ok { "all gradients pass" } else { "gradient check failed" }, t0.elapsed().as_secs_f64());
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Synth(a) => synth(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Render(a) => render(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::CheckGrads(a) => check_grads(a),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}
