//! File-based front end over the dvfkit library. Every subcommand reads
//! and writes MetaImage volumes or fields and leaves a resolved config
//! next to its outputs, so any run can be repeated from files alone.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use dvfkit::intensity::{add_noise, apply_sponge, jacobian_determinant, NoiseParams};
use dvfkit::io::config::ResolvedConfig;
use dvfkit::io::{landmarks, mhd};
use dvfkit::metrics::{bending_energy, huber, jacobian_stats, total_loss, LandmarkSet, LossParams};
use dvfkit::pairs::{chain_links, make_chain, pair_recipes, realize_pair, Manifest, MANIFEST_SCHEMA};
use dvfkit::pipeline::{
    compose, run_pipeline, stage_theta, warp_volume, ExecPredictor, IdentityPredictor,
    StagePredictor, TranslationPredictor,
};
use dvfkit::synth::{default_spec, generate, Category, FrequencyClass, Stage};
use dvfkit::{Error, Grid, Volume};

#[derive(Parser)]
#[command(
    name = "dvfkit",
    version,
    about = "Synthetic displacement fields, warping and registration evaluation for 3D volumes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate one displacement field and write it as a 3-channel image.
    GenDvf(GenDvfArgs),
    /// Expand one source volume into its full training pair set.
    MakePairs(MakePairsArgs),
    /// Warp a volume by a field, optionally with sponge model and noise.
    Deform(DeformArgs),
    /// Combine two fields into the field equivalent to applying both.
    Compose(ComposeArgs),
    /// Run the coarse-to-fine registration pipeline.
    Register(RegisterArgs),
    /// Score a predicted field against landmarks, optionally in a mask.
    Evaluate(EvaluateArgs),
    /// Compute the training loss between a reference and a prediction.
    Loss(LossArgs),
}

#[derive(Args)]
struct GenDvfArgs {
    /// Generator category: single, mixed, respiratory or identity.
    #[arg(long)]
    category: String,
    /// Resolution stage, named by downscale factor: 1, 2 or 4.
    #[arg(long)]
    stage: String,
    /// Frequency class: lowest, low, intermediate, high or highest.
    /// Required for every category except identity.
    #[arg(long)]
    class: Option<String>,
    /// Grid size in voxels as "X,Y,Z".
    #[arg(long, default_value = "64,64,64")]
    dims: String,
    /// Voxel spacing in mm as "X,Y,Z".
    #[arg(long, default_value = "1,1,1")]
    spacing: String,
    /// World position of voxel (0,0,0) in mm as "X,Y,Z".
    #[arg(long, default_value = "0,0,0")]
    origin: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Binary lung mask volume; required for the respiratory category.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Output field path (.mhd).
    #[arg(long)]
    out: PathBuf,
    /// Also write a 64-bin histogram of the Jacobian determinant (CSV).
    #[arg(long)]
    jac_hist: Option<PathBuf>,
}

#[derive(Args)]
struct MakePairsArgs {
    /// Source volume to expand (.mhd).
    #[arg(long)]
    input: PathBuf,
    /// Resolution stage, named by downscale factor: 1, 2 or 4.
    #[arg(long)]
    stage: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise level added to every fixed image.
    #[arg(long, default_value_t = 5.0)]
    sigma_n: f64,
    /// Binary lung mask volume; without it respiratory pairs are skipped.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Directory receiving pair files, manifest.json and run.cfg.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DeformArgs {
    /// Volume to warp (.mhd).
    #[arg(long)]
    input: PathBuf,
    /// Backward displacement field in mm (.mhd, 3 channels).
    #[arg(long)]
    field: PathBuf,
    /// Modulate intensities by the inverse Jacobian determinant.
    #[arg(long)]
    sponge: bool,
    /// Additive Gaussian noise level; omit for a noise-free result.
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Output volume path (.mhd).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ComposeArgs {
    /// Field applied first (.mhd).
    #[arg(long)]
    first: PathBuf,
    /// Field applied second, sampled at points the first one reaches (.mhd).
    #[arg(long)]
    second: PathBuf,
    /// Output field path (.mhd).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    /// Fixed (target) volume (.mhd).
    #[arg(long)]
    fixed: PathBuf,
    /// Moving volume to align to the fixed one (.mhd).
    #[arg(long)]
    moving: PathBuf,
    /// Downscale factors, coarse to fine, e.g. "4,2,1".
    #[arg(long, default_value = "4,2,1")]
    stages: String,
    /// Stage predictor: identity, translation, or exec:<program>.
    #[arg(long, default_value = "identity")]
    predictor: String,
    /// Directory receiving total.mhd, warped.mhd, per-stage residuals
    /// and run.cfg.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted field to score (.mhd).
    #[arg(long)]
    field: PathBuf,
    /// Landmark pair file: six columns per line, fixed point then moving.
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// Fixed-side landmark file, three columns per line.
    #[arg(long)]
    landmarks_fixed: Option<PathBuf>,
    /// Moving-side landmark file, three columns per line.
    #[arg(long)]
    landmarks_moving: Option<PathBuf>,
    /// Binary mask; adds folding and Jacobian spread to the summary.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Landmark coordinates are voxel indices of the field grid, not mm.
    #[arg(long)]
    index_coords: bool,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LossArgs {
    /// Reference field (.mhd).
    #[arg(long)]
    truth: PathBuf,
    /// Predicted field (.mhd).
    #[arg(long)]
    pred: PathBuf,
    /// Weight of the bending energy term.
    #[arg(long, default_value_t = 0.05)]
    gamma: f64,
    /// Write the loss gradient with respect to the prediction here (.mhd).
    #[arg(long)]
    grad_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // One parsable line per failure; embedded newlines (e.g. from
            // a predictor's stderr) are flattened.
            let msg = e.to_string().replace('\n', " | ");
            eprintln!("error: {}: {}", e.code(), msg);
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::GenDvf(a) => cmd_gen_dvf(a),
        Cmd::MakePairs(a) => cmd_make_pairs(a),
        Cmd::Deform(a) => cmd_deform(a),
        Cmd::Compose(a) => cmd_compose(a),
        Cmd::Register(a) => cmd_register(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Loss(a) => cmd_loss(a),
    }
}

fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| io_at(path, e))
}

fn ensure_dir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|e| io_at(path, e))
}

fn parse3f(s: &str, what: &str) -> Result<[f64; 3], Error> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Parameter(format!(
            "{what} must be three comma-separated numbers, got '{s}'"
        )));
    }
    let mut out = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p.trim().parse().map_err(|_| {
            Error::Parameter(format!("{what} component '{}' is not a number", p.trim()))
        })?;
    }
    Ok(out)
}

fn parse3u(s: &str, what: &str) -> Result<[usize; 3], Error> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Parameter(format!(
            "{what} must be three comma-separated integers, got '{s}'"
        )));
    }
    let mut out = [0usize; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p.trim().parse().map_err(|_| {
            Error::Parameter(format!(
                "{what} component '{}' is not a positive integer",
                p.trim()
            ))
        })?;
    }
    Ok(out)
}

fn join3<T: std::fmt::Display>(v: [T; 3]) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

fn read_mask(path: &Option<PathBuf>) -> Result<Option<Volume>, Error> {
    path.as_ref().map(mhd::read_volume).transpose()
}

/// Sibling path for the resolved config: "field.mhd" -> "field.run.cfg".
fn cfg_sibling(out: &Path) -> PathBuf {
    out.with_extension("run.cfg")
}

fn cmd_gen_dvf(a: GenDvfArgs) -> Result<(), Error> {
    let category = Category::from_str(&a.category)?;
    let stage = Stage::from_str(&a.stage)?;
    let class = match (&a.class, category) {
        (Some(c), _) => FrequencyClass::from_str(c)?,
        (None, Category::Identity) => FrequencyClass::Lowest,
        (None, _) => {
            return Err(Error::Parameter(format!(
                "--class is required for category {category}"
            )))
        }
    };
    let dims = parse3u(&a.dims, "--dims")?;
    let spacing = parse3f(&a.spacing, "--spacing")?;
    let origin = parse3f(&a.origin, "--origin")?;
    let grid = Grid::new(dims, spacing, origin)?;
    let mask = read_mask(&a.mask)?;

    let spec = default_spec(category, stage, class)?.with_seed(a.seed);
    let field = generate(&spec, grid, mask.as_ref())?;
    mhd::write_field(&a.out, &field)?;

    if let Some(hist) = &a.jac_hist {
        let jac = jacobian_determinant(&field)?;
        write_histogram(hist, &jac)?;
    }

    let mut cfg = ResolvedConfig::for_command("gen-dvf");
    cfg.set("run", "seed", a.seed);
    cfg.set("gen-dvf", "category", category);
    cfg.set("gen-dvf", "stage", stage);
    cfg.set("gen-dvf", "class", class);
    cfg.set("gen-dvf", "dims", join3(dims));
    cfg.set("gen-dvf", "spacing", join3(spacing));
    cfg.set("gen-dvf", "origin", join3(origin));
    cfg.set("gen-dvf", "seed", a.seed);
    if let Some(m) = &a.mask {
        cfg.set("gen-dvf", "mask", m.display());
    }
    cfg.set("gen-dvf", "out", a.out.display());
    if let Some(h) = &a.jac_hist {
        cfg.set("gen-dvf", "jac-hist", h.display());
    }
    cfg.write(cfg_sibling(&a.out))?;

    let max_comp = (0..3)
        .map(|ax| field.max_abs_component(ax))
        .fold(0.0, f64::max);
    println!(
        "gen-dvf: wrote {} (max |component| {:.6} mm)",
        a.out.display(),
        max_comp
    );
    Ok(())
}

fn write_histogram(path: &Path, v: &Volume) -> Result<(), Error> {
    const BINS: usize = 64;
    let (min, max) = v.min_max();
    let width = max - min;
    let mut counts = [0u64; BINS];
    for &x in v.data() {
        let i = if width == 0.0 {
            0
        } else {
            ((((x - min) / width) * BINS as f64) as usize).min(BINS - 1)
        };
        counts[i] += 1;
    }
    let mut out = String::from("lo,hi,count\n");
    for (i, c) in counts.iter().enumerate() {
        let lo = min + width * i as f64 / BINS as f64;
        let hi = min + width * (i + 1) as f64 / BINS as f64;
        out.push_str(&format!("{lo:.6},{hi:.6},{c}\n"));
    }
    write_text(path, &out)?;
    Ok(())
}

fn cmd_make_pairs(a: MakePairsArgs) -> Result<(), Error> {
    let stage = Stage::from_str(&a.stage)?;
    let source = mhd::read_volume(&a.input)?;
    let mask = read_mask(&a.mask)?;
    let source_id = a
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "source".to_string());

    let recipes = pair_recipes(stage, a.seed, a.sigma_n, mask.is_some())?;
    let links = chain_links(a.seed, recipes.len().saturating_sub(1));
    // The moving chain is inherently serial; pair realization is not.
    let chain = make_chain(&source, stage, &links)?;
    ensure_dir(&a.out_dir)?;

    recipes
        .par_iter()
        .filter(|r| !r.skipped)
        .map(|r| {
            let pair = realize_pair(&chain[r.index], r, mask.as_ref(), &source_id)?;
            let name = |role: &str| {
                a.out_dir
                    .join(format!("pair_{:03}_{}.{role}.mhd", r.index, r.basis))
            };
            mhd::write_volume(name("moving"), &pair.moving)?;
            mhd::write_volume(name("fixed"), &pair.fixed)?;
            mhd::write_field(name("truth"), &pair.truth)?;
            Ok(())
        })
        .collect::<Result<Vec<()>, Error>>()?;

    for r in recipes.iter().filter(|r| r.skipped) {
        eprintln!(
            "warning: skipped pair {:03} ({}): requires a lung mask",
            r.index, r.basis
        );
    }
    let requested = recipes.len();
    let produced = recipes.iter().filter(|r| !r.skipped).count();

    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        source_id,
        stage,
        seed: a.seed,
        sigma_n: a.sigma_n,
        with_mask: mask.is_some(),
        links,
        recipes,
    };
    write_text(&a.out_dir.join("manifest.json"), &manifest.to_json())?;

    let mut cfg = ResolvedConfig::for_command("make-pairs");
    cfg.set("run", "seed", a.seed);
    cfg.set("make-pairs", "input", a.input.display());
    cfg.set("make-pairs", "stage", stage);
    cfg.set("make-pairs", "seed", a.seed);
    cfg.set("make-pairs", "sigma-n", a.sigma_n);
    if let Some(m) = &a.mask {
        cfg.set("make-pairs", "mask", m.display());
    }
    cfg.set("make-pairs", "out-dir", a.out_dir.display());
    cfg.write(a.out_dir.join("run.cfg"))?;

    println!(
        "make-pairs: wrote {produced} of {requested} pairs to {}",
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_deform(a: DeformArgs) -> Result<(), Error> {
    let input = mhd::read_volume(&a.input)?;
    let field = mhd::read_field(&a.field)?;
    let mut out = warp_volume(&input, &field)?;
    let mut folded = None;
    if a.sponge {
        let jac = jacobian_determinant(&field)?;
        let (sponged, n) = apply_sponge(&out, &jac)?;
        out = sponged;
        folded = Some(n);
    }
    if let Some(sigma) = a.noise_sigma {
        out = add_noise(
            &out,
            &NoiseParams {
                sigma_n: sigma,
                seed: a.noise_seed,
            },
        )?;
    }
    mhd::write_volume(&a.out, &out)?;

    let mut cfg = ResolvedConfig::for_command("deform");
    cfg.set("deform", "input", a.input.display());
    cfg.set("deform", "field", a.field.display());
    cfg.set("deform", "sponge", a.sponge);
    if let Some(sigma) = a.noise_sigma {
        cfg.set("run", "seed", a.noise_seed);
        cfg.set("deform", "noise-sigma", sigma);
        cfg.set("deform", "noise-seed", a.noise_seed);
    }
    cfg.set("deform", "out", a.out.display());
    cfg.write(cfg_sibling(&a.out))?;

    match folded {
        Some(n) => println!(
            "deform: wrote {} ({n} folded voxels zeroed)",
            a.out.display()
        ),
        None => println!("deform: wrote {}", a.out.display()),
    }
    Ok(())
}

fn cmd_compose(a: ComposeArgs) -> Result<(), Error> {
    let first = mhd::read_field(&a.first)?;
    let second = mhd::read_field(&a.second)?;
    let combined = compose(&first, &second)?;
    mhd::write_field(&a.out, &combined)?;

    let mut cfg = ResolvedConfig::for_command("compose");
    cfg.set("compose", "first", a.first.display());
    cfg.set("compose", "second", a.second.display());
    cfg.set("compose", "out", a.out.display());
    cfg.write(cfg_sibling(&a.out))?;

    println!("compose: wrote {}", a.out.display());
    Ok(())
}

fn make_predictor(spec: &str, stage: Stage) -> Result<Box<dyn StagePredictor>, Error> {
    match spec {
        "identity" => Ok(Box::new(IdentityPredictor)),
        "translation" => Ok(Box::new(TranslationPredictor {
            window_mm: stage_theta(stage),
        })),
        other => {
            if let Some(path) = other.strip_prefix("exec:") {
                if path.is_empty() {
                    return Err(Error::Parameter(
                        "exec predictor needs a program path, e.g. exec:/usr/bin/mypredictor"
                            .to_string(),
                    ));
                }
                Ok(Box::new(ExecPredictor {
                    exe: PathBuf::from(path),
                }))
            } else {
                Err(Error::Parameter(format!(
                    "unknown predictor '{other}' (expected identity, translation or exec:<path>)"
                )))
            }
        }
    }
}

fn cmd_register(a: RegisterArgs) -> Result<(), Error> {
    let fixed = mhd::read_volume(&a.fixed)?;
    let moving = mhd::read_volume(&a.moving)?;
    let stages: Vec<Stage> = a
        .stages
        .split(',')
        .map(|s| Stage::from_str(s.trim()))
        .collect::<Result<_, _>>()?;
    let predictors: Vec<Box<dyn StagePredictor>> = stages
        .iter()
        .map(|s| make_predictor(&a.predictor, *s))
        .collect::<Result<_, _>>()?;
    let plan: Vec<(Stage, &dyn StagePredictor)> = stages
        .iter()
        .copied()
        .zip(predictors.iter().map(|p| p.as_ref()))
        .collect();

    let result = run_pipeline(&fixed, &moving, &plan)?;

    ensure_dir(&a.out_dir)?;
    mhd::write_field(a.out_dir.join("total.mhd"), &result.total)?;
    mhd::write_volume(a.out_dir.join("warped.mhd"), &result.warped_moving)?;
    for (stage, residual) in stages.iter().zip(&result.per_stage) {
        mhd::write_field(
            a.out_dir.join(format!("stage{}_residual.mhd", stage.factor())),
            residual,
        )?;
    }

    let mut cfg = ResolvedConfig::for_command("register");
    cfg.set("register", "fixed", a.fixed.display());
    cfg.set("register", "moving", a.moving.display());
    cfg.set(
        "register",
        "stages",
        stages
            .iter()
            .map(|s| s.factor().to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    cfg.set("register", "predictor", &a.predictor);
    cfg.set("register", "out-dir", a.out_dir.display());
    cfg.write(a.out_dir.join("run.cfg"))?;

    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    for r in &result.reports {
        println!(
            "stage {} ({}): max residual {:.6} mm, {:.3}s",
            r.factor,
            r.predictor,
            r.max_residual_mm,
            r.elapsed.as_secs_f64()
        );
    }
    println!(
        "register: wrote total.mhd, warped.mhd and per-stage residuals to {}",
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Error> {
    let field = mhd::read_field(&a.field)?;
    let lm = match (&a.landmarks, &a.landmarks_fixed, &a.landmarks_moving) {
        (Some(p), None, None) => landmarks::read_pairs(p)?,
        (None, Some(f), Some(m)) => landmarks::read_pair_files(f, m)?,
        _ => {
            return Err(Error::Parameter(
                "pass either --landmarks or both --landmarks-fixed and --landmarks-moving"
                    .to_string(),
            ))
        }
    };
    let lm = if a.index_coords {
        let g = *field.grid();
        let to_world = |p: [f64; 3]| {
            [
                g.origin[0] + p[0] * g.spacing[0],
                g.origin[1] + p[1] * g.spacing[1],
                g.origin[2] + p[2] * g.spacing[2],
            ]
        };
        LandmarkSet::new(
            lm.pairs()
                .iter()
                .map(|&(f, m)| (to_world(f), to_world(m)))
                .collect(),
        )?
    } else {
        lm
    };

    let report = dvfkit::metrics::tre(&lm, &field)?;
    let stats = match &a.mask {
        Some(p) => Some(jacobian_stats(&field, &mhd::read_volume(p)?)?),
        None => None,
    };

    for &i in &report.excluded {
        eprintln!("warning: landmark {i} is outside the field extent, excluded");
    }

    let mut csv = String::from("landmark,distance_mm\n");
    for &(i, d) in &report.distances {
        csv.push_str(&format!("{i},{d:.6}\n"));
    }
    match &stats {
        Some(s) => csv.push_str(&format!(
            "summary,{:.6},{:.6},{:.6},{:.6}\n",
            report.mean, report.std, s.percent_folding, s.std
        )),
        None => csv.push_str(&format!("summary,{:.6},{:.6}\n", report.mean, report.std)),
    }
    write_text(&a.out, &csv)?;

    let mut cfg = ResolvedConfig::for_command("evaluate");
    cfg.set("evaluate", "field", a.field.display());
    if let Some(p) = &a.landmarks {
        cfg.set("evaluate", "landmarks", p.display());
    }
    if let Some(p) = &a.landmarks_fixed {
        cfg.set("evaluate", "landmarks-fixed", p.display());
    }
    if let Some(p) = &a.landmarks_moving {
        cfg.set("evaluate", "landmarks-moving", p.display());
    }
    if let Some(p) = &a.mask {
        cfg.set("evaluate", "mask", p.display());
    }
    cfg.set("evaluate", "index-coords", a.index_coords);
    cfg.set("evaluate", "out", a.out.display());
    cfg.write(cfg_sibling(&a.out))?;

    let excluded = if report.excluded.is_empty() {
        String::new()
    } else {
        format!(" ({} excluded)", report.excluded.len())
    };
    println!(
        "evaluate: mean error {:.6} mm over {} landmarks{excluded}",
        report.mean,
        report.distances.len()
    );
    Ok(())
}

fn cmd_loss(a: LossArgs) -> Result<(), Error> {
    let truth = mhd::read_field(&a.truth)?;
    let pred = mhd::read_field(&a.pred)?;
    let params = LossParams::new(a.gamma);
    params.validate()?;

    let (h, _) = huber(&truth, &pred)?;
    let (b, _) = bending_energy(&pred)?;
    let total = h + a.gamma * b;

    if let Some(grad_path) = &a.grad_out {
        let (_, grad) = total_loss(&truth, &pred, &params)?;
        mhd::write_field(grad_path, &grad)?;

        let mut cfg = ResolvedConfig::for_command("loss");
        cfg.set("loss", "truth", a.truth.display());
        cfg.set("loss", "pred", a.pred.display());
        cfg.set("loss", "gamma", a.gamma);
        cfg.set("loss", "grad-out", grad_path.display());
        cfg.write(cfg_sibling(grad_path))?;
    }

    println!("huber = {h:.6}");
    println!("bending = {b:.6}");
    println!("total = {total:.6}");
    Ok(())
}
