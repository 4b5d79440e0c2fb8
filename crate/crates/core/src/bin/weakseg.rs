use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use weakseg::geometry::project_cloud;
use weakseg::harness::dataset::GEN_TAU;
use weakseg::harness::dataset::{load_sample, Dataset, SceneData, ViewSettings};
use weakseg::harness::eval::{evaluate, infer_cloud, EvalOptions};
use weakseg::harness::scene::{default_catalog, generate_scene, SceneSpec};
use weakseg::harness::{generate_views, train, TrainConfig};
use weakseg::model::{save_label_map, ClassCatalog, LabelMap2D, IGNORE_ID};
use weakseg::nn::checkpoint::load_checkpoint;
use weakseg::nn::GpfnParams;
use weakseg::render_loss::fusion::{direct_project, fuse, render_labels, save_ppm};
use weakseg::visibility::{distance_filter, DEFAULT_WINDOW};
use weakseg::{Error, Result};

#[derive(Parser)]
#[command(
    name = "weakseg",
    version,
    about = "Point cloud segmentation trained from 2D label maps"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic scenes and their views.
    Gen(GenArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Render a sample's prediction into a label map.
    Render(RenderArgs),
    /// Print oracle visibility statistics for a sample.
    OracleVis(OracleArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Scene spec file; repeat for several scenes.
    #[arg(long)]
    spec: Vec<PathBuf>,
    /// Random scenes to generate in addition to the spec files.
    #[arg(long, default_value_t = 0)]
    random: usize,
    /// Objects per random scene.
    #[arg(long, default_value_t = 5)]
    objects: usize,
    /// Surface density of random scenes (points per square meter).
    #[arg(long, default_value_t = 60.0)]
    density: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    views: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Class names, comma separated (default: floor,wall,ceiling,furniture).
    #[arg(long)]
    classes: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// `key = value` configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init_from: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 1024)]
    chunk: usize,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Sample directory (cloud.pc, view.cam, gt.lm).
    #[arg(long)]
    sample: PathBuf,
    /// Output path; `.ppm` writes a color image, anything else a label map.
    #[arg(long)]
    out: PathBuf,
    /// Write the last-writer-wins projection instead of fused labels.
    #[arg(long)]
    direct: bool,
    /// Project every point, ignoring the visibility head.
    #[arg(long)]
    no_mask: bool,
    #[arg(long, default_value_t = 1024)]
    chunk: usize,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    sample: PathBuf,
    #[arg(long, default_value_t = GEN_TAU)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
}

fn gen(a: GenArgs) -> Result<()> {
    let catalog = match &a.classes {
        Some(s) => ClassCatalog::new(s.split(',').map(|x| x.trim().to_string()).collect())?,
        None => default_catalog(),
    };
    let mut specs = a.spec.iter().map(|p| SceneSpec::load(p)).collect::<Result<Vec<_>>>()?;
    for i in 0..a.random {
        specs.push(SceneSpec::random(
            weakseg::harness::derive_seed(a.seed, &[i as u64]),
            a.objects,
            a.density,
        ));
    }
    if specs.is_empty() {
        return Err(Error::Config("nothing to generate: pass --spec or --random".into()));
    }
    let settings = ViewSettings::default();
    let mut scenes = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        if spec.class_count() > catalog.len() {
            return Err(Error::Config(format!(
                "scene {i} uses class {} but only {} classes are named",
                spec.class_count() - 1,
                catalog.len()
            )));
        }
        let cloud = generate_scene(spec)?;
        let samples = generate_views(
            &cloud,
            a.views,
            weakseg::harness::derive_seed(a.seed, &[1 << 32, i as u64]),
            &settings,
        )?;
        log::info!("scene {i}: {} points, {} views", cloud.len(), samples.len());
        scenes.push(SceneData {
            name: format!("scene_{i:03}"),
            cloud,
            samples,
        });
    }
    Dataset { catalog, scenes }.save(&a.out)
}

fn load_params(path: &std::path::Path) -> Result<GpfnParams<f32>> {
    Ok(load_checkpoint::<f32>(path)?)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let data = Dataset::load(&a.data)?;
    let init = a.init_from.as_deref().map(load_params).transpose()?;
    let out = train(&data, &config, init, Some(&a.out))?;
    if let Some(last) = out.log.last() {
        println!("{}", last.line());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let params = load_params(&a.ckpt)?;
    let data = Dataset::load(&a.data)?;
    let opts = EvalOptions {
        chunk: a.chunk,
        ..EvalOptions::default()
    };
    let report = evaluate(&params, &data, &opts)?.format();
    print!("{report}");
    if let Some(p) = &a.report {
        std::fs::write(p, &report).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let params = load_params(&a.ckpt)?;
    let sample = load_sample(&a.sample)?;
    let inf = infer_cloud(&params, &sample.cloud, sample.view.center(), a.chunk)?;
    let visible = inf.visible();
    let hits: Vec<_> = project_cloud(&sample.cloud, &sample.view)
        .into_iter()
        .enumerate()
        .filter_map(|(i, h)| h.filter(|_| a.no_mask || visible[i]))
        .collect();
    let probs: Vec<f64> = inf.probs.iter().map(|&p| p as f64).collect();
    let (w, h) = (sample.view.width, sample.view.height);
    let map: LabelMap2D = if a.direct {
        direct_project(&probs, inf.classes, &hits, w, h)
    } else {
        render_labels(&fuse(&probs, inf.classes, &hits, w, h))
    };
    if a.out.extension().is_some_and(|e| e == "ppm") {
        save_ppm(&map, &a.out).map_err(|e| Error::io(&a.out, e))?;
    } else {
        save_label_map(&map, inf.classes, &a.out)?;
    }
    let labeled = sample.gt2d.as_slice().iter().filter(|&&g| g != IGNORE_ID);
    let agree = sample
        .gt2d
        .as_slice()
        .iter()
        .zip(map.as_slice())
        .filter(|(&g, &p)| g != IGNORE_ID && g == p)
        .count();
    let n = labeled.count();
    if n > 0 {
        println!(
            "pixel agreement with gt2d: {agree}/{n} ({:.2}%)",
            100.0 * agree as f64 / n as f64
        );
    }
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> Result<()> {
    let sample = load_sample(&a.sample)?;
    let mask = distance_filter(&sample.cloud, &sample.view, a.tau, a.window)?;
    println!(
        "{} points, {} visible, {} occluded",
        mask.len(),
        mask.visible_count(),
        mask.len() - mask.visible_count()
    );
    if let Some(stored) = sample.cloud.visibility() {
        let same = stored.iter().zip(&mask.flags).filter(|(a, b)| a == b).count();
        println!("agreement with stored flags: {same}/{}", mask.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Gen(a) => gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Render(a) => cmd_render(a),
        Cmd::OracleVis(a) => cmd_oracle(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
