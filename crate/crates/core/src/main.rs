use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use polar_kit::config::RunConfig;
use polar_kit::eval::{f1_suite, tusimple_metrics};
use polar_kit::geometry::{lpm_labels, pole_lattice};
use polar_kit::harness::bench::{bench_csv, bench_suppression, mode_r2, BENCH_MODES};
use polar_kit::harness::io::{
    read_text, read_versioned, round9, to_json_string, write_json, write_text, CandidateFile, LabelsFile, Meta,
    SceneFile, SceneSelection, SelectionFile, FORMAT_VERSION,
};
use polar_kit::harness::pipeline::{compare_modes, generate_scenes, prepare_scenes, ModeContext};
use polar_kit::harness::{thread_pool, SceneKind};
use polar_kit::{Error, Result};

/// Polar lane-anchor post-processing toolkit: synthetic scenes, suppression
/// comparisons, metrics and benchmarks.
#[derive(Parser)]
#[command(name = "polar-kit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run seed; with the config it determines every output byte except timings.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON config: `preset` ("sparse" | "dense") plus field overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic ground-truth scenes.
    GenScenes(Common),
    /// Dump local-pole targets for generated scenes.
    Labels {
        #[command(flatten)]
        common: Common,
        /// Positive radius of the local-pole targets (overrides the config).
        #[arg(long)]
        lambda_l: Option<f64>,
    },
    /// Generate scenes and candidates, run every configured suppression mode and evaluate.
    RunPipeline(Common),
    /// Score prediction files against ground-truth files with matching names.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Time the suppression stage for growing candidate counts.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated candidate counts.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long)]
        reps: Option<usize>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::preset(SceneKind::Dense)),
        Some(p) => RunConfig::from_json(&read_text(p)?, &p.display().to_string()),
    }
}

fn scene_name(id: usize) -> String {
    format!("scene_{id:04}.json")
}

fn scene_meta(id: usize, seed: u64, cfg: &RunConfig) -> Meta {
    let mut m = Meta::new();
    m.insert("scene".into(), json!(id));
    m.insert("run_seed".into(), json!(seed));
    m.insert("kind".into(), json!(cfg.scene.kind));
    m
}

fn gen_scenes(c: &Common) -> Result<()> {
    let cfg = load_config(c.config.as_deref())?;
    let scenes = generate_scenes(&cfg, c.seed)?;
    for (id, lanes) in scenes.iter().enumerate() {
        let file = SceneFile::from_lanes(cfg.scene.frame, lanes, None, scene_meta(id, c.seed, &cfg));
        write_json(&c.out.join("scenes").join(scene_name(id)), &file)?;
    }
    println!("wrote {} scenes to {}", scenes.len(), c.out.join("scenes").display());
    Ok(())
}

fn labels(c: &Common, lambda_l: Option<f64>) -> Result<()> {
    let mut cfg = load_config(c.config.as_deref())?;
    if lambda_l.is_some() {
        cfg.lpm.lambda_l = lambda_l;
    }
    let lpm = cfg.lpm.resolve()?;
    let frame = cfg.scene.frame;
    let poles = pole_lattice(&frame, lpm.grid_h, lpm.grid_w);
    let scenes = generate_scenes(&cfg, c.seed)?;
    for (id, lanes) in scenes.iter().enumerate() {
        let labels = lpm_labels(lanes, &poles, &lpm)?;
        let file = LabelsFile::new(frame, lpm.lambda_l, &labels, scene_meta(id, c.seed, &cfg));
        write_json(&c.out.join("labels").join(scene_name(id)), &file)?;
    }
    println!("wrote labels for {} scenes to {}", scenes.len(), c.out.join("labels").display());
    Ok(())
}

fn run_pipeline(c: &Common) -> Result<()> {
    let cfg = load_config(c.config.as_deref())?;
    let scenes = prepare_scenes(&cfg, c.seed)?;
    let ctx = ModeContext::from_config(&cfg)?;
    let runs = compare_modes(&scenes, &cfg.modes, &ctx)?;

    for s in &scenes {
        let meta = scene_meta(s.id, c.seed, &cfg);
        write_json(
            &c.out.join("scenes").join(scene_name(s.id)),
            &SceneFile::from_lanes(cfg.scene.frame, &s.gts, None, meta.clone()),
        )?;
        write_json(
            &c.out.join("candidates").join(scene_name(s.id)),
            &CandidateFile::from_set(cfg.scene.frame, &s.candidates, meta),
        )?;
    }

    let mut summary = String::from("mode,threshold,tp,fp,fn,precision,recall,f1,mf1\n");
    let mut timing = String::from("mode,scene,elapsed_ns\n");
    for run in &runs {
        let label = run.mode.label();
        write_text(&c.out.join("metrics").join(format!("{label}.csv")), &run.report.to_csv())?;
        write_text(&c.out.join("metrics").join(format!("{label}.json")), &(run.report.to_json() + "\n"))?;
        let selections = SelectionFile {
            version: FORMAT_VERSION,
            mode: label.clone(),
            scenes: scenes
                .iter()
                .zip(&run.selections)
                .map(|(s, sel)| SceneSelection {
                    scene: s.id,
                    candidates_sha256: s.hash.clone(),
                    selected: sel.clone(),
                })
                .collect(),
        };
        write_json(&c.out.join("selections").join(format!("{label}.json")), &selections)?;
        for m in &run.report.per_threshold {
            summary.push_str(&format!(
                "{label},{},{},{},{},{},{},{},{}\n",
                round9(m.threshold),
                m.tp,
                m.fp,
                m.fn_,
                round9(m.precision),
                round9(m.recall),
                round9(m.f1),
                round9(run.report.mf1)
            ));
        }
        for (s, ns) in scenes.iter().zip(&run.elapsed_ns) {
            timing.push_str(&format!("{label},{},{ns}\n", s.id));
        }
    }
    write_text(&c.out.join("summary.csv"), &summary)?;
    write_text(&c.out.join("timing.csv"), &timing)?;
    print!("{summary}");
    Ok(())
}

fn json_files(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })?;
    let mut names = Vec::new();
    for e in entries {
        let e = e.map_err(|source| Error::Io { path: dir.display().to_string(), source })?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name.ends_with(".json") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn eval(pred: &Path, gt: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let names = json_files(gt)?;
    let pred_names = json_files(pred)?;
    if names != pred_names {
        return Err(Error::InvalidInput(format!(
            "prediction files {pred_names:?} do not match ground-truth files {names:?}"
        )));
    }
    let mut preds = Vec::with_capacity(names.len());
    let mut gts = Vec::with_capacity(names.len());
    for name in &names {
        let g: SceneFile = read_versioned(&gt.join(name))?;
        let p: SceneFile = read_versioned(&pred.join(name))?;
        if g.frame != p.frame {
            return Err(Error::InvalidInput(format!("{name}: prediction and ground-truth frames differ")));
        }
        gts.push(g.lanes()?);
        preds.push(p.lanes()?);
    }
    let report = f1_suite(&preds, &gts, &cfg.eval.iou_thresholds, cfg.eval.w_base)?;
    let ts = tusimple_metrics(&preds, &gts)?;
    write_text(&out.join("metrics.csv"), &report.to_csv())?;
    write_text(&out.join("metrics.json"), &(report.to_json() + "\n"))?;
    let ts_json = json!({
        "accuracy": round9(ts.accuracy),
        "fpr": round9(ts.fpr),
        "fnr": round9(ts.fnr),
    });
    write_text(&out.join("tusimple.json"), &to_json_string(&ts_json))?;
    print!("{}", report.to_csv());
    Ok(())
}

fn bench(c: &Common, ks: Option<Vec<usize>>, reps: Option<usize>) -> Result<()> {
    let cfg = load_config(c.config.as_deref())?;
    let ks = ks.unwrap_or(cfg.bench.ks.clone());
    let reps = reps.unwrap_or(cfg.bench.repetitions);
    if ks.is_empty() || ks.contains(&0) || reps == 0 {
        return Err(Error::InvalidInput("candidate counts and repetitions must be positive".into()));
    }
    let rows = bench_suppression(&ks, reps, c.seed, &cfg.scene.frame, &cfg.thresholds)?;
    write_text(&c.out.join("bench.csv"), &bench_csv(&rows))?;
    let mut fit = serde_json::Map::new();
    for mode in BENCH_MODES {
        fit.insert(mode.into(), json!(round9(mode_r2(&rows, mode))));
    }
    write_text(&c.out.join("bench_fit.json"), &to_json_string(&json!({ "quadratic_r2": fit })))?;
    print!("{}", bench_csv(&rows));
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenScenes(c) => gen_scenes(&c),
        Command::Labels { common, lambda_l } => labels(&common, lambda_l),
        Command::RunPipeline(c) => run_pipeline(&c),
        Command::Eval { pred, gt, config, out } => eval(&pred, &gt, config.as_deref(), &out),
        Command::Bench { common, ks, reps } => bench(&common, ks, reps),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = thread_pool().and_then(|pool| pool.install(|| dispatch(cli)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
