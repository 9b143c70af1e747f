//! Command-line front end: `train`, `eval --experiment NAME` and `report`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::config::CliConfig;
use crate::error::{Error, Result};
use crate::harness::{
    cluster_separation, ensemble_curve, layer_sweep, llm_vlm_transfer_eval, noise_eval, overhead_bench,
    overriding_eval, rep_evolution_report, run_transfer_eval, write_csv, write_json, write_svg_lines, LineSeries,
    RunConfig, SweepResult,
};
use crate::model::{
    fine_tune_modality, load_checkpoint, save_checkpoint, train_model, Checkpoint, TrainProgress,
};
use crate::tasks::{build_task_suite, split_pool, EpisodeStream, TaskSuite};

#[derive(Parser, Debug)]
#[command(name = "taskvec", about = "Train toy dual-modality transformers and run task-vector experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the text-only base model and, if configured, its image fine-tune.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        dry_run: bool,
        /// Override the model and data seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run one experiment against trained checkpoints.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        experiment: Experiment,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Collate every result in the output directory into `report.md`.
    Report {
        #[arg(long, required_unless_present = "output")]
        config: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Transfer,
    Sweep,
    LlmVlm,
    Ensemble,
    Override,
    RepEvolution,
    Cluster,
    Overhead,
    Noise,
}

impl Experiment {
    pub fn file_stem(self) -> &'static str {
        match self {
            Experiment::Transfer => "transfer",
            Experiment::Sweep => "sweep",
            Experiment::LlmVlm => "llm_vlm",
            Experiment::Ensemble => "ensemble",
            Experiment::Override => "override",
            Experiment::RepEvolution => "rep_evolution",
            Experiment::Cluster => "cluster",
            Experiment::Overhead => "overhead",
            Experiment::Noise => "noise",
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code: 0 success, 2 usage or configuration
/// error, 3 runtime failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidConfig(_) | Error::Io { .. } => 2,
                _ => 3,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train {
            config,
            dry_run,
            seed,
            output,
        } => {
            let mut cfg = CliConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.model.seed = s;
                cfg.training.data_seed = s;
            }
            let out = output.unwrap_or_else(|| cfg.output_dir());
            if dry_run {
                println!("# output: {}\n# config hash: {}", out.display(), cfg.hash()?);
                print!("{}", cfg.to_toml()?);
                return Ok(());
            }
            cmd_train(&cfg, &out)
        }
        Command::Eval {
            config,
            experiment,
            output,
        } => {
            let cfg = CliConfig::load(&config)?;
            let out = output.unwrap_or_else(|| cfg.output_dir());
            cmd_eval(&cfg, &out, experiment)
        }
        Command::Report { config, output } => {
            let out = match (output, config) {
                (Some(o), _) => o,
                (None, Some(c)) => CliConfig::load(&c)?.output_dir(),
                (None, None) => return Err(Error::Config("report needs --config or --output".into())),
            };
            let report = cmd_report(&out)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", report.path.display());
            Ok(())
        }
    }
}

pub fn base_checkpoint_path(out: &Path) -> PathBuf {
    out.join("checkpoints").join("base.ckpt")
}

pub fn tuned_checkpoint_path(out: &Path) -> PathBuf {
    out.join("checkpoints").join("tuned.ckpt")
}

fn results_dir(out: &Path) -> PathBuf {
    out.join("results")
}

fn logger(label: &'static str, every: usize) -> impl FnMut(TrainProgress) {
    move |p: TrainProgress| {
        if every > 0 && p.step.is_multiple_of(every) {
            eprintln!("[{label}] step {:>6}  loss {:.4}  lr {:.2e}", p.step, p.loss, p.lr);
        }
    }
}

/// Trains the base checkpoint and, when enabled, the fine-tuned one.
pub fn train_checkpoints(cfg: &CliConfig, suite: &TaskSuite) -> Result<(Checkpoint, Checkpoint)> {
    let hash = cfg.training_hash()?;
    let model_cfg = cfg.model_config(suite.vocab.size());
    let t = &cfg.training;
    let mut data = EpisodeStream::new(suite, t.base_mixture.clone(), t.data_seed)?;
    let mut log = logger("base", t.log_every);
    let base = train_model(&model_cfg, &mut data, &t.base, &t.base_mixture.describe(), Some(&mut log))?
        .with_config_hash(&hash);
    if !t.fine_tune {
        return Ok((base.clone(), base));
    }
    let mut data = EpisodeStream::new(suite, t.fine_tune_mixture.clone(), t.data_seed.wrapping_add(1))?;
    let mut log = logger("fine-tune", t.log_every);
    let tuned = fine_tune_modality(
        &base,
        &model_cfg,
        &mut data,
        &t.fine_tune_hparams,
        t.fine_tune_lr_multiplier,
        &t.fine_tune_mixture.describe(),
        Some(&mut log),
    )?
    .with_config_hash(&hash);
    Ok((base, tuned))
}

fn cmd_train(cfg: &CliConfig, out: &Path) -> Result<()> {
    let suite = build_task_suite(&cfg.suite)?;
    let splits: Vec<_> = suite
        .tasks
        .iter()
        .map(|t| split_pool(t, cfg.experiments.split_seed))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flat_map(|(v, t)| [v, t])
        .collect();
    let hash = cfg.hash()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    suite.export(&splits, Some(&hash), out.join("suite.json"))?;
    let (base, tuned) = train_checkpoints(cfg, &suite)?;
    save_checkpoint(&base, base_checkpoint_path(out))?;
    eprintln!("base checkpoint {} -> {}", base.id(), base_checkpoint_path(out).display());
    save_checkpoint(&tuned, tuned_checkpoint_path(out))?;
    eprintln!("tuned checkpoint {} -> {}", tuned.id(), tuned_checkpoint_path(out).display());
    Ok(())
}

fn load_trained(out: &Path) -> Result<(Checkpoint, Checkpoint)> {
    let missing = |p: PathBuf| Error::Experiment(format!("missing checkpoint {}; run `taskvec train` first", p.display()));
    let base_path = base_checkpoint_path(out);
    let tuned_path = tuned_checkpoint_path(out);
    if !base_path.exists() {
        return Err(missing(base_path));
    }
    if !tuned_path.exists() {
        return Err(missing(tuned_path));
    }
    Ok((load_checkpoint(base_path)?, load_checkpoint(tuned_path)?))
}

#[derive(Deserialize)]
struct StoredSweep {
    config_hash: String,
    results: SweepResult,
}

/// The patch layer: the configured one, else the stored sweep result for
/// this config, else a fresh sweep (which is then stored).
fn resolve_layer(cfg: &CliConfig, run: &RunConfig, tuned: &Checkpoint, suite: &TaskSuite, out: &Path) -> Result<usize> {
    if let Some(l) = run.layer {
        return Ok(l);
    }
    let path = results_dir(out).join("sweep.json");
    let hash = cfg.hash()?;
    if let Ok(text) = std::fs::read_to_string(&path) {
        let stored: StoredSweep = serde_json::from_str(&text)?;
        if stored.config_hash == hash {
            return Ok(stored.results.selected_layer);
        }
        eprintln!("stored sweep has config hash {}, expected {hash}; re-running", stored.config_hash);
    }
    let sweep = layer_sweep(tuned, suite, run)?;
    write_sweep(cfg, out, &sweep)?;
    Ok(sweep.selected_layer)
}

fn write_sweep(cfg: &CliConfig, out: &Path, sweep: &SweepResult) -> Result<()> {
    let hash = cfg.hash()?;
    let dir = results_dir(out);
    write_json(dir.join("sweep.json"), "sweep", &hash, cfg, sweep)?;
    let rows: Vec<Vec<String>> = sweep
        .layers
        .iter()
        .zip(&sweep.accuracy)
        .map(|(l, a)| vec![l.to_string(), fmt(*a), (*l == sweep.selected_layer).to_string()])
        .collect();
    write_csv(dir.join("sweep.csv"), &hash, &["layer", "val_accuracy", "selected"], &rows)?;
    let points = sweep.layers.iter().zip(&sweep.accuracy).map(|(&l, &a)| (l as f64, a)).collect();
    write_svg_lines(
        dir.join("sweep.svg"),
        "Patch accuracy by layer (validation)",
        "layer",
        "accuracy",
        &hash,
        &[LineSeries {
            name: "patch".into(),
            points,
        }],
    )
}

fn fmt(x: f64) -> String {
    format!("{x:.4}")
}

/// Runs one experiment and writes its JSON, CSV and (for curves) SVG.
pub fn cmd_eval(cfg: &CliConfig, out: &Path, experiment: Experiment) -> Result<()> {
    let suite = build_task_suite(&cfg.suite)?;
    let run = cfg.run_config();
    let (base, tuned) = load_trained(out)?;
    let hash = cfg.hash()?;
    let dir = results_dir(out);
    let stem = experiment.file_stem();
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}.csv"));
    match experiment {
        Experiment::Sweep => {
            let sweep = layer_sweep(&tuned, &suite, &run)?;
            write_sweep(cfg, out, &sweep)?;
        }
        Experiment::Transfer => {
            let layer = resolve_layer(cfg, &run, &tuned, &suite, out)?;
            let rows = run_transfer_eval(&tuned, &suite, &run, layer)?;
            write_json(&json, stem, &hash, cfg, &serde_json::json!({ "layer": layer, "rows": rows }))?;
            // One line per method and query modality, one column per task.
            let mut table: BTreeMap<(usize, String), Vec<String>> = BTreeMap::new();
            let mut order = Vec::new();
            for r in &rows {
                let key = (r.method.clone(), format!("{:?}", r.query_modality));
                if !order.contains(&key) {
                    order.push(key.clone());
                }
                let idx = order.iter().position(|k| *k == key).unwrap();
                table
                    .entry((idx, key.0.clone()))
                    .or_insert_with(|| vec![key.0.clone(), key.1.clone()])
                    .push(fmt(r.accuracy_mean));
            }
            let mut header = vec!["method".to_string(), "query_modality".to_string()];
            header.extend(suite.tasks.iter().map(|t| t.name.clone()));
            header.push("average".into());
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            write_csv(&csv, &hash, &header, &table.into_values().collect::<Vec<_>>())?;
        }
        Experiment::LlmVlm => {
            let layer = resolve_layer(cfg, &run, &tuned, &suite, out)?;
            let r = llm_vlm_transfer_eval(&base, &tuned, &suite, &run, layer)?;
            write_json(&json, stem, &hash, cfg, &r)?;
            let row = vec![
                layer.to_string(),
                fmt(r.matched_cosine),
                fmt(r.mismatched_cosine),
                fmt(r.patch_accuracy),
                fmt(r.no_context_accuracy),
            ];
            write_csv(
                &csv,
                &hash,
                &["layer", "matched_cosine", "mismatched_cosine", "base_patch_accuracy", "no_context_accuracy"],
                &[row],
            )?;
        }
        Experiment::Ensemble => {
            let layer = resolve_layer(cfg, &run, &tuned, &suite, out)?;
            let c = ensemble_curve(&tuned, &suite, &run, layer)?;
            write_json(&json, stem, &hash, cfg, &c)?;
            let rows: Vec<Vec<String>> = c
                .points
                .iter()
                .map(|p| {
                    vec![
                        p.n.to_string(),
                        fmt(p.examples_mean),
                        fmt(p.examples_var),
                        fmt(p.instruction_mean),
                        fmt(p.instruction_var),
                        fmt(p.ensemble_mean),
                        fmt(p.ensemble_var),
                    ]
                })
                .collect();
            write_csv(
                &csv,
                &hash,
                &["n", "examples", "examples_var", "instruction", "instruction_var", "ensemble", "ensemble_var"],
                &rows,
            )?;
            let series = |name: &str, f: fn(&crate::harness::EnsemblePoint) -> f64| LineSeries {
                name: name.into(),
                points: c.points.iter().map(|p| (p.n as f64, f(p))).collect(),
            };
            write_svg_lines(
                dir.join(format!("{stem}.svg")),
                "Patch accuracy vs number of examples",
                "examples",
                "accuracy",
                &hash,
                &[
                    series("examples", |p| p.examples_mean),
                    series("instruction", |p| p.instruction_mean),
                    series("ensemble", |p| p.ensemble_mean),
                ],
            )?;
        }
        Experiment::Override => {
            let layer = resolve_layer(cfg, &run, &tuned, &suite, out)?;
            let rows = overriding_eval(&tuned, &suite, &run, layer)?;
            write_json(&json, stem, &hash, cfg, &serde_json::json!({ "layer": layer, "rows": rows }))?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.condition.clone(),
                        fmt(r.success_rate),
                        fmt(r.original_rate),
                        r.n_judged.to_string(),
                        r.n_skipped.to_string(),
                    ]
                })
                .collect();
            write_csv(&csv, &hash, &["condition", "override_success", "original_task", "judged", "skipped"], &table)?;
        }
        Experiment::RepEvolution => {
            let r = rep_evolution_report(&tuned, &suite, &run)?;
            write_json(&json, stem, &hash, cfg, &r)?;
            let mut rows = Vec::new();
            for c in &r.curves {
                for (l, p) in c.mean.iter().enumerate() {
                    rows.push(vec![
                        suite.tasks[c.task_id].name.clone(),
                        format!("{:?}", c.modality),
                        l.to_string(),
                        fmt(p[0]),
                        fmt(p[1]),
                        fmt(p[2]),
                    ]);
                }
            }
            write_csv(&csv, &hash, &["task", "modality", "layer", "p_input", "p_task", "p_answer"], &rows)?;
            for m in &run.spec_modalities {
                let curves: Vec<_> = r.curves.iter().filter(|c| c.modality == *m).collect();
                let n_layers = curves.first().map_or(0, |c| c.mean.len());
                let avg = |k: usize| LineSeries {
                    name: ["input", "task", "answer"][k].into(),
                    points: (0..n_layers)
                        .map(|l| (l as f64, curves.iter().map(|c| c.mean[l][k]).sum::<f64>() / curves.len() as f64))
                        .collect(),
                };
                write_svg_lines(
                    dir.join(format!("{stem}_{}.svg", format!("{m:?}").to_lowercase())),
                    &format!("Relative probability by layer ({m:?} examples)"),
                    "layer",
                    "relative probability",
                    &hash,
                    &[avg(0), avg(1), avg(2)],
                )?;
            }
        }
        Experiment::Cluster => {
            let layer = resolve_layer(cfg, &run, &tuned, &suite, out)?;
            let vectors = crate::harness::cluster_vectors(&tuned, &suite, &run, layer)?;
            let r = cluster_separation(&vectors)?;
            write_json(&json, stem, &hash, cfg, &r)?;
            let rows: Vec<Vec<String>> = r
                .projection
                .iter()
                .zip(r.task_ids.iter().zip(&r.modalities))
                .map(|(p, (t, m))| vec![suite.tasks[*t].name.clone(), format!("{m:?}"), fmt(p[0]), fmt(p[1])])
                .collect();
            write_csv(&csv, &hash, &["task", "modality", "pc1", "pc2"], &rows)?;
        }
        Experiment::Overhead => {
            let layer = resolve_layer(cfg, &run, &tuned, &suite, out)?;
            let r = overhead_bench(&tuned, &suite, &run, layer)?;
            write_json(&json, stem, &hash, cfg, &r)?;
            let rows = vec![
                vec!["prompt".into(), format!("{:.6e}", r.prompt_seconds), r.prompt_tokens.to_string(), r.prompt_working_set.to_string()],
                vec!["patch".into(), format!("{:.6e}", r.patch_seconds), r.query_tokens.to_string(), r.query_working_set.to_string()],
                vec!["query".into(), format!("{:.6e}", r.query_seconds), r.query_tokens.to_string(), r.query_working_set.to_string()],
            ];
            write_csv(&csv, &hash, &["condition", "seconds", "tokens", "working_set_bytes"], &rows)?;
        }
        Experiment::Noise => {
            let layer = resolve_layer(cfg, &run, &tuned, &suite, out)?;
            let rows = noise_eval(&tuned, &suite, &run, layer)?;
            write_json(&json, stem, &hash, cfg, &serde_json::json!({ "layer": layer, "rows": rows }))?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![r.swaps.to_string(), r.method.clone(), fmt(r.accuracy_mean)])
                .collect();
            write_csv(&csv, &hash, &["swaps", "method", "accuracy"], &table)?;
        }
    }
    eprintln!("wrote {}", dir.join(stem).display());
    Ok(())
}

pub struct Report {
    pub path: PathBuf,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct ResultHead {
    experiment: String,
    config_hash: String,
}

/// Collates `results/*.json` (with their CSV tables) into `report.md`.
pub fn cmd_report(out: &Path) -> Result<Report> {
    let dir = results_dir(out);
    let mut entries: Vec<PathBuf> = match std::fs::read_dir(&dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(_) => Vec::new(),
    };
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Experiment(format!("no results in {}", dir.display())));
    }
    let mut heads = Vec::new();
    for p in &entries {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let head: ResultHead =
            serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", p.display())))?;
        heads.push((p.clone(), head));
    }
    let mut hashes: Vec<&str> = heads.iter().map(|(_, h)| h.config_hash.as_str()).collect();
    hashes.sort();
    hashes.dedup();
    let mut warnings = Vec::new();
    if hashes.len() > 1 {
        warnings.push(format!("results come from {} different configs: {}", hashes.len(), hashes.join(", ")));
    }

    let mut s = String::from("# Task-vector experiment report\n\n");
    for w in &warnings {
        let _ = writeln!(s, "> warning: {w}\n");
    }
    for (p, head) in &heads {
        let _ = writeln!(s, "## {}\n\nconfig hash `{}`\n", head.experiment, head.config_hash);
        let csv_path = p.with_extension("csv");
        if let Ok(mut rdr) = csv::Reader::from_path(&csv_path) {
            let header: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
            let _ = writeln!(s, "| {} |", header.join(" | "));
            let _ = writeln!(s, "|{}|", vec!["---"; header.len()].join("|"));
            for rec in rdr.records() {
                let rec = rec?;
                let cells: Vec<&str> = rec.iter().skip(1).collect();
                let _ = writeln!(s, "| {} |", cells.join(" | "));
            }
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "Full results: `{}`\n",
            p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
        );
    }
    let path = out.join("report.md");
    std::fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
    Ok(Report { path, warnings })
}

