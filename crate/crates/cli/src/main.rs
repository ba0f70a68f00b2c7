//! `pdm`: batch entry points for the anomaly detection and counterfactual
//! pipeline, plus the HTTP service.

mod args;

use std::fs;
use std::io::Write;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use pdm_core::balance::{smote_oversample, SmoteConfig};
use pdm_core::cf::{counterfactual_report, fit_explainer, greedy_counterfactual, plot_series, CounterfactualQuery};
use pdm_core::data::{
    concat_datasets, generate_synthetic_bearing, label_dataset, load_dataset, load_pronostia_dir, save_dataset, train_test_split,
    Dataset, Label, LabelingStats, SyntheticConfig,
};
use pdm_core::eval::{evaluate, kfold, KFoldConfig};
use pdm_core::tcn::{argmax, load_model, save_model, train, TcnConfig};
use serde::Serialize;
use serde_json::json;

use args::{Cli, Command, ExplainArgs, Format, SmoteArgs, TcnArgs};

enum Failure {
    /// Bad invocation; exit code 2.
    Usage(String),
    /// A pipeline step failed; exit code 1.
    Module(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Module(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Module(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Prints the report; a closed stdout (e.g. piped into `head`) is not an error.
fn emit(format: Format, table: &str, structured: &impl Serialize) {
    let text = match format {
        Format::Table => table.to_string(),
        Format::Structured => serde_json::to_string_pretty(structured).expect("serializable report") + "\n",
    };
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn write_dataset(ds: &Dataset, dir: &Path) -> anyhow::Result<()> {
    save_dataset(ds, dir).with_context(|| format!("writing dataset {}", dir.display()))
}

/// Refuses output directories that would overwrite an input dataset.
fn guard_inputs(outputs: &[PathBuf], inputs: &[&Path]) -> CliResult {
    for o in outputs {
        let Ok(o_abs) = o.canonicalize() else { continue };
        if let Some(input) = inputs.iter().find(|i| i.canonicalize().is_ok_and(|i| i == o_abs)) {
            return Err(Failure::Usage(format!(
                "output {} would overwrite input {}",
                o.display(),
                input.display()
            )));
        }
    }
    Ok(())
}

fn tcn_config(a: &TcnArgs, in_channels: usize, seed: u64) -> TcnConfig {
    TcnConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        dropout: a.dropout,
        kernel_size: a.kernel_size,
        levels: a.levels,
        learning_rate: a.learning_rate,
        hidden_per_level: a.hidden,
        in_channels,
        n_classes: 2,
        seed,
    }
}

fn smote_config(a: &SmoteArgs, seed: u64) -> SmoteConfig {
    SmoteConfig {
        k_neighbors: a.smote_k,
        target_ratio: a.smote_ratio,
        seed,
    }
}

fn dataset_table(ds: &Dataset) -> String {
    let [healthy, anomalous] = ds.class_counts();
    format!(
        "windows    {}\nchannels   {}\nwindow_len {}\nhealthy    {healthy}\nanomalous  {anomalous}\nunlabeled  {}\n",
        ds.len(),
        ds.channel_names.join(","),
        ds.window_len,
        ds.len() - healthy - anomalous
    )
}

fn dataset_summary(ds: &Dataset, path: &Path) -> serde_json::Value {
    let [healthy, anomalous] = ds.class_counts();
    json!({
        "path": path,
        "windows": ds.len(),
        "channel_names": ds.channel_names,
        "window_len": ds.window_len,
        "healthy": healthy,
        "anomalous": anomalous,
    })
}

fn labeling_table(stats: &LabelingStats, names: &[String]) -> String {
    let mut out = format!("{:<12} {:>10} {:>10} {:>10}\n", "channel", "rms_mean", "rms_std", "threshold");
    for (c, name) in names.iter().enumerate() {
        out += &format!(
            "{name:<12} {:>10.4} {:>10.4} {:>10.4}\n",
            stats.rms_mean[c], stats.rms_std[c], stats.threshold[c]
        );
    }
    out
}

fn run(cli: Cli) -> CliResult {
    let Cli { seed, out, jobs, format, command } = cli;
    match command {
        Command::Ingest { input, window_len } => {
            guard_inputs(&[out.clone()], &[&input])?;
            let ds = load_pronostia_dir(&input, window_len)
                .with_context(|| format!("ingesting {}", input.display()))?;
            write_dataset(&ds, &out)?;
            emit(format, &dataset_table(&ds), &dataset_summary(&ds, &out));
        }
        Command::Synth(a) => {
            let cfg = SyntheticConfig {
                n_windows: a.windows,
                window_len: a.window_len,
                channels: a.channels,
                base_amplitude: a.amplitude,
                degradation_onset: a.onset,
                degradation_rate: a.rate,
                noise_std: a.noise,
                seed,
                degrading_channels: a.degrading_channels,
            };
            let ds = generate_synthetic_bearing(&cfg).context("generating synthetic data")?;
            write_dataset(&ds, &out)?;
            emit(format, &dataset_table(&ds), &dataset_summary(&ds, &out));
        }
        Command::Label { dataset, holdout } => {
            let inputs: Vec<&Path> = dataset.iter().map(PathBuf::as_path).collect();
            guard_inputs(&[out.clone(), out.join("train"), out.join("test")], &inputs)?;
            let mut parts = Vec::with_capacity(inputs.len());
            let mut stats = Vec::with_capacity(inputs.len());
            let mut table = String::new();
            for input in &inputs {
                let (labeled, s) = label_dataset(&read_dataset(input)?)
                    .with_context(|| format!("labeling {}", input.display()))?;
                if inputs.len() > 1 {
                    table += &format!("{}\n", input.display());
                }
                table += &labeling_table(&s, &labeled.channel_names);
                parts.push(labeled);
                stats.push(s);
            }
            let labeled = if parts.len() == 1 {
                parts.pop().expect("one part")
            } else {
                concat_datasets(&parts).context("joining datasets")?
            };
            table += &dataset_table(&labeled);
            let mut report = json!({"labeling": stats, "dataset": dataset_summary(&labeled, &out)});
            match holdout {
                None => write_dataset(&labeled, &out)?,
                Some(fraction) => {
                    let (tr, te) = train_test_split(&labeled, fraction, seed).context("splitting")?;
                    write_dataset(&tr, &out.join("train"))?;
                    write_dataset(&te, &out.join("test"))?;
                    table += &format!("train      {}\ntest       {}\n", tr.len(), te.len());
                    report["train"] = dataset_summary(&tr, &out.join("train"));
                    report["test"] = dataset_summary(&te, &out.join("test"));
                }
            }
            emit(format, &table, &report);
        }
        Command::Balance { dataset, smote } => {
            guard_inputs(&[out.clone()], &[&dataset])?;
            let balanced = smote_oversample(&read_dataset(&dataset)?, &smote_config(&smote, seed))
                .context("oversampling")?;
            write_dataset(&balanced, &out)?;
            emit(format, &dataset_table(&balanced), &dataset_summary(&balanced, &out));
        }
        Command::Train { dataset, tcn } => {
            let ds = read_dataset(&dataset)?;
            let cfg = tcn_config(&tcn, ds.channels(), seed);
            let (model, report) = train(&ds, &cfg).context("training")?;
            save_model(&model, &out.join("model.json")).context("saving model")?;
            write_json(&out.join("train_report.json"), &report)?;
            let mut table = String::new();
            for (e, loss) in report.epoch_losses.iter().enumerate() {
                table += &format!("epoch {:>3}  loss {loss:.6}\n", e + 1);
            }
            table += &format!(
                "train accuracy {:.4}\nparameters     {}\nwall time      {:.2}s\nmodel          {}\n",
                report.train_accuracy,
                model.parameter_count(),
                report.wall_time_secs,
                out.join("model.json").display()
            );
            emit(format, &table, &report);
        }
        Command::Evaluate { model, dataset } => {
            let m = load_model(&model).with_context(|| format!("loading model {}", model.display()))?;
            let eval = evaluate(&m, &read_dataset(&dataset)?).context("evaluating")?;
            write_json(&out.join("evaluation.json"), &eval)?;
            let c = &eval.confusion;
            let table = format!("tp {}  fp {}  tn {}  fn {}\n", c.tp, c.fp, c.tn, c.fn_) + &eval.metrics.to_table();
            emit(format, &table, &eval);
        }
        Command::Kfold { dataset, folds, tcn, smote } => {
            let ds = read_dataset(&dataset)?;
            let cfg = KFoldConfig {
                k: folds,
                tcn: tcn_config(&tcn, ds.channels(), seed),
                smote: smote_config(&smote, seed),
                seed,
                jobs,
            };
            let report = kfold(&ds, &cfg).context("cross-validating")?;
            write_json(&out.join("kfold.json"), &report)?;
            let name = dataset.file_name().map_or("dataset".into(), |n| n.to_string_lossy().into_owned());
            emit(format, &report.to_table(&name), &report);
        }
        Command::Explain(a) => explain(a, &out, format)?,
        Command::Serve { data_dir, bind, explainer_cache, repeat_anomaly_events } => {
            let explainer_cache_size = NonZeroUsize::new(explainer_cache)
                .ok_or_else(|| Failure::Usage("--explainer-cache must be >= 1".into()))?;
            let config = pdm_service::ServiceConfig {
                data_dir,
                bind,
                explainer_cache_size,
                repeat_anomaly_events,
            };
            eprintln!("serving {} on http://{}", config.data_dir.display(), config.bind);
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            rt.block_on(pdm_service::serve(config)).context("serving")?;
        }
    }
    Ok(())
}

fn resolve_locks(locks: &[String], names: &[String]) -> CliResult<Vec<usize>> {
    if locks.iter().any(|l| l == "all") {
        return Ok((0..names.len()).collect());
    }
    locks
        .iter()
        .map(|l| {
            names
                .iter()
                .position(|n| n == l)
                .or_else(|| l.parse::<usize>().ok().filter(|&i| i < names.len()))
                .ok_or_else(|| Failure::Usage(format!("unknown channel {l:?} (channels: {})", names.join(", "))))
        })
        .collect()
}

fn explain(a: ExplainArgs, out: &Path, format: Format) -> CliResult {
    let model = load_model(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let ds = read_dataset(&a.dataset)?;
    let explainer_path: PathBuf = a.explainer_dataset.clone().unwrap_or_else(|| a.dataset.clone());
    let train_ds = if explainer_path == a.dataset { ds.clone() } else { read_dataset(&explainer_path)? };
    let window = ds
        .window(a.window_id)
        .ok_or_else(|| anyhow::anyhow!("window {} is not in {}", a.window_id, a.dataset.display()))?
        .clone();
    let locks = resolve_locks(&a.lock, &ds.channel_names)?;
    let ex = fit_explainer(Arc::new(model), &train_ds).context("fitting explainer")?;
    let target = match a.target_class {
        Some(t) => t,
        None => {
            let p = ex.model().predict_proba_one(&window).context("classifying window")?;
            Label::from_index(1 - argmax(&p)).expect("binary model")
        }
    };
    let query = CounterfactualQuery::new(window.clone(), target)
        .with_locks(locks)
        .with_distractors(a.distractors);
    match greedy_counterfactual(&ex, &query) {
        Ok(cf) => {
            let report = counterfactual_report(&cf, &window, ex.channel_names());
            write_json(&out.join("counterfactual.json"), &json!({"counterfactual": cf, "report": report}))?;
            if a.plot {
                let pos = ds.windows.iter().position(|w| w.id == window.id).expect("window exists");
                let context = pos.checked_sub(1).map(|p| &ds.windows[p]);
                write_json(&out.join("series.json"), &plot_series(&cf, &window, context, ex.channel_names()))?;
            }
            let mut table = format!(
                "window {}  target {}  distractor {}\nprobabilities before {:?}\nprobabilities after  {:?}\nsubstituted {:?}  distance {:.4}\n",
                cf.original_id,
                cf.target,
                cf.distractor_id.map_or("-".into(), |d| d.to_string()),
                cf.probabilities_before,
                cf.probabilities_after,
                report.changes.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(),
                cf.distance
            );
            for line in &report.narrative {
                table += &format!("{line}\n");
            }
            emit(format, &table, &json!({"status": "found", "counterfactual": cf, "report": report}));
            Ok(())
        }
        Err(pdm_core::Error::NoCounterfactualFound(failure)) => {
            write_json(&out.join("search_failure.json"), &failure)?;
            if format == Format::Structured {
                emit(format, "", &json!({"status": "not_found", "failure": failure}));
            }
            let mut msg = failure.message.clone();
            for advice in &failure.advice {
                msg += &format!("; try: {advice}");
            }
            Err(Failure::Module(anyhow::anyhow!("NoCounterfactualFound: {msg}")))
        }
        Err(e) => Err(anyhow::Error::new(e).context("searching for a counterfactual").into()),
    }
}
