use std::collections::HashMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use protoad::data::{
    load_csv, load_csv_for_scoring, make_weak_split, split_weak_labels, synth_multimodal, write_csv, Dataset,
    SplitConfig, SynthConfig,
};
use protoad::experiment::{evaluate_samples, run_experiment, summarize, write_results, DataSpec, ExperimentSpec};
use protoad::metrics::evaluate;
use protoad::trainer::select_prototype_count;
use protoad::{fit, Error, ModelSnapshot};
use serde::Serialize;

use crate::args::{Cli, EvalArgs, ExperimentArgs, FitArgs, ScoreArgs, SelectKArgs, SynthArgs};

/// Progress messages; stdout is reserved for results.
pub struct Log {
    quiet: bool,
}

impl Log {
    pub fn new(quiet: bool) -> Self {
        Self { quiet }
    }

    pub fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// The `--out` file, or stdout.
fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(io::BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn rows(data: &Dataset) -> Vec<Vec<f64>> {
    data.samples.iter().map(|s| s.features.clone()).collect()
}

#[derive(Serialize)]
struct FitSummary {
    model: PathBuf,
    input_dim: usize,
    k: usize,
    epochs_run: usize,
    best_epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<protoad::EvalResult>,
}

pub fn fit_cmd(cli: &Cli, args: &FitArgs, log: &Log) -> Result<()> {
    let model_path = cli.out.as_deref().ok_or_else(|| anyhow!(Error::InvalidInput("fit needs --out <model path>".into())))?;
    let config = args.train_opts.to_config(cli.seed)?;
    let data = load_csv(&args.train, Some(&cli.label_column))?;
    let split = match args.labeled_ratio {
        Some(ratio) => make_weak_split(
            &data,
            &SplitConfig {
                labeled_anomaly_ratio: ratio,
                val_fraction: args.val_fraction,
                test_fraction: args.test_fraction,
                seed: cli.seed,
                target_contamination: None,
            },
        )?,
        None => {
            if args.test_out.is_some() {
                bail!(Error::InvalidInput("--test-out needs --labeled-ratio (weak labels carry no truth)".into()));
            }
            split_weak_labels(&data, args.val_fraction, cli.seed)?
        }
    };
    log.info(format!(
        "training on {} unlabeled rows and {} labeled anomalies ({} validation, {} test)",
        split.train_unlabeled.len(),
        split.train_anomalies.len(),
        split.val.len(),
        split.test.len()
    ));

    let out = fit(&split, &config)?;
    for r in &out.reports {
        log.info(format!(
            "epoch {:>3}  recon {:.5}  np {:.5}  score {:.5}  val {}",
            r.epoch,
            r.recon,
            r.np,
            r.score,
            r.val_objective.map_or("-".into(), |v| format!("{v:.5}"))
        ));
    }
    out.snapshot.save(model_path)?;
    log.info(format!("model written to {} (best epoch {})", model_path.display(), out.best_epoch));

    if let Some(p) = &args.report {
        let mut w = csv::Writer::from_path(p).with_context(|| format!("cannot create {}", p.display()))?;
        for r in &out.reports {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    if let Some(p) = &args.test_out {
        let test = Dataset {
            feature_names: data.feature_names.clone(),
            samples: split.test.clone(),
        };
        write_csv(p, &test, &cli.label_column)?;
    }
    let test = if split.test.is_empty() {
        None
    } else {
        Some(evaluate_samples(&out.snapshot, &split.test)?)
    };
    let summary = FitSummary {
        model: model_path.to_path_buf(),
        input_dim: out.snapshot.input_dim(),
        k: out.snapshot.model.bank.k(),
        epochs_run: out.reports.len(),
        best_epoch: out.best_epoch,
        test,
    };
    write_json(None, &summary)
}

pub fn score_cmd(cli: &Cli, args: &ScoreArgs, log: &Log) -> Result<()> {
    let snapshot = ModelSnapshot::load(&args.model)?;
    let data = load_csv_for_scoring(&args.input, &cli.label_column)?;
    let scores = snapshot.infer(&rows(&data))?;
    log.info(format!("scored {} rows", scores.len()));
    let mut w = csv::Writer::from_writer(output(cli.out.as_deref())?);
    w.write_record(["id", "score"])?;
    for (s, score) in data.samples.iter().zip(&scores) {
        // Default float formatting round-trips exactly.
        w.write_record([s.id.to_string(), score.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<(usize, f64)>> {
    #[derive(serde::Deserialize)]
    struct Row {
        id: usize,
        score: f64,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| input_error(path, e))?;
    r.deserialize::<Row>()
        .map(|row| row.map(|r| (r.id, r.score)).map_err(|e| input_error(path, e)))
        .collect()
}

fn read_truth(path: &Path, label: &str) -> Result<HashMap<usize, bool>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| input_error(path, e))?;
    let headers = r.headers().map_err(|e| input_error(path, e))?.clone();
    let col = headers
        .iter()
        .position(|h| h == label)
        .ok_or_else(|| anyhow!(Error::InvalidInput(format!("{}: no label column '{label}'", path.display()))))?;
    let id_col = headers.iter().position(|h| h == "id");
    let mut truth = HashMap::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| input_error(path, e))?;
        let id = match id_col {
            Some(c) => rec[c]
                .trim()
                .parse()
                .map_err(|_| input_error(path, format!("row {}: bad id '{}'", row + 1, &rec[c])))?,
            None => row,
        };
        let v = match rec[col].trim() {
            "0" => false,
            "1" => true,
            other => return Err(input_error(path, format!("row {}: label must be 0 or 1, got '{other}'", row + 1))),
        };
        if truth.insert(id, v).is_some() {
            return Err(input_error(path, format!("duplicate id {id}")));
        }
    }
    Ok(truth)
}

fn input_error(path: &Path, e: impl std::fmt::Display) -> anyhow::Error {
    anyhow!(Error::InvalidInput(format!("{}: {e}", path.display())))
}

pub fn eval_cmd(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let scores = read_scores(&args.scores)?;
    let truth = read_truth(&args.truth, &cli.label_column)?;
    if scores.len() != truth.len() {
        bail!(Error::InvalidInput(format!(
            "{} scores but {} truth rows",
            scores.len(),
            truth.len()
        )));
    }
    let labels: Vec<bool> = scores
        .iter()
        .map(|(id, _)| {
            truth
                .get(id)
                .copied()
                .ok_or_else(|| anyhow!(Error::InvalidInput(format!("score id {id} has no truth row"))))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = scores.iter().map(|(_, s)| *s).collect();
    write_json(cli.out.as_deref(), &evaluate(&values, &labels)?)
}

pub fn select_k_cmd(cli: &Cli, args: &SelectKArgs, log: &Log) -> Result<()> {
    let config = args.train_opts.to_config(cli.seed)?;
    let data = load_csv_for_scoring(&args.input, &cli.label_column)?;
    let sel = select_prototype_count(&rows(&data), &config)?;
    log.info(format!("chosen k = {}", sel.chosen));
    write_json(cli.out.as_deref(), &sel)
}

pub fn synth_cmd(cli: &Cli, args: &SynthArgs, log: &Log) -> Result<()> {
    let spec = DataSpec {
        n: args.n,
        anomaly_rate: args.anomaly_rate,
        dim: args.dim,
        k_true: args.k_true,
        anomaly_kind: args.anomaly_kind.into(),
        ..DataSpec::default()
    };
    spec.validate()?;
    let (n_normal, n_anomaly) = spec.counts();
    let data = synth_multimodal(&SynthConfig {
        n_normal,
        n_anomaly,
        dim: args.dim,
        k_true: args.k_true,
        anomaly_kind: spec.anomaly_kind,
        seed: cli.seed,
    })?;
    match &cli.out {
        Some(p) => write_csv(p, &data, &cli.label_column)?,
        None => bail!(Error::InvalidInput("synth needs --out <csv path>".into())),
    }
    log.info(format!("wrote {} rows ({} anomalies)", data.len(), data.n_anomalies()));
    Ok(())
}

pub fn experiment_cmd(cli: &Cli, args: &ExperimentArgs, log: &Log) -> Result<()> {
    let spec = ExperimentSpec {
        kind: args.kind.into(),
        data: DataSpec {
            n: args.n,
            anomaly_rate: args.anomaly_rate,
            dim: args.dim,
            k_true: args.k_true,
            anomaly_kind: args.anomaly_kind.into(),
            unseen_kind: args.unseen_kind.into(),
        },
        train: args.train_opts.to_config(cli.seed)?,
        split: SplitConfig {
            labeled_anomaly_ratio: args.labeled_ratio,
            ..SplitConfig::default()
        },
        grid: args.grid.clone(),
        seeds: args.seeds.clone(),
    };
    let rows = run_experiment(&spec)?;
    for c in summarize(&rows) {
        log.info(format!(
            "{} {:>10}  AUC-PR {:.3} ± {:.3}  AUC-ROC {:.3} ± {:.3}  ({} runs)",
            c.experiment, c.grid_param, c.auc_pr_mean, c.auc_pr_std, c.auc_roc_mean, c.auc_roc_std, c.runs
        ));
    }
    let mut w = output(cli.out.as_deref())?;
    write_results(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}
