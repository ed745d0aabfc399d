//! Seeded experiment harnesses over synthetic multi-modal data.
//!
//! Every run regenerates its data, split and model from the run seed, so a
//! results table is a pure function of the experiment spec. Runs execute
//! in parallel and are reported in grid-major, seed-minor order.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    make_weak_split, AnomalyKind, Dataset, MixtureGenerator, Sample, SplitConfig, Truth, WeakSplit,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalResult};
use crate::prototypes::KChoice;
use crate::trainer::{fit, Ablation, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Grid: labeled anomaly ratio in percent.
    RatioSweep,
    /// Grid: contamination of the unlabeled pool in percent.
    ContaminationSweep,
    /// Train on one anomaly kind, test on both. Grid ignored.
    Unseen,
    /// Grid: fixed prototype count.
    KSensitivity,
    /// Grid: 0 for the full model, `i` for switching off the i-th entry of
    /// [`Ablation::COMPONENTS`].
    Ablation,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::RatioSweep => "ratio_sweep",
            ExperimentKind::ContaminationSweep => "contamination_sweep",
            ExperimentKind::Unseen => "unseen",
            ExperimentKind::KSensitivity => "k_sensitivity",
            ExperimentKind::Ablation => "ablation",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ratio_sweep" => ExperimentKind::RatioSweep,
            "contamination_sweep" => ExperimentKind::ContaminationSweep,
            "unseen" => ExperimentKind::Unseen,
            "k_sensitivity" => ExperimentKind::KSensitivity,
            "ablation" => ExperimentKind::Ablation,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown experiment '{other}' (expected ratio_sweep, contamination_sweep, \
                     unseen, k_sensitivity or ablation)"
                )))
            }
        })
    }
}

/// Parameters of the synthetic data family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub n: usize,
    /// Fraction of `n` that is anomalous.
    pub anomaly_rate: f64,
    pub dim: usize,
    pub k_true: usize,
    pub anomaly_kind: AnomalyKind,
    /// Test-only anomaly kind for [`ExperimentKind::Unseen`].
    pub unseen_kind: AnomalyKind,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            anomaly_rate: 0.05,
            dim: 10,
            k_true: 3,
            anomaly_kind: AnomalyKind::UniformFar,
            unseen_kind: AnomalyKind::ShiftedCluster,
        }
    }
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.anomaly_rate > 0.0 && self.anomaly_rate < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "anomaly rate must be in (0, 1), got {}",
                self.anomaly_rate
            )));
        }
        if self.n < 10 {
            return Err(Error::InvalidConfig("at least 10 samples are needed".into()));
        }
        Ok(())
    }

    /// `(normals, anomalies)`, with at least one anomaly.
    pub fn counts(&self) -> (usize, usize) {
        let n_anomaly = ((self.n as f64 * self.anomaly_rate).round() as usize).max(1);
        (self.n - n_anomaly, n_anomaly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub data: DataSpec,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub experiment: String,
    pub grid_param: String,
    pub seed: u64,
    pub auc_pr: f64,
    pub auc_roc: f64,
    pub wall_ms: u64,
    pub seen_kind: Option<AnomalyKind>,
    pub unseen_kind: Option<AnomalyKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub experiment: String,
    pub grid_param: String,
    pub runs: usize,
    pub auc_pr_mean: f64,
    pub auc_pr_std: f64,
    pub auc_roc_mean: f64,
    pub auc_roc_std: f64,
}

fn check_grid(kind: ExperimentKind, grid: &[f64]) -> Result<()> {
    if kind != ExperimentKind::Unseen && grid.is_empty() {
        return Err(Error::InvalidConfig(format!("{kind} needs a non-empty grid")));
    }
    for &g in grid {
        let ok = match kind {
            ExperimentKind::RatioSweep => g > 0.0 && g <= 100.0,
            ExperimentKind::ContaminationSweep => (0.0..100.0).contains(&g),
            ExperimentKind::KSensitivity => g >= 1.0 && g.fract() == 0.0,
            ExperimentKind::Ablation => {
                g >= 0.0 && g.fract() == 0.0 && (g as usize) <= Ablation::COMPONENTS.len()
            }
            ExperimentKind::Unseen => true,
        };
        if !ok {
            return Err(Error::InvalidConfig(format!("grid value {g} is out of range for {kind}")));
        }
    }
    Ok(())
}

/// Label written to the `grid_param` column.
pub fn grid_label(kind: ExperimentKind, g: f64) -> String {
    match kind {
        ExperimentKind::Ablation if g == 0.0 => "full".to_string(),
        ExperimentKind::Ablation => {
            let c = Ablation::COMPONENTS[g as usize - 1];
            format!("no_{}", c.strip_prefix("use_").unwrap_or(c))
        }
        _ => format!("{g}"),
    }
}

/// Fits on a weak split and scores its test set.
pub fn fit_and_evaluate(split: &WeakSplit, train: &TrainConfig) -> Result<EvalResult> {
    let out = fit(split, train)?;
    evaluate_samples(&out.snapshot, &split.test)
}

/// Scores `test` and compares with its ground truth.
pub fn evaluate_samples(snapshot: &crate::snapshot::ModelSnapshot, test: &[Sample]) -> Result<EvalResult> {
    let rows: Vec<Vec<f64>> = test.iter().map(|s| s.features.clone()).collect();
    let truth: Vec<bool> = test
        .iter()
        .map(|s| s.truth.map(Truth::is_anomaly))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidConfig("test samples need ground truth".into()))?;
    evaluate(&snapshot.infer(&rows)?, &truth)
}

/// Normals plus anomalies of the configured kind, and a pool of unseen-kind
/// anomalies drawn from the same mixture.
fn generate(data: &DataSpec, n_anomaly: usize, n_unseen: usize, seed: u64) -> Result<(Dataset, Vec<Vec<f64>>)> {
    let (n_normal, _) = data.counts();
    let mut g = MixtureGenerator::new(data.dim, data.k_true, seed)?;
    let mut rows: Vec<(Vec<f64>, Truth)> = g.normals(n_normal).into_iter().map(|p| (p, Truth::Normal)).collect();
    rows.extend(
        g.anomalies(data.anomaly_kind, n_anomaly)
            .into_iter()
            .map(|p| (p, Truth::Anomaly)),
    );
    let unseen = g.anomalies(data.unseen_kind, n_unseen);
    Ok((g.assemble(rows), unseen))
}

/// Smallest anomaly count (starting from the configured rate) for which
/// the highest contamination target is reachable.
fn anomalies_for_contamination(data: &DataSpec, split: &SplitConfig, max_c: f64, seed: u64) -> Result<usize> {
    let (n_normal, base) = data.counts();
    let probe = |n_anomaly: usize| -> bool {
        let samples = (0..n_normal + n_anomaly)
            .map(|i| {
                let t = if i < n_normal { Truth::Normal } else { Truth::Anomaly };
                Sample::unlabeled(i, vec![0.0], Some(t))
            })
            .collect();
        let ds = Dataset {
            feature_names: vec!["x".into()],
            samples,
        };
        let cfg = SplitConfig {
            target_contamination: Some(max_c / 100.0),
            seed,
            ..split.clone()
        };
        make_weak_split(&ds, &cfg).is_ok()
    };
    (base..=n_normal.max(base) * 2)
        .find(|&a| probe(a))
        .ok_or_else(|| Error::InvalidConfig(format!("contamination {max_c}% is unreachable")))
}

fn run_one(spec: &ExperimentSpec, g: f64, seed: u64) -> Result<Vec<ExperimentRow>> {
    let start = Instant::now();
    let mut split_cfg = SplitConfig { seed, ..spec.split.clone() };
    let mut train = TrainConfig { seed, ..spec.train.clone() };
    let (_, base_anomalies) = spec.data.counts();
    let mut n_anomaly = base_anomalies;
    match spec.kind {
        ExperimentKind::RatioSweep => split_cfg.labeled_anomaly_ratio = g / 100.0,
        ExperimentKind::ContaminationSweep => {
            let max_c = spec.grid.iter().copied().fold(0.0, f64::max);
            n_anomaly = anomalies_for_contamination(&spec.data, &spec.split, max_c, seed)?;
            split_cfg.target_contamination = Some(g / 100.0);
        }
        ExperimentKind::KSensitivity => train.k = KChoice::Fixed(g as usize),
        ExperimentKind::Ablation => {
            train.ablation = if g == 0.0 {
                Ablation::default()
            } else {
                Ablation::without(Ablation::COMPONENTS[g as usize - 1])?
            }
        }
        ExperimentKind::Unseen => {}
    }

    let (data, unseen_pool) = generate(&spec.data, n_anomaly, n_anomaly, seed)?;
    let split = make_weak_split(&data, &split_cfg)?;
    let out = fit(&split, &train)?;
    let row = |grid_param: String, r: EvalResult, kinds: Option<(AnomalyKind, AnomalyKind)>| ExperimentRow {
        experiment: spec.kind.to_string(),
        grid_param,
        seed,
        auc_pr: r.auc_pr,
        auc_roc: r.auc_roc,
        wall_ms: start.elapsed().as_millis() as u64,
        seen_kind: kinds.map(|k| k.0),
        unseen_kind: kinds.map(|k| k.1),
    };

    if spec.kind == ExperimentKind::Unseen {
        let kinds = Some((spec.data.anomaly_kind, spec.data.unseen_kind));
        let seen = evaluate_samples(&out.snapshot, &split.test)?;
        let n_test_anomalies = split.test.iter().filter(|s| s.truth == Some(Truth::Anomaly)).count();
        let mut unseen_test: Vec<Sample> = split
            .test
            .iter()
            .filter(|s| s.truth == Some(Truth::Normal))
            .cloned()
            .collect();
        let next_id = data.samples.len();
        unseen_test.extend(
            unseen_pool
                .into_iter()
                .take(n_test_anomalies)
                .enumerate()
                .map(|(i, x)| Sample::unlabeled(next_id + i, x, Some(Truth::Anomaly))),
        );
        let unseen = evaluate_samples(&out.snapshot, &unseen_test)?;
        return Ok(vec![
            row("seen".into(), seen, kinds),
            row("unseen".into(), unseen, kinds),
        ]);
    }
    Ok(vec![row(grid_label(spec.kind, g), evaluate_samples(&out.snapshot, &split.test)?, None)])
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ExperimentRow>> {
    spec.data.validate()?;
    spec.split.validate()?;
    spec.train.validate()?;
    if spec.seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    check_grid(spec.kind, &spec.grid)?;
    let grid: Vec<f64> = if spec.kind == ExperimentKind::Unseen {
        vec![f64::NAN]
    } else {
        spec.grid.clone()
    };
    let jobs: Vec<(f64, u64)> = grid
        .iter()
        .flat_map(|&g| spec.seeds.iter().map(move |&s| (g, s)))
        .collect();
    let nested: Vec<Vec<ExperimentRow>> = jobs
        .par_iter()
        .map(|&(g, s)| run_one(spec, g, s))
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation per (experiment, grid_param) cell,
/// in order of first appearance.
pub fn summarize(rows: &[ExperimentRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.experiment.clone(), r.grid_param.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(experiment, grid_param)| {
            let cell: Vec<&ExperimentRow> = rows
                .iter()
                .filter(|r| r.experiment == experiment && r.grid_param == grid_param)
                .collect();
            let pr: Vec<f64> = cell.iter().map(|r| r.auc_pr).collect();
            let roc: Vec<f64> = cell.iter().map(|r| r.auc_roc).collect();
            let (auc_pr_mean, auc_pr_std) = mean_std(&pr);
            let (auc_roc_mean, auc_roc_std) = mean_std(&roc);
            CellSummary {
                experiment,
                grid_param,
                runs: cell.len(),
                auc_pr_mean,
                auc_pr_std,
                auc_roc_mean,
                auc_roc_std,
            }
        })
        .collect()
}

/// Writes one CSV row per run with a fixed column order.
pub fn write_results<W: Write>(out: W, rows: &[ExperimentRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidInput(format!("cannot write results: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(kind: ExperimentKind, grid: Vec<f64>) -> ExperimentSpec {
        ExperimentSpec {
            kind,
            data: DataSpec {
                n: 300,
                anomaly_rate: 0.1,
                dim: 4,
                k_true: 2,
                ..DataSpec::default()
            },
            train: TrainConfig {
                epochs_max: 3,
                pretrain_epochs: 2,
                k: KChoice::Fixed(2),
                ..TrainConfig::default()
            },
            split: SplitConfig {
                labeled_anomaly_ratio: 0.2,
                ..SplitConfig::default()
            },
            grid,
            seeds: vec![1, 2],
        }
    }

    #[test]
    fn grid_validation() {
        assert!(check_grid(ExperimentKind::RatioSweep, &[0.0]).is_err());
        assert!(check_grid(ExperimentKind::RatioSweep, &[5.0, 1.0, 0.5]).is_ok());
        assert!(check_grid(ExperimentKind::ContaminationSweep, &[100.0]).is_err());
        assert!(check_grid(ExperimentKind::KSensitivity, &[1.5]).is_err());
        assert!(check_grid(ExperimentKind::Ablation, &[6.0]).is_err());
        assert!(check_grid(ExperimentKind::Unseen, &[]).is_ok());
    }

    #[test]
    fn labels() {
        assert_eq!(grid_label(ExperimentKind::Ablation, 0.0), "full");
        assert_eq!(grid_label(ExperimentKind::Ablation, 5.0), "no_multi_prototype");
        assert_eq!(grid_label(ExperimentKind::RatioSweep, 0.5), "0.5");
        for k in ["ratio_sweep", "contamination_sweep", "unseen", "k_sensitivity", "ablation"] {
            assert_eq!(k.parse::<ExperimentKind>().unwrap().to_string(), k);
        }
    }

    #[test]
    fn rows_are_ordered_and_reproducible() {
        let spec = quick(ExperimentKind::KSensitivity, vec![1.0, 2.0]);
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        let key = |r: &ExperimentRow| (r.grid_param.clone(), r.seed, r.auc_pr.to_bits(), r.auc_roc.to_bits());
        assert_eq!(a.iter().map(key).collect::<Vec<_>>(), b.iter().map(key).collect::<Vec<_>>());
        let order: Vec<(String, u64)> = a.iter().map(|r| (r.grid_param.clone(), r.seed)).collect();
        assert_eq!(
            order,
            vec![("1".into(), 1), ("1".into(), 2), ("2".into(), 1), ("2".into(), 2)]
        );
    }

    #[test]
    fn unseen_rows_carry_both_kinds() {
        let rows = run_experiment(&quick(ExperimentKind::Unseen, vec![])).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert_eq!(r.seen_kind, Some(AnomalyKind::UniformFar));
            assert_eq!(r.unseen_kind, Some(AnomalyKind::ShiftedCluster));
        }
    }

    #[test]
    fn summary_statistics() {
        let row = |g: &str, pr: f64| ExperimentRow {
            experiment: "x".into(),
            grid_param: g.into(),
            seed: 0,
            auc_pr: pr,
            auc_roc: 0.5,
            wall_ms: 0,
            seen_kind: None,
            unseen_kind: None,
        };
        let s = summarize(&[row("a", 0.2), row("b", 1.0), row("a", 0.4)]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].grid_param, "a");
        assert!((s[0].auc_pr_mean - 0.3).abs() < 1e-15);
        assert!((s[0].auc_pr_std - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(s[1].auc_pr_std, 0.0);
    }

    #[test]
    fn csv_columns_are_stable() {
        let mut buf = Vec::new();
        let rows = vec![ExperimentRow {
            experiment: "unseen".into(),
            grid_param: "seen".into(),
            seed: 3,
            auc_pr: 0.5,
            auc_roc: 0.75,
            wall_ms: 12,
            seen_kind: Some(AnomalyKind::UniformFar),
            unseen_kind: None,
        }];
        write_results(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "experiment,grid_param,seed,auc_pr,auc_roc,wall_ms,seen_kind,unseen_kind"
        );
        assert_eq!(lines.next().unwrap(), "unseen,seen,3,0.5,0.75,12,uniform_far,");
    }
}
