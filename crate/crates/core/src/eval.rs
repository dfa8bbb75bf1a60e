//! k-fold cross-validation, per-branch accuracies and the ablation table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::data::{validate_folds, PairSample};
use crate::error::{Error, Result};
use crate::network::{train, FusionMode, PairModel, TrainConfig};

/// Accuracy of each decision rule on held-out pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchAccuracies {
    pub appearance: Option<f64>,
    pub shape: Option<f64>,
    pub fused: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub folds: usize,
    /// Fused accuracy on each held-out fold.
    pub per_fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    /// Fused accuracy pooled over all held-out pairs of each relation tag.
    pub per_relation_accuracy: BTreeMap<String, f64>,
    /// Mean over folds of each branch's held-out accuracy.
    pub branch_accuracies: BranchAccuracies,
    pub per_fold_branch_accuracies: Vec<BranchAccuracies>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Default)]
struct FoldTally {
    total: usize,
    fused: usize,
    shape: Option<usize>,
    appearance: Option<usize>,
    relations: BTreeMap<String, (usize, usize)>,
}

fn correct(p: f64, kin: bool) -> bool {
    (p >= crate::network::DECISION_THRESHOLD) == kin
}

fn evaluate_fold(model: &PairModel, held_out: &[&PairSample]) -> Result<FoldTally> {
    let mut t = FoldTally::default();
    for s in held_out {
        let score = model.predict(s)?;
        let kin = s.label == crate::data::Label::Kin;
        t.total += 1;
        let ok = correct(score.p_fused, kin);
        t.fused += ok as usize;
        if let Some(p) = score.p_shape {
            *t.shape.get_or_insert(0) += correct(p, kin) as usize;
        }
        if let Some(p) = score.p_appearance {
            *t.appearance.get_or_insert(0) += correct(p, kin) as usize;
        }
        let tag = s.relation.map(|r| r.tag().to_string()).unwrap_or_else(|| "untagged".into());
        let e = t.relations.entry(tag).or_default();
        e.0 += ok as usize;
        e.1 += 1;
    }
    Ok(t)
}

fn run_fold(samples: &[PairSample], config: &TrainConfig, fold: usize) -> Result<FoldTally> {
    let train_set: Vec<PairSample> = samples.iter().filter(|s| s.fold != Some(fold)).cloned().collect();
    let held_out: Vec<&PairSample> = samples.iter().filter(|s| s.fold == Some(fold)).collect();
    let (model, _) = train(&train_set, config)?;
    evaluate_fold(&model, &held_out)
}

/// Trains from scratch on all folds but one, for each fold in turn.
///
/// Folds must already be assigned (see [`crate::data::assign_folds`]).
/// `jobs > 1` runs folds on that many threads; each fold is deterministic, so
/// the report does not depend on `jobs`.
pub fn cross_validate(samples: &[PairSample], config: &TrainConfig, k: usize, jobs: usize) -> Result<EvalReport> {
    validate_folds(samples, k)?;
    config.validate()?;
    let tallies = run_folds(samples, config, k, jobs.max(1))?;

    let frac = |num: usize, den: usize| num as f64 / den as f64;
    let per_fold_branch: Vec<BranchAccuracies> = tallies
        .iter()
        .map(|t| BranchAccuracies {
            appearance: t.appearance.map(|c| frac(c, t.total)),
            shape: t.shape.map(|c| frac(c, t.total)),
            fused: frac(t.fused, t.total),
        })
        .collect();
    let per_fold_accuracy: Vec<f64> = per_fold_branch.iter().map(|b| b.fused).collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mean_opt = |f: fn(&BranchAccuracies) -> Option<f64>| {
        let xs: Option<Vec<f64>> = per_fold_branch.iter().map(f).collect();
        xs.map(|xs| mean(&xs))
    };

    let mut pooled: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for t in &tallies {
        for (tag, (ok, n)) in &t.relations {
            let e = pooled.entry(tag.clone()).or_default();
            e.0 += ok;
            e.1 += n;
        }
    }

    Ok(EvalReport {
        folds: k,
        mean_accuracy: mean(&per_fold_accuracy),
        per_fold_accuracy,
        per_relation_accuracy: pooled.into_iter().map(|(k, (ok, n))| (k, frac(ok, n))).collect(),
        branch_accuracies: BranchAccuracies {
            appearance: mean_opt(|b| b.appearance),
            shape: mean_opt(|b| b.shape),
            fused: mean(&per_fold_branch.iter().map(|b| b.fused).collect::<Vec<_>>()),
        },
        per_fold_branch_accuracies: per_fold_branch,
        config: config.clone(),
    })
}

fn run_folds(samples: &[PairSample], config: &TrainConfig, k: usize, jobs: usize) -> Result<Vec<FoldTally>> {
    if jobs == 1 {
        return (0..k).map(|f| run_fold(samples, config, f)).collect();
    }
    let mut results: Vec<Option<Result<FoldTally>>> = (0..k).map(|_| None).collect();
    std::thread::scope(|scope| {
        for chunk_start in (0..k).step_by(jobs) {
            let handles: Vec<_> = (chunk_start..(chunk_start + jobs).min(k))
                .map(|f| (f, scope.spawn(move || run_fold(samples, config, f))))
                .collect();
            for (f, h) in handles {
                results[f] = Some(h.join().unwrap_or_else(|_| Err(Error::State(format!("fold {f} panicked")))));
            }
        }
    });
    results.into_iter().map(|r| r.expect("every fold ran")).collect()
}

/// One row per setting: appearance only, shape only, both fused.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<(String, f64)>,
    pub report: EvalReport,
}

impl AblationTable {
    pub fn get(&self, setting: &str) -> Option<f64> {
        self.rows.iter().find(|(s, _)| s == setting).map(|(_, v)| *v)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("[ablation]\n");
        for (s, v) in &self.rows {
            let _ = writeln!(out, "{s}={v:?}");
        }
        out
    }
}

/// Ablation over the comparison branches.
///
/// Uses score-level fusion, where each branch is trained by its own loss, so
/// a single cross-validation run yields the appearance-only, shape-only and
/// fused accuracies.
pub fn ablation(samples: &[PairSample], config: &TrainConfig, k: usize, jobs: usize) -> Result<AblationTable> {
    let config = TrainConfig {
        fusion: FusionMode::Score,
        ..config.clone()
    };
    if samples.iter().any(|s| s.appearance.is_none()) {
        return Err(Error::Data("ablation needs appearance vectors on every pair".into()));
    }
    let report = cross_validate(samples, &config, k, jobs)?;
    let b = report.branch_accuracies;
    Ok(AblationTable {
        rows: vec![
            ("appearance-only".into(), b.appearance.expect("appearance branch trained")),
            ("shape-only".into(), b.shape.expect("shape branch trained")),
            ("fused".into(), b.fused),
        ],
        report,
    })
}

impl EvalReport {
    /// `key=value` text grouped into `[section]`s; floats use their shortest
    /// round-trip representation.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[report]");
        let _ = writeln!(out, "folds={}", self.folds);
        let _ = writeln!(out, "mean_accuracy={:?}", self.mean_accuracy);
        let _ = writeln!(out, "\n[per_fold]");
        for (i, a) in self.per_fold_accuracy.iter().enumerate() {
            let _ = writeln!(out, "fold.{i}={a:?}");
        }
        let _ = writeln!(out, "\n[per_relation]");
        for (tag, a) in &self.per_relation_accuracy {
            let _ = writeln!(out, "{tag}={a:?}");
        }
        let _ = writeln!(out, "\n[branches]");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_else(|| "none".into());
        let _ = writeln!(out, "appearance={}", opt(self.branch_accuracies.appearance));
        let _ = writeln!(out, "shape={}", opt(self.branch_accuracies.shape));
        let _ = writeln!(out, "fused={:?}", self.branch_accuracies.fused);
        let _ = writeln!(out, "\n[config]");
        out.push_str(&config_echo(&self.config));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// `key=value` lines for every field of a serialisable config.
pub fn config_echo<T: Serialize>(config: &T) -> String {
    let value = serde_json::to_value(config).expect("config serialises");
    let mut out = String::new();
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            let _ = writeln!(out, "{k}={v}");
        }
    }
    out
}
