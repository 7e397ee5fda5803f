use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::kfold;
use crate::error::{Error, Result};
use crate::model::{VisualSource, VqaModel};
use crate::stats::{welch_t_test, TTestResult};
use crate::vision::{sparsity_stats_of, FusionOp, SparsityStats, VisualDims};

use super::config::RunConfig;
use super::report::{exact, percent, Table};
use super::run::{load_visual, run, run_on, Corpus, RunOutcome};

/// `base, base+1, …` (n seeds).
pub fn seed_list(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i)).collect()
}

fn with_seed(cfg: &RunConfig, seed: u64) -> RunConfig {
    RunConfig { seed, ..cfg.clone() }
}

/// `"rows×width"` of the fused visual features.
pub fn fused_dims(op: FusionOp, dims: &VisualDims) -> String {
    format!("{}×{}", op.output_tokens(dims.tokens), dims.hidden)
}

/// Every value of the visual rows the model feeds its encoder, over a corpus.
pub fn visual_feature_values(model: &VqaModel, corpus: &Corpus) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for e in &corpus.examples {
        let input = load_visual(e, &corpus.base_dir, &model.config.visual)?;
        out.extend_from_slice(model.visual_constant(&input)?.data());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRow {
    pub op: FusionOp,
    pub fused_dims: String,
    pub accuracy: f64,
    pub sparsity: SparsityStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionAblation {
    pub rows: Vec<FusionRow>,
}

/// One run per fusion operator at identical seeds. Sparsity statistics are
/// taken over the fused features of the evaluation split.
pub fn ablate_fusion(cfg: &RunConfig, corpus: &Corpus) -> Result<FusionAblation> {
    let cfgs: Vec<RunConfig> = FusionOp::ALL
        .iter()
        .map(|&op| RunConfig {
            fusion: op,
            visual_source: VisualSource::Combined,
            ..cfg.clone()
        })
        .collect();
    for c in &cfgs {
        c.validate()?;
    }
    let (train_set, test_set) = corpus.split(cfg.train_ratio, cfg.split_seed)?;
    let eval_set = if test_set.examples.is_empty() { &train_set } else { &test_set };
    let mut rows = Vec::new();
    for c in &cfgs {
        let out = run_on(c, &train_set, &test_set)?;
        let model = &out.trained.model;
        let values = visual_feature_values(model, eval_set)?;
        rows.push(FusionRow {
            op: c.fusion,
            fused_dims: fused_dims(c.fusion, &model.config.visual),
            accuracy: out.report.headline_accuracy(),
            sparsity: sparsity_stats_of(&values)?,
        });
    }
    Ok(FusionAblation { rows })
}

impl FusionAblation {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["Operation", "Fused dims", "Accuracy (%)"]);
        for r in &self.rows {
            t.push(vec![r.op.label().into(), r.fused_dims.clone(), percent(r.accuracy)]);
        }
        t
    }

    /// Boxplot series: one row per operator.
    pub fn boxplot(&self) -> Table {
        let mut t = Table::new(&["Operation", "mean", "min", "q1", "median", "q3", "max", "iqr"]);
        for r in &self.rows {
            let s = &r.sparsity;
            t.push(vec![
                r.op.label().into(),
                exact(s.mean),
                exact(s.min),
                exact(s.q1),
                exact(s.median),
                exact(s.q3),
                exact(s.max),
                exact(s.iqr()),
            ]);
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.table().write(dir, "fusion", "Fusion operation")?;
        self.boxplot().write_csv(dir, "fusion_boxplot")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub source: VisualSource,
    pub accuracies: Vec<f64>,
}

impl ArmResult {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }
}

/// Welch test between two arms; the error text when the test is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: VisualSource,
    pub b: VisualSource,
    pub result: std::result::Result<TTestResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorAblation {
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmResult>,
    pub tests: Vec<PairTest>,
}

pub const EXTRACTOR_ARMS: [VisualSource; 3] = [VisualSource::LocalOnly, VisualSource::GlobalOnly, VisualSource::Combined];

/// Local-only, global-only and combined runs over `n_seeds` seeds.
pub fn ablate_extractors(cfg: &RunConfig, corpus: &Corpus, n_seeds: usize) -> Result<ExtractorAblation> {
    if n_seeds == 0 {
        return Err(Error::config("at least one seed is needed"));
    }
    let seeds = seed_list(cfg.seed, n_seeds);
    let arm_cfg = |source| RunConfig {
        visual_source: source,
        ..cfg.clone()
    };
    for s in EXTRACTOR_ARMS {
        arm_cfg(s).validate()?;
    }
    let (train_set, test_set) = corpus.split(cfg.train_ratio, cfg.split_seed)?;
    let mut arms = Vec::new();
    for source in EXTRACTOR_ARMS {
        let mut accuracies = Vec::new();
        for &seed in &seeds {
            let out = run_on(&with_seed(&arm_cfg(source), seed), &train_set, &test_set)?;
            accuracies.push(out.report.headline_accuracy());
        }
        arms.push(ArmResult { source, accuracies });
    }
    let pair = |i: usize, j: usize| PairTest {
        a: arms[i].source,
        b: arms[j].source,
        result: welch_t_test(&arms[i].accuracies, &arms[j].accuracies).map_err(|e| e.to_string()),
    };
    let tests = vec![pair(2, 0), pair(2, 1), pair(0, 1)];
    Ok(ExtractorAblation { seeds, arms, tests })
}

impl ExtractorAblation {
    pub fn arm(&self, source: VisualSource) -> &ArmResult {
        self.arms.iter().find(|a| a.source == source).expect("every arm is run")
    }

    pub fn test(&self, a: VisualSource, b: VisualSource) -> Option<&PairTest> {
        self.tests.iter().find(|t| t.a == a && t.b == b)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["Visual extractor", "Accuracy (%)", "Seeds"]);
        for a in &self.arms {
            t.push(vec![a.source.label().into(), percent(a.mean()), a.accuracies.len().to_string()]);
        }
        t
    }

    pub fn significance_table(&self) -> Table {
        let mut t = Table::new(&["A", "B", "t", "df", "p", "significant"]);
        for p in &self.tests {
            let row = match &p.result {
                Ok(r) => vec![exact(r.t), exact(r.df), exact(r.p_value), r.significant.to_string()],
                Err(e) => vec![e.clone(), String::new(), String::new(), String::new()],
            };
            let mut full = vec![p.a.label().to_string(), p.b.label().to_string()];
            full.extend(row);
            t.push(full);
        }
        t
    }

    pub fn per_seed_table(&self) -> Table {
        let mut headers = vec!["seed".to_string()];
        headers.extend(self.arms.iter().map(|a| a.source.label().to_string()));
        let mut t = Table::new(&headers);
        for (i, s) in self.seeds.iter().enumerate() {
            let mut row = vec![s.to_string()];
            row.extend(self.arms.iter().map(|a| exact(a.accuracies[i])));
            t.push(row);
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.table().write(dir, "extractors", "Visual extractor")?;
        self.significance_table()
            .write(dir, "extractors_significance", "Welch t-tests")?;
        self.per_seed_table().write_csv(dir, "extractors_per_seed")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezeArm {
    pub frozen: bool,
    pub accuracy: f64,
    pub epochs: usize,
    pub trainable_params: usize,
    pub frozen_params: usize,
    pub optimizer_tensors: usize,
    pub backward_node_visits: u64,
    pub extractors_unchanged: bool,
    #[serde(skip)]
    pub seconds: f64,
}

impl FreezeArm {
    fn from_run(out: &RunOutcome) -> Self {
        let r = &out.report;
        FreezeArm {
            frozen: r.config.freeze_extractors,
            accuracy: r.headline_accuracy(),
            epochs: r.config.epochs,
            trainable_params: r.params.trainable,
            frozen_params: r.params.frozen,
            optimizer_tensors: r.optimizer_tensors,
            backward_node_visits: r.backward_node_visits,
            extractors_unchanged: r.extractors_unchanged,
            seconds: r.training_seconds,
        }
    }

    fn label(&self) -> &'static str {
        if self.frozen {
            "Freeze"
        } else {
            "Unfreeze"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezeAblation {
    pub frozen: FreezeArm,
    pub unfrozen: FreezeArm,
}

/// The same config trained with frozen and with trainable extractors.
pub fn ablate_freeze(cfg: &RunConfig, corpus: &Corpus) -> Result<FreezeAblation> {
    let frozen_cfg = RunConfig {
        freeze_extractors: true,
        ..cfg.clone()
    };
    let unfrozen_cfg = RunConfig {
        freeze_extractors: false,
        ..cfg.clone()
    };
    frozen_cfg.validate()?;
    unfrozen_cfg.validate()?;
    let frozen = FreezeArm::from_run(&run(&frozen_cfg, corpus)?);
    let unfrozen = FreezeArm::from_run(&run(&unfrozen_cfg, corpus)?);
    Ok(FreezeAblation { frozen, unfrozen })
}

impl FreezeAblation {
    /// Deterministic columns only.
    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "Setting",
            "Accuracy (%)",
            "Epoch",
            "Trainable params",
            "Frozen params",
            "Optimizer tensors",
            "Backward node visits",
            "Extractor bytes unchanged",
        ]);
        for a in [&self.frozen, &self.unfrozen] {
            t.push(vec![
                a.label().into(),
                percent(a.accuracy),
                a.epochs.to_string(),
                a.trainable_params.to_string(),
                a.frozen_params.to_string(),
                a.optimizer_tensors.to_string(),
                a.backward_node_visits.to_string(),
                a.extractors_unchanged.to_string(),
            ]);
        }
        t
    }

    /// Includes wall-clock time, so it differs between reruns.
    pub fn timing_table(&self) -> Table {
        let mut t = Table::new(&["Setting", "Accuracy (%)", "Epoch", "Training Time (s)"]);
        for a in [&self.frozen, &self.unfrozen] {
            t.push(vec![
                a.label().into(),
                percent(a.accuracy),
                a.epochs.to_string(),
                format!("{:.2}", a.seconds),
            ]);
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.table().write(dir, "freeze", "Freezing the visual extractor")?;
        self.timing_table().write(dir, "freeze_timing", "Freezing the visual extractor: wall clock")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Heads,
    Layers,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "heads" => Ok(SweepAxis::Heads),
            "layers" => Ok(SweepAxis::Layers),
            _ => Err(Error::config(format!("unknown sweep axis {s:?} (expected heads or layers)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Heads => "heads",
            SweepAxis::Layers => "layers",
        }
    }

    pub fn apply(self, cfg: &RunConfig, value: usize) -> RunConfig {
        match self {
            SweepAxis::Heads => RunConfig {
                heads: Some(value),
                ..cfg.clone()
            },
            SweepAxis::Layers => RunConfig {
                layers: Some(value),
                ..cfg.clone()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

/// One run per value with the other axis held at its configured value.
/// Every value is validated before the first run.
pub fn sweep(cfg: &RunConfig, corpus: &Corpus, axis: SweepAxis, values: &[usize]) -> Result<Sweep> {
    if values.is_empty() {
        return Err(Error::config("empty sweep"));
    }
    let cfgs: Vec<RunConfig> = values.iter().map(|&v| axis.apply(cfg, v)).collect();
    for c in &cfgs {
        c.validate()?;
    }
    let (train_set, test_set) = corpus.split(cfg.train_ratio, cfg.split_seed)?;
    let mut points = Vec::new();
    for (c, &value) in cfgs.iter().zip(values) {
        let r = run_on(c, &train_set, &test_set)?.report;
        points.push(SweepPoint {
            value,
            train_accuracy: r.train.accuracy,
            test_accuracy: r.test.map(|m| m.accuracy),
            final_loss: *r.epoch_losses.last().expect("at least one epoch"),
        });
    }
    Ok(Sweep { axis, points })
}

impl Sweep {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&[self.axis.name(), "train_accuracy", "test_accuracy", "final_loss"]);
        for p in &self.points {
            t.push(vec![
                p.value.to_string(),
                exact(p.train_accuracy),
                p.test_accuracy.map(exact).unwrap_or_default(),
                exact(p.final_loss),
            ]);
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.table().write(dir, &format!("sweep_{}", self.axis.name()), &format!("Encoder {}", self.axis.name()))
    }
}

/// Test accuracies of two configs over the same seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seeds: Vec<u64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

pub fn significance(
    cfg_a: &RunConfig,
    corpus_a: &Corpus,
    cfg_b: &RunConfig,
    corpus_b: &Corpus,
    n_seeds: usize,
) -> Result<SeedComparison> {
    if n_seeds < 2 {
        return Err(Error::config(format!("{n_seeds} seeds; a t-test needs at least 2")));
    }
    cfg_a.validate()?;
    cfg_b.validate()?;
    let seeds = seed_list(cfg_a.seed, n_seeds);
    let accs = |cfg: &RunConfig, corpus: &Corpus| -> Result<Vec<f64>> {
        seeds
            .iter()
            .map(|&s| Ok(run(&with_seed(cfg, s), corpus)?.report.headline_accuracy()))
            .collect()
    };
    Ok(SeedComparison {
        a: accs(cfg_a, corpus_a)?,
        b: accs(cfg_b, corpus_b)?,
        seeds,
    })
}

impl SeedComparison {
    pub fn test(&self) -> Result<TTestResult> {
        welch_t_test(&self.a, &self.b)
    }

    pub fn per_seed_table(&self) -> Table {
        let mut t = Table::new(&["seed", "config", "accuracy"]);
        for (name, accs) in [("a", &self.a), ("b", &self.b)] {
            for (s, x) in self.seeds.iter().zip(accs.iter()) {
                t.push(vec![s.to_string(), name.into(), exact(*x)]);
            }
        }
        t
    }

    pub fn test_table(r: &TTestResult) -> Table {
        let mut t = Table::new(&["t", "df", "p", "significant"]);
        t.push(vec![exact(r.t), exact(r.df), exact(r.p_value), r.significant.to_string()]);
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub held_out_size: usize,
    pub accuracy: f64,
}

/// k-fold cross-validation over the training split.
pub fn cross_validate(cfg: &RunConfig, corpus: &Corpus, k: usize) -> Result<Vec<FoldResult>> {
    cfg.validate()?;
    let (train_set, _) = corpus.split(cfg.train_ratio, cfg.split_seed)?;
    let plan = kfold(train_set.examples.len(), k, cfg.split_seed)?;
    let mut out = Vec::new();
    for f in 0..k {
        let (tr, held) = plan.fold(f);
        let (tr, held) = (train_set.subset(&tr), train_set.subset(&held));
        let r = run_on(cfg, &tr, &held)?.report;
        out.push(FoldResult {
            fold: f,
            train_size: tr.examples.len(),
            held_out_size: held.examples.len(),
            accuracy: r.headline_accuracy(),
        });
    }
    Ok(out)
}

pub fn folds_table(folds: &[FoldResult]) -> Table {
    let mut t = Table::new(&["fold", "train", "held_out", "accuracy"]);
    for f in folds {
        t.push(vec![
            f.fold.to_string(),
            f.train_size.to_string(),
            f.held_out_size.to_string(),
            exact(f.accuracy),
        ]);
    }
    t
}
