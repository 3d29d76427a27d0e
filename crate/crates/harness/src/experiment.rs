//! End-to-end runs: simulate, preprocess, split, train and score.

use htgnn_core::{ModelKind, WindowSample};
use htgnn_rig::dataset::simulate_all;
use htgnn_rig::{generate_condition_grid, preprocess_case, window_slice, Dataset, OperatingCondition, Simulator};
use htgnn_core::hetgraph::RigLayout;

use crate::checkpoint::{Architecture, Checkpoint};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::normalize::Normalizer;
use crate::split::{make_split, SplitPlan, WindowSplit};
use crate::train::{predict_all, train, TrainReport};

pub fn architecture(kind: ModelKind, cfg: &ExperimentConfig) -> Architecture {
    match kind {
        ModelKind::Htgnn => Architecture::Htgnn(cfg.model.clone()),
        ModelKind::Cnn => Architecture::Cnn {
            config: cfg.baseline.clone(),
            window: cfg.preprocess.window,
        },
    }
}

pub fn split_plan(cfg: &ExperimentConfig, n_conditions: usize) -> Result<SplitPlan> {
    let s = &cfg.split;
    make_split(n_conditions, s.holdout, s.test_fraction, s.validation_fraction, s.seed)
}

/// Simulates the configured grid on the default two-bearing layout and
/// marks the held-out conditions in the manifest.
pub fn simulate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let layout = RigLayout::default_two_bearing();
    let conditions = generate_condition_grid(&cfg.data.grid)?;
    let sim = Simulator::new(&layout, cfg.simulator.clone())?;
    let cases = simulate_all(&sim, &conditions, cfg.data.duration_s, cfg.data.seed)?;
    let plan = split_plan(cfg, conditions.len())?;
    Ok(Dataset::new(layout, cases, &plan.unseen))
}

/// Raw windows of every case, in case order and time order within a case.
pub fn dataset_windows(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<WindowSample>> {
    let unseen = dataset.unseen_ids();
    let p = &cfg.preprocess;
    let mut out = Vec::new();
    for (i, rec) in dataset.cases.iter().enumerate() {
        let processed = preprocess_case(rec, p)?;
        out.extend(window_slice(&processed, p.window, p.stride, i, !unseen.contains(&i))?);
    }
    Ok(out)
}

/// Everything a training run needs, shared across models and seeds.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub layout: RigLayout,
    pub conditions: Vec<OperatingCondition>,
    pub windows: Vec<WindowSample>,
    pub plan: SplitPlan,
    pub split: WindowSplit,
}

impl Prepared {
    pub fn new(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Self> {
        let plan = split_plan(cfg, dataset.cases.len())?;
        if plan.unseen != dataset.unseen_ids() {
            return Err(HarnessError::Split(
                "the dataset's held-out cases differ from the configured split".into(),
            ));
        }
        let windows = dataset_windows(dataset, cfg)?;
        let split = plan.assign(&windows)?;
        Ok(Self {
            layout: dataset.layout.clone(),
            conditions: dataset.manifest.iter().map(|e| e.condition()).collect(),
            windows,
            plan,
            split,
        })
    }

    pub fn select(&self, idx: &[usize]) -> Vec<&WindowSample> {
        idx.iter().map(|&i| &self.windows[i]).collect()
    }
}

pub struct RunOutput {
    pub report: TrainReport,
    pub metrics: MetricsReport,
    /// Test predictions in kN, aligned with `test_windows`.
    pub predictions: Vec<[f64; 2]>,
    pub test_windows: Vec<usize>,
    pub checkpoint: Checkpoint,
}

/// Predictions in kN for raw windows.
pub fn predict_loads(ckpt: &Checkpoint, windows: &[&WindowSample], batch_size: usize) -> Result<Vec<[f64; 2]>> {
    let mut model = ckpt.model()?;
    let scaled: Vec<WindowSample> = windows.iter().map(|w| ckpt.normalizer.apply(w)).collect();
    let refs: Vec<&WindowSample> = scaled.iter().collect();
    let z = predict_all(model.as_mut(), &refs, batch_size)?;
    ckpt.normalizer.loads(&z)
}

/// Trains one model with `cfg.train` and scores it on the test windows.
pub fn run(kind: ModelKind, data: &Prepared, cfg: &ExperimentConfig) -> Result<RunOutput> {
    let arch = architecture(kind, cfg);
    let train_raw = data.select(&data.split.train);
    let normalizer = Normalizer::fit(&train_raw)?;
    let scale = |idx: &[usize]| -> Vec<WindowSample> { idx.iter().map(|&i| normalizer.apply(&data.windows[i])).collect() };
    let train_set = scale(&data.split.train);
    let val_set = scale(&data.split.validation);
    let mut model = arch.build(&data.layout, cfg.train.seed)?;
    log::info!(
        "training {} on {} windows, validating on {}, {} parameters",
        kind.as_str(),
        train_set.len(),
        val_set.len(),
        model.params().num_scalars()
    );
    let report = train(
        model.as_mut(),
        &train_set.iter().collect::<Vec<_>>(),
        &val_set.iter().collect::<Vec<_>>(),
        &cfg.train,
    )?;
    let checkpoint = Checkpoint::capture(arch, &data.layout, normalizer, model.as_ref(), report.best_epoch);
    let test = data.select(&data.split.test);
    let predictions = predict_loads(&checkpoint, &test, cfg.train.batch_size)?;
    let metrics = evaluate(&predictions, &test, &data.conditions)?;
    Ok(RunOutput {
        report,
        metrics,
        predictions,
        test_windows: data.split.test.clone(),
        checkpoint,
    })
}
