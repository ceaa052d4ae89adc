//! The synthetic experiment end to end: generate, bag, train, evaluate.

use crate::bags::{build_bags, Bag};
use crate::config::ExperimentConfig;
use crate::data::{Dataset, ProportionTable};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, ClassOrder, MetricsReport};
use crate::model::{init_params, ModelParams};
use crate::scalar::Scalar;
use crate::seeds::{derive_seed, stream};
use crate::synth::{default_schedule, generate, Manifold};
use crate::train::{run_training, CheckpointPoint, TrainLog};

/// Train and test splits drawn from the same schedule and manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData<T> {
    pub schedule: ProportionTable<T>,
    pub train: Dataset<T>,
    pub test: Dataset<T>,
}

/// The configured schedule file, or the built-in 5-class schedule.
pub fn load_schedule<T: Scalar>(cfg: &ExperimentConfig) -> Result<ProportionTable<T>> {
    let schedule = match &cfg.schedule {
        Some(path) => ProportionTable::load(path)?,
        None => default_schedule(cfg.arch.classes)?,
    };
    if schedule.classes() != cfg.arch.classes {
        return Err(Error::LengthMismatch {
            expected: cfg.arch.classes,
            actual: schedule.classes(),
        });
    }
    Ok(schedule)
}

pub fn generate_data<T: Scalar>(cfg: &ExperimentConfig) -> Result<SyntheticData<T>> {
    cfg.validate()?;
    let schedule = load_schedule(cfg)?;
    let manifold = Manifold::new(&cfg.manifold())?;
    let train = generate(
        &schedule,
        &manifold,
        cfg.per_date_count,
        derive_seed(cfg.seed, stream::TRAIN_DATA),
    )?;
    let test = generate(
        &schedule,
        &manifold,
        cfg.test_per_date_count.max(1),
        derive_seed(cfg.seed, stream::TEST_DATA),
    )?;
    Ok(SyntheticData { schedule, train, test })
}

/// Bags over `dataset` with the configured bag size and bag seed.
pub fn make_bags<T: Scalar>(
    cfg: &ExperimentConfig,
    dataset: &Dataset<T>,
    table: &ProportionTable<T>,
) -> Result<Vec<Bag<T>>> {
    build_bags(dataset, table, cfg.train.bag_size, cfg.bag_seed())
}

/// Initializes a model from the config seed and trains it. `baseline`
/// skips stage 1 regardless of `cfg.baseline`.
pub fn train_model<T: Scalar>(
    cfg: &ExperimentConfig,
    bags: &[Bag<T>],
    baseline: bool,
    hook: &mut dyn FnMut(CheckpointPoint, &ModelParams<T>) -> Result<Option<String>>,
) -> Result<(ModelParams<T>, TrainLog)> {
    let mut model = init_params(cfg.model_seed(), &cfg.arch)?;
    let log = run_training(
        &mut model,
        bags,
        &cfg.train_config(),
        baseline || cfg.baseline,
        hook,
    )?;
    Ok((model, log))
}

/// Instance-level predictions (0-based classes).
pub fn predict_all<T: Scalar>(model: &ModelParams<T>, dataset: &Dataset<T>) -> Result<Vec<usize>> {
    if dataset.input_dim != model.arch.input_dim {
        return Err(Error::LengthMismatch {
            expected: model.arch.input_dim,
            actual: dataset.input_dim,
        });
    }
    if dataset.classes != model.arch.classes {
        return Err(Error::LengthMismatch {
            expected: model.arch.classes,
            actual: dataset.classes,
        });
    }
    dataset.instances.iter().map(|i| model.predict(&i.input)).collect()
}

pub fn evaluate_model<T: Scalar>(
    model: &ModelParams<T>,
    dataset: &Dataset<T>,
    order: &ClassOrder,
) -> Result<MetricsReport> {
    let pred = predict_all(model, dataset)?;
    let truth: Vec<Option<usize>> = dataset.instances.iter().map(|i| i.class).collect();
    evaluate(&pred, &truth, dataset.classes, order)
}

/// Outcome of one full run.
#[derive(Clone, Debug)]
pub struct RunResult<T> {
    pub model: ModelParams<T>,
    pub log: TrainLog,
    pub metrics: MetricsReport,
}

/// Generates data, trains, and scores on the test split.
pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig, baseline: bool) -> Result<RunResult<T>> {
    let data = generate_data::<T>(cfg)?;
    let bags = make_bags(cfg, &data.train, &data.schedule)?;
    let (model, log) = train_model(cfg, &bags, baseline, &mut |_, _| Ok(None))?;
    let metrics = evaluate_model(&model, &data.test, &ClassOrder::identity(cfg.arch.classes))?;
    Ok(RunResult { model, log, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.arch.input_dim = 6;
        c.arch.backbone_hidden = vec![8];
        c.arch.feature_dim = 4;
        c.arch.head_hidden = vec![6];
        c.per_date_count = 40;
        c.test_per_date_count = 20;
        c.train.bag_size = 8;
        c.train.stage1_epochs = 2;
        c.train.stage1_steps_per_epoch = 3;
        c.train.stage2_epochs = 2;
        c
    }

    #[test]
    fn tiny_run_is_reproducible() {
        let c = tiny();
        let a = run_experiment::<f64>(&c, false).unwrap();
        let b = run_experiment::<f64>(&c, false).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.log.stage_losses(1).len(), 6);
    }

    #[test]
    fn baseline_keeps_initial_backbone() {
        let c = tiny();
        let r = run_experiment::<f64>(&c, true).unwrap();
        let init: ModelParams<f64> = init_params(c.model_seed(), &c.arch).unwrap();
        assert_eq!(r.model.backbone, init.backbone);
        assert!(r.log.stage_losses(1).is_empty());
    }

    #[test]
    fn splits_are_independent() {
        let d = generate_data::<f64>(&tiny()).unwrap();
        assert_eq!(d.train.len(), 200);
        assert_eq!(d.test.len(), 100);
        assert_ne!(d.train.instances[0].input, d.test.instances[0].input);
    }
}
