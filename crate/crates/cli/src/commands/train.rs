use std::path::Path;

use btv_core::nn::{evaluate_accuracy, read_dataset, train_reference, write_dataset, write_model, Dataset};
use serde_json::json;

use crate::config::{self, DataSource, TrainFile};
use crate::error::{CliError, CliResult};
use crate::session::{relative_to, Context, Outcome, Session};

const ACCURACY_GATE: f64 = 0.90;

fn read_split(s: &mut Session<'_>, config: &Path, p: &Path, field: &str) -> CliResult<Dataset> {
    let path = relative_to(config, p);
    let bytes = s.read(&path, field)?;
    read_dataset(&bytes).map_err(|e| CliError::input(&path, e))
}

/// Trains the configured architecture and writes `<name>-s<seed>.model`, plus
/// the generated datasets for synthetic data.
pub fn train(ctx: &Context, config_path: &Path) -> CliResult<Outcome> {
    let mut s = Session::new(ctx, "train");
    let mut cfg: TrainFile = config::load(&mut s, config_path, "train config")?;
    let (seed, source) = ctx.resolve_seed(cfg.seed)?;
    cfg.seed = Some(seed);
    s.set_seed(seed);
    s.set_config(&cfg)?;

    let (train, test, generated) = match &cfg.data {
        DataSource::Synthetic {
            blobs,
            train_size,
            test_size,
        } => (blobs.generate(*train_size, 0)?, blobs.generate(*test_size, 1)?, true),
        DataSource::Files { train, test } => (
            read_split(&mut s, config_path, train, "data.train")?,
            read_split(&mut s, config_path, test, "data.test")?,
            false,
        ),
    };
    let template = cfg
        .model
        .build(&cfg.name, train.input_shape(), train.num_classes(), seed)?;
    s.info(format!("training {} on {} samples", cfg.name, train.len()));
    let (model, report) = train_reference(&train, &template, &cfg.train)?;
    let test_accuracy = evaluate_accuracy(&model, &test)?;

    let base = format!("{}-s{seed}", cfg.name);
    let model_path = s.write(&format!("{base}.model"), &write_model(&model)?)?;
    if generated {
        s.write(&format!("{base}-train.data"), &write_dataset(&train)?)?;
        s.write(&format!("{base}-test.data"), &write_dataset(&test)?)?;
    }
    if report.train_accuracy < ACCURACY_GATE {
        s.warn(format!(
            "warning: train accuracy {:.4} is below {ACCURACY_GATE}",
            report.train_accuracy
        ));
    }
    s.print(format!(
        "model {} train_accuracy {:.4} test_accuracy {:.4}",
        model_path.display(),
        report.train_accuracy,
        test_accuracy
    ));
    s.ok(json!({
        "seed_source": source,
        "train_accuracy": report.train_accuracy,
        "test_accuracy": test_accuracy,
        "epoch_loss": report.epoch_loss,
    }))
}
