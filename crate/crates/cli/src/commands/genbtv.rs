use std::path::Path;

use btv_core::btv::{optimize, optimize_grid, write_btv};
use btv_core::estimate::{calibrate_threshold, choose_sample_count};
use serde_json::json;

use crate::config::{self, GenFile};
use crate::error::{CliError, CliResult};
use crate::session::{stem, Context, ModelFile, Outcome, Session};

/// Optimizes a test vector for the model, calibrates `t = clean σ_y + offset`
/// and writes `<model>-s<seed>.btv` with its loss trace.
pub fn genbtv(ctx: &Context, model_path: &Path, config_path: Option<&Path>) -> CliResult<Outcome> {
    let mut s = Session::new(ctx, "genbtv");
    let mut file: GenFile = match config_path {
        Some(p) => config::load(&mut s, p, "generator config")?,
        None => GenFile::default(),
    };
    let (seed, source) = ctx.resolve_seed(file.seed.or(Some(file.generator.seed)))?;
    file.seed = Some(seed);
    file.generator.seed = seed;
    if !(file.offset >= 0.0 && file.offset.is_finite()) {
        return Err(CliError::config(format!("offset {} must be finite and ≥ 0", file.offset)));
    }
    if file.calibration_samples == Some(0) {
        return Err(CliError::config("calibration_samples must be ≥ 1"));
    }
    file.generator.validate()?;
    s.set_seed(seed);
    s.set_config(&file)?;

    let mf = ModelFile::read(&mut s, model_path)?;
    let model = mf.model();
    if file.generator.steps == 0 {
        s.warn("warning: steps = 0, storing the unoptimized initialization");
    }
    s.info(format!("optimizing a test vector for {}", model.name));
    let (outcome, trials) = if file.search_alpha {
        let (o, t) = optimize_grid(model, &file.generator)?;
        (o, Some(t))
    } else {
        (optimize(model, &file.generator)?, None)
    };
    let final_loss = outcome.final_loss();
    if final_loss.is_some_and(|l| !l.is_finite()) {
        return Err(CliError::Numeric(format!("final loss is {}", final_loss.unwrap())));
    }
    let mut btv = outcome.btv;
    let n = match file.calibration_samples {
        Some(n) => n,
        None => choose_sample_count(model.num_classes())?,
    };
    let t = calibrate_threshold(model, &mut btv, file.offset, n, file.generator.calibration_seed())?;

    let base = format!("{}-s{seed}", stem(model_path));
    let path = s.write(&format!("{base}.btv"), &write_btv(&btv)?)?;
    let mut trace = String::from("step,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        trace.push_str(&format!("{i},{l}\n"));
    }
    s.write(&format!("{base}-loss.csv"), trace.as_bytes())?;

    let loss_text = final_loss.map_or("none".to_string(), |l| l.to_string());
    s.print(format!(
        "btv {} final_loss {loss_text} clean_sigma {} t {t}",
        path.display(),
        btv.clean_sigma()
    ));
    s.ok(json!({
        "seed_source": source,
        "alpha": btv.alpha(),
        "alpha_trials": trials,
        "final_loss": final_loss,
        "kl": btv.kl(),
        "clean_sigma": btv.clean_sigma(),
        "threshold": t,
        "calibration_samples": n,
    }))
}
