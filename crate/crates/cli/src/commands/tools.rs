use std::path::Path;

use btv_core::btv::{presampled_payload_bytes, read_btv, write_presampled, MEGABYTE};
use btv_core::estimate::presample as draw_presample;
use btv_core::inject::{InjectionKind, InjectionSpec, InjectorRegistry};
use btv_core::nn::{evaluate_accuracy, read_dataset, write_model};
use btv_core::quant::{quantize_with_report, write_quantized};
use serde_json::json;

use super::ConfigKind;
use crate::config::{self, bundled, CampaignFile, GenFile, TrainFile};
use crate::error::{CliError, CliResult};
use crate::session::{stem, Context, ModelFile, Outcome, Session};

/// Writes `<model>.qmodel`.
pub fn quantize(ctx: &Context, model_path: &Path, dataset: Option<&Path>) -> CliResult<Outcome> {
    let mut s = Session::new(ctx, "quantize");
    s.set_config(&json!({ "model": model_path, "dataset": dataset }))?;
    let model = match ModelFile::read(&mut s, model_path)? {
        ModelFile::Float(m) => m,
        ModelFile::Quantized(_) => {
            return Err(CliError::config(format!("`{}` is already quantized", model_path.display())))
        }
    };
    let (q, report) = quantize_with_report(&model)?;
    let path = s.write(&format!("{}.qmodel", stem(model_path)), &write_quantized(&q)?)?;
    let mut details = json!({ "zero_layers": report.zero_layers });
    let mut line = format!("quantized {}", path.display());
    if let Some(d) = dataset {
        let bytes = s.read(d, "dataset")?;
        let data = read_dataset(&bytes).map_err(|e| CliError::input(d, e))?;
        let before = evaluate_accuracy(&model, &data)?;
        let after = evaluate_accuracy(q.as_model(), &data)?;
        line.push_str(&format!(" accuracy {before:.4} -> {after:.4}"));
        details["accuracy_float"] = json!(before);
        details["accuracy_quantized"] = json!(after);
    }
    s.print(line);
    s.ok(details)
}

/// Draws one sample of the test vector and writes `<btv>-s<seed>.btvs`.
pub fn presample(ctx: &Context, model_path: &Path, btv_path: &Path, offset: f64) -> CliResult<Outcome> {
    let mut s = Session::new(ctx, "presample");
    let (seed, source) = ctx.resolve_seed(None)?;
    s.set_seed(seed);
    s.set_config(&json!({ "model": model_path, "btv": btv_path, "offset": offset, "seed": seed }))?;
    let mf = ModelFile::read(&mut s, model_path)?;
    let bytes = s.read(btv_path, "test vector")?;
    let btv = read_btv(&bytes).map_err(|e| CliError::input(btv_path, e))?;
    let v = draw_presample(mf.model(), &btv, offset, seed)?;
    let path = s.write(&format!("{}-s{seed}.btvs", stem(btv_path)), &write_presampled(&v)?)?;
    let payload = presampled_payload_bytes(v.input.shape());
    s.print(format!(
        "sample {} clean_sigma {} t {} payload {payload} B ({} MB)",
        path.display(),
        v.clean_sigma,
        v.threshold.expect("presample calibrates"),
        payload as f64 / MEGABYTE
    ));
    s.ok(json!({ "seed_source": source, "clean_sigma": v.clean_sigma, "threshold": v.threshold }))
}

/// Writes a perturbed float copy `<model>-<kind>-s<seed>.model`.
pub fn inject(
    ctx: &Context,
    model_path: &Path,
    kind: InjectionKind,
    magnitude: f64,
    layer_fraction: f64,
) -> CliResult<Outcome> {
    let mut s = Session::new(ctx, "inject");
    let (seed, source) = ctx.resolve_seed(None)?;
    let spec = InjectionSpec::with_magnitude(kind, magnitude, seed).layer_fraction(layer_fraction);
    spec.validate()?;
    s.set_seed(seed);
    s.set_config(&json!({ "model": model_path, "spec": &spec }))?;
    let q = ModelFile::read(&mut s, model_path)?.into_quantized()?;
    let perturbed = InjectorRegistry::builtin().for_spec(&spec)?.perturb(&q, &spec)?;
    let path = s.write(
        &format!("{}-{kind}-s{seed}.model", stem(model_path)),
        &write_model(&perturbed)?,
    )?;
    s.print(format!("perturbed {}", path.display()));
    s.ok(json!({ "seed_source": source, "spec": spec }))
}

pub fn default_config(kind: ConfigKind) -> String {
    match kind {
        ConfigKind::TrainMlp => bundled::TRAIN_MLP.to_string(),
        ConfigKind::TrainCnn => bundled::TRAIN_CNN.to_string(),
        ConfigKind::Genbtv => config::render(&GenFile::default()),
        ConfigKind::Campaign => config::render(&CampaignFile::template()),
        ConfigKind::Reproduce => bundled::REPRODUCE.to_string(),
    }
}

/// Prints a complete config; every default is spelled out.
pub fn print_config(ctx: &Context, kind: ConfigKind) -> CliResult<Outcome> {
    let mut s = Session::new(ctx, "print-config");
    let text = default_config(kind);
    // Validate what is printed so that it always loads back.
    match kind {
        ConfigKind::TrainMlp | ConfigKind::TrainCnn => drop(config::parse::<TrainFile>(&text, "train config")?),
        ConfigKind::Genbtv => drop(config::parse::<GenFile>(&text, "generator config")?),
        ConfigKind::Campaign | ConfigKind::Reproduce => {
            config::parse::<CampaignFile>(&text, "campaign config")?.validate()?
        }
    }
    s.set_config(&json!({ "kind": format!("{kind:?}") }))?;
    s.print(text.trim_end().to_string());
    s.ok(json!({}))
}
