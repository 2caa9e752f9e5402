use super::*;
use crate::btv::{optimize, GenConfig};
use crate::estimate::calibrate_threshold;
use crate::inject::{InjectionKind, Injector};
use crate::nn::{train_reference, Architecture, Model, SyntheticBlobs, TrainConfig};
use crate::quant::quantize;

struct Fixture {
    clean: QuantizedModel,
    btv: BayesianTestVector,
    data: Dataset,
}

fn fixture(offset: f64) -> Fixture {
    let blobs = SyntheticBlobs {
        shape: vec![1, 4, 4],
        classes: 4,
        noise: 1.0,
        seed: 3,
    };
    let data = blobs.generate(40, 0).unwrap();
    let init = Architecture::Mlp { hidden: vec![8] }
        .build("tiny", &[1, 4, 4], 4, 5)
        .unwrap();
    let (model, _) = train_reference(&data, &init, &TrainConfig::default()).unwrap();
    let clean = quantize(&model).unwrap();
    let cfg = GenConfig {
        steps: 100,
        ..GenConfig::default()
    };
    let mut btv = optimize(clean.as_model(), &cfg).unwrap().btv;
    calibrate_threshold(&clean, &mut btv, offset, 8, cfg.calibration_seed()).unwrap();
    Fixture { clean, btv, data }
}

impl Fixture {
    fn inputs(&self) -> CampaignInputs<'_> {
        CampaignInputs {
            clean: &self.clean,
            btv: &self.btv,
            dataset: Some(&self.data),
        }
    }
}

fn grid() -> Vec<InjectionSpec> {
    vec![
        InjectionSpec::variation(InjectionKind::Multiplicative, 0.0, 0),
        InjectionSpec::variation(InjectionKind::Multiplicative, 0.5, 0),
        InjectionSpec::fault(InjectionKind::BitFlip, 0.05, 0),
    ]
}

#[test]
fn zero_noise_cell_is_never_flagged() {
    let f = fixture(0.05);
    let r = run_campaign(&CampaignConfig::new(grid(), 20, 1), f.inputs()).unwrap();
    assert_eq!(r.cells[0].coverage, 0.0);
    assert_eq!(r.cells[0].verifiable_coverage, Some(0.0));
}

#[test]
fn zero_threshold_flags_everything() {
    let mut f = fixture(0.0);
    f.btv.set_clean_sigma(0.0);
    f.btv.set_threshold(0.0).unwrap();
    let r = run_campaign(&CampaignConfig::new(grid(), 10, 1), f.inputs()).unwrap();
    for c in &r.cells {
        assert_eq!(c.coverage, 100.0);
    }
}

#[test]
fn counts_and_conjunction_invariants() {
    let f = fixture(0.05);
    let r = run_verifiable_campaign(&CampaignConfig::new(grid(), 30, 2), f.inputs()).unwrap();
    assert_eq!(r.records.len(), 3 * 30);
    for c in &r.cells {
        assert_eq!(c.runs, 30);
        let undetected = r
            .records
            .iter()
            .filter(|x| x.cell == c.cell && x.detected == Some(false))
            .count();
        assert_eq!(c.detected + undetected + c.invalid, c.runs);
        assert_eq!(c.coverage, 100.0 * c.detected as f64 / 30.0);
        assert!(c.verifiable_coverage.unwrap() <= c.coverage);
    }
}

#[test]
fn identical_across_thread_counts() {
    let f = fixture(0.05);
    let cfg = CampaignConfig::new(grid(), 25, 77);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_verifiable_campaign(&cfg, f.inputs()).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a, b);
    assert_eq!(records_csv(&a).unwrap(), records_csv(&b).unwrap());
}

#[test]
fn offset_sweep_is_monotone() {
    let f = fixture(0.0);
    let mut cfg = CampaignConfig::new(grid(), 40, 5);
    cfg.sweep_cell = 1;
    cfg.offsets = vec![0.0, 0.05, 0.1, 0.5, 5.0, 1e6];
    let r = offset_sweep(&cfg, f.inputs()).unwrap();
    let cov: Vec<f64> = r.cells.iter().map(|c| c.coverage).collect();
    assert!(cov.windows(2).all(|w| w[0] >= w[1]), "{cov:?}");
    assert_eq!(*cov.last().unwrap(), 0.0);
    cfg.offsets = vec![0.1, 0.0];
    assert!(offset_sweep(&cfg, f.inputs()).is_err());
}

#[test]
fn full_fraction_layerwise_matches_plain_campaign() {
    let f = fixture(0.05);
    let mut cfg = CampaignConfig::new(grid()[1..].to_vec(), 15, 9);
    let plain = run_campaign(&cfg, f.inputs()).unwrap();
    cfg.layer_fractions = vec![1.0];
    let lw = layerwise_campaign(&cfg, f.inputs()).unwrap();
    assert_eq!(plain.records, lw.records);
}

#[test]
fn missing_threshold_and_dataset_are_rejected() {
    let mut f = fixture(0.05);
    let cfg = CampaignConfig::new(grid(), 5, 1);
    let no_data = CampaignInputs {
        dataset: None,
        ..f.inputs()
    };
    assert!(matches!(run_verifiable_campaign(&cfg, no_data), Err(Error::Config(_))));
    f.btv.clear_threshold();
    assert!(matches!(run_campaign(&cfg, f.inputs()), Err(Error::Contract(_))));
}

struct Poison;

impl Injector for Poison {
    fn name(&self) -> &'static str {
        "additive"
    }
    fn kind(&self) -> InjectionKind {
        InjectionKind::Additive
    }
    fn perturb(&self, clean: &QuantizedModel, spec: &InjectionSpec) -> Result<Model> {
        let mut m = clean.dequantize();
        if spec.seed % 2 == 0 {
            m.for_each_param_mut(|_, w, _| w.fill(f64::NAN));
        }
        Ok(m)
    }
}

#[test]
fn nan_runs_are_excluded_and_counted() {
    let f = fixture(0.0);
    let mut reg = InjectorRegistry::builtin();
    reg.register(Box::new(Poison));
    let cfg = CampaignConfig::new(
        vec![InjectionSpec::variation(InjectionKind::Additive, 0.1, 0)],
        40,
        3,
    );
    let r = ModeRegistry::builtin()
        .run(&cfg, CampaignInputs { dataset: None, ..f.inputs() }, &reg)
        .unwrap();
    let c = &r.cells[0];
    let even = (0..40).filter(|&i| cfg.run_seed(i) % 2 == 0).count();
    assert_eq!(c.invalid, even);
    assert!(c.mean_sigma.is_finite());
    assert_eq!(
        c.coverage,
        100.0 * c.detected as f64 / (40 - even) as f64
    );
}

#[test]
fn mode_registry_dispatches_by_name() {
    let reg = ModeRegistry::builtin();
    let names: Vec<_> = reg.names().collect();
    assert_eq!(names, ["coverage", "layerwise", "offset_sweep", "verifiable"]);
    assert!(reg.get("verifiable").unwrap().needs_dataset());
    assert!(matches!(reg.get("bogus"), Err(Error::Config(_))));
}

#[test]
fn false_positive_rate_of_generous_threshold_is_zero() {
    let mut f = fixture(0.0);
    let t = f.btv.clean_sigma() + 10.0;
    f.btv.set_threshold(t).unwrap();
    let fp = false_positive_rate(&f.clean, &f.btv, 1, 50, 4).unwrap();
    assert_eq!(fp.flagged, 0);
}

#[test]
fn prescan_drop_grows_with_noise() {
    let f = fixture(0.05);
    let t = InjectionSpec::variation(InjectionKind::Multiplicative, 0.0, 0);
    let pts = prescan(
        &f.clean,
        &f.data,
        &t,
        &[0.0, 2.0],
        10,
        1,
        &InjectorRegistry::builtin(),
    )
    .unwrap();
    assert_eq!(pts[0].drop_points, 0.0);
    assert!(pts[1].drop_points > 0.0);
    assert_eq!(pick_in_band(&pts, DropBand::at_least(1e-9)).unwrap().magnitude, 2.0);
    assert!(pick_in_band(&pts, DropBand::new(1e3, 2e3)).is_none());
}

#[test]
fn reports_render() {
    let f = fixture(0.05);
    let r = run_campaign(&CampaignConfig::new(grid(), 3, 1), f.inputs()).unwrap();
    let csv = records_csv(&r).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9);
    assert!(csv.starts_with("cell,kind,rate,noise_scale"));
    let json: serde_json::Value = serde_json::from_str(&summary_json(&r).unwrap()).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 3);
    let rows = logit_spread(&[("clean", &f.clean as &dyn Network)], &f.btv, 2, 0).unwrap();
    assert_eq!(rows.len(), 2 * 4);
    assert_eq!(logit_spread_csv(&rows).unwrap().lines().count(), 9);
}
