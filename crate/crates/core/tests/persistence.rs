use btv_core::btv::{load_btv, optimize, save_btv, GenConfig};
use btv_core::estimate::{calibrate_threshold, estimate_seeded};
use btv_core::nn::{load_model, save_model, Architecture, Model, Network, SyntheticBlobs};
use btv_core::quant::{load_quantized, quantize, save_quantized};
use btv_core::Tensor;

fn small_model() -> Model {
    Architecture::Cnn {
        channels: [3, 4],
        hidden: 8,
    }
    .build("p", &[2, 8, 8], 5, 3)
    .unwrap()
}

fn inputs(model: &Model) -> Vec<Tensor> {
    SyntheticBlobs {
        shape: model.input_shape().to_vec(),
        classes: 5,
        noise: 1.0,
        seed: 4,
    }
    .generate(100, 0)
    .unwrap()
    .inputs()
    .to_vec()
}

#[test]
fn model_round_trip_gives_bit_equal_logits() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_model();
    let path = dir.path().join("m.bin");
    save_model(&m, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, m);
    for x in inputs(&m) {
        assert_eq!(m.logits(&x).unwrap().data(), back.logits(&x).unwrap().data());
    }
}

#[test]
fn quantized_round_trip_gives_bit_equal_logits() {
    let dir = tempfile::tempdir().unwrap();
    let q = quantize(&small_model()).unwrap();
    let path = dir.path().join("q.bin");
    save_quantized(&q, &path).unwrap();
    let back = load_quantized(&path).unwrap();
    assert_eq!(back, q);
    for x in inputs(q.as_model()) {
        assert_eq!(
            q.as_model().logits(&x).unwrap().data(),
            back.as_model().logits(&x).unwrap().data()
        );
    }
}

#[test]
fn btv_round_trip_reproduces_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_model();
    let cfg = GenConfig {
        steps: 50,
        ..GenConfig::default()
    };
    let mut btv = optimize(&m, &cfg).unwrap().btv;
    calibrate_threshold(&m, &mut btv, 0.05, 1, 9).unwrap();
    let path = dir.path().join("v.btv");
    save_btv(&btv, &path).unwrap();
    let back = load_btv(&path).unwrap();
    assert_eq!(back, btv);
    let a = estimate_seeded(&m, &btv, 1, 9).unwrap();
    let b = estimate_seeded(&m, &back, 1, 9).unwrap();
    assert_eq!(a.sigma_y, b.sigma_y);
    assert_eq!(b.sigma_y, back.clean_sigma());
}

#[test]
fn constant_logit_shift_preserves_argmax_and_sigma() {
    let m = small_model();
    let last = *m.param_layers().last().unwrap();
    let mut shifted = m.clone();
    shifted.for_each_param_mut(|idx, _, b| {
        if idx == last {
            b.iter_mut().for_each(|v| *v += 3.25);
        }
    });
    for x in inputs(&m) {
        assert_eq!(m.logits(&x).unwrap().argmax(), shifted.logits(&x).unwrap().argmax());
    }
    let btv = optimize(&m, &GenConfig { steps: 0, ..GenConfig::default() }).unwrap().btv;
    let a = estimate_seeded(&m, &btv, 4, 1).unwrap().sigma_y;
    let b = estimate_seeded(&shifted, &btv, 4, 1).unwrap().sigma_y;
    assert!((a - b).abs() < 1e-9 * (1.0 + a), "{a} vs {b}");
}
