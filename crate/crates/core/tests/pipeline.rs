use btv_core::btv::{read_btv, write_btv, optimize, GenConfig};
use btv_core::estimate::{calibrate_threshold, estimate_seeded};
use btv_core::nn::{evaluate_accuracy, train_reference, Network};
use btv_core::quant::quantize;
use btv_core::reference::ReferenceSpec;
use btv_core::rng::rng_from;
use btv_core::tensor::population_std;
use btv_core::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

fn random_input_sigma<N: Network>(net: &N, count: usize, seed: u64) -> f64 {
    let mut rng = rng_from(seed);
    let shape = net.input_shape().to_vec();
    let n: usize = shape.iter().product();
    (0..count)
        .map(|_| {
            let x = Tensor::new(shape.clone(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
            population_std(net.logits(&x).unwrap().data()).unwrap()
        })
        .sum::<f64>()
        / count as f64
}

#[test]
fn reference_mlp_end_to_end() {
    let spec = ReferenceSpec::mlp();
    let (train, test) = spec.datasets().unwrap();
    let (model, report) = train_reference(&train, &spec.untrained().unwrap(), &spec.train).unwrap();
    assert!(report.train_accuracy >= 0.90, "train accuracy {}", report.train_accuracy);
    let float_acc = evaluate_accuracy(&model, &test).unwrap();
    assert!(float_acc >= 0.90, "test accuracy {float_acc}");

    let q = quantize(&model).unwrap();
    let q_acc = evaluate_accuracy(q.as_model(), &test).unwrap();
    assert!((float_acc - q_acc).abs() * 100.0 <= 2.0, "{float_acc} → {q_acc}");

    let cfg = GenConfig::default();
    let mut btv = optimize(q.as_model(), &cfg).unwrap().btv;
    let baseline = random_input_sigma(q.as_model(), 100, 5);
    assert!(btv.clean_sigma() <= 0.1 * baseline, "{} vs {baseline}", btv.clean_sigma());

    let seed = cfg.calibration_seed();
    calibrate_threshold(q.as_model(), &mut btv, 0.05, 1, seed).unwrap();
    let back = read_btv(&write_btv(&btv).unwrap()).unwrap();
    let est = estimate_seeded(q.as_model(), &back, 1, seed).unwrap();
    assert_eq!(est.sigma_y, back.clean_sigma());
    assert_eq!(est.threshold, back.threshold());
    assert!(!est.verdict().unwrap());
}
