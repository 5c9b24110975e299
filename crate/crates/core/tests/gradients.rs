mod oracles;

use ndarray::array;
use repref_core::dataio::TaskKind;
use repref_core::probes::{build_probe, Architecture, ProbeSpec};

#[test]
fn default_suite_matches_finite_differences() {
    println!("{}", oracles::probe_gradients().unwrap());
}

#[test]
fn key_tasks_share_the_softmax_gradient() {
    let spec = ProbeSpec::new("mlp", Architecture::Mlp { hidden: vec![5] });
    let x = array![[0.3, -1.2, 0.8], [1.1, 0.4, -0.6]];
    let y = array![[0.0, 1.0], [1.0, 0.0]];
    let mut key = build_probe::<f64>(&spec, 3, 2, TaskKind::Key, 4);
    let mut multi = build_probe::<f64>(&spec, 3, 2, TaskKind::Multiclass, 4);
    let a = oracles::gradient_error(&mut key, x.view(), y.view(), 1e-5);
    let b = oracles::gradient_error(&mut multi, x.view(), y.view(), 1e-5);
    assert!(a < 1e-4 && b < 1e-4, "{a} {b}");
}
