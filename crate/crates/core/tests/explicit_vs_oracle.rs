use ntk_core::linalg::{sym_eigvals, Mat};
use ntk_core::mlp::{forward, init_network, Activation, BiasInit, NetworkConfig};
use ntk_core::ntk::{explicit_ntk, sum_components};
use ntk_core::oracle::{oracle_full_ntk, oracle_layerwise_ntk, per_sample_gradients};
use ntk_core::rng::SeededRng;
use proptest::prelude::*;

fn input(d: usize, n: usize, seed: u64) -> Mat {
    let mut rng = SeededRng::new(seed);
    Mat::from_fn(d, n, |_, _| rng.normal())
}

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Tanh), Just(Activation::Relu), Just(Activation::Identity)]
}

fn check(cfg: &NetworkConfig, seed: u64, n: usize) -> Result<(), TestCaseError> {
    let state = init_network(cfg, seed);
    let x = input(cfg.input_dim(), n, seed ^ 0xabc);
    let trace = forward(&state, cfg, &x).unwrap();
    let explicit = explicit_ntk(&trace, &state, cfg).unwrap();
    let grads = per_sample_gradients(&state, cfg, &x).unwrap();
    let layerwise = oracle_layerwise_ntk(&grads);
    let full = oracle_full_ntk(&grads);

    let names: Vec<_> = explicit.names().collect();
    prop_assert_eq!(names, layerwise.names().collect::<Vec<_>>());
    for (name, k) in explicit.iter() {
        let rel = k.rel_diff(layerwise.get(name).unwrap()).unwrap();
        prop_assert!(rel <= 1e-10, "{}: {:e}", name, rel);
        prop_assert!(k.is_exactly_symmetric());
    }
    let sum = sum_components(&explicit).unwrap();
    prop_assert!(sum.rel_diff(&full).unwrap() <= 1e-10);
    prop_assert!(layerwise.sum().unwrap().rel_diff(&full).unwrap() <= 1e-14);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn explicit_matches_oracle(
        widths in prop::collection::vec(2usize..24, 2..6),
        act in activation(),
        bias in any::<bool>(),
        ntk_param in any::<bool>(),
        n in 1usize..16,
        seed in any::<u64>(),
    ) {
        let cfg = NetworkConfig::new(widths, act).unwrap()
            .with_bias(bias)
            .with_ntk_parameterization(ntk_param)
            .with_bias_init(BiasInit::StandardNormal);
        check(&cfg, seed, n)?;
    }
}

#[test]
fn four_layer_hundred_wide_configuration() {
    // input 100, three hidden tanh layers of 100, 50 points
    let cfg = NetworkConfig::new(vec![100, 100, 100, 100], Activation::Tanh).unwrap();
    check(&cfg, 0, 50).unwrap();
}

#[test]
fn deep_narrow_relu() {
    let cfg = NetworkConfig::new(vec![5, 8, 8, 8, 8, 8, 8, 8, 8], Activation::Relu).unwrap().with_bias(true);
    check(&cfg, 3, 20).unwrap();
}

#[test]
fn components_are_psd() {
    let cfg = NetworkConfig::new(vec![6, 10, 10], Activation::Tanh).unwrap().with_bias(true);
    let state = init_network(&cfg, 8);
    let x = input(6, 12, 1);
    let comps = explicit_ntk(&forward(&state, &cfg, &x).unwrap(), &state, &cfg).unwrap();
    for (name, k) in comps.iter() {
        let eig = sym_eigvals(k, 0.0).unwrap();
        assert!(eig[11] >= -1e-9 * eig[0], "{name}: {eig:?}");
    }
}
