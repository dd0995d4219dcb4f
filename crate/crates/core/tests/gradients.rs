mod common;

use asnet_core::nn::config::Branches;
use asnet_core::nn::gradcheck::{check_gradients, check_gradients_with, random_tensor, FdOptions};
use asnet_core::nn::{
    asnet_forward, init_params, Graph, GraphBackend, NetConfig, ParamStore, Tensor,
};
use asnet_core::train::{batch_step, Adam};

use common::{gradient_suite, small_config, PROBES};

const TOL: f64 = 1e-3;

#[test]
fn blocks_match_finite_differences() {
    for seed in [1, 2] {
        for (name, r) in gradient_suite(seed) {
            assert!(r.n_checked > 0, "{name}");
            assert!(r.max_rel_err < TOL, "{name} seed {seed}: {r:?}");
        }
    }
}

fn whole_network_check(cfg: &NetConfig, seed: u64) {
    // network initialization zeroes biases and GC transforms; perturb them
    let base: ParamStore<f64> = init_params(cfg);
    let mut params = ParamStore::default();
    for (k, (name, t)) in base.iter().enumerate() {
        let noise = random_tensor(&t.shape, seed + k as u64);
        let data = t
            .data
            .iter()
            .zip(&noise.data)
            .map(|(a, b)| a + 0.1 * b)
            .collect();
        params.insert(name, Tensor::from_vec(&t.shape, data));
    }
    let n = cfg.side_n;
    let signal = random_tensor(&cfg.signal_input_shape(1), seed);
    let das = random_tensor(&[1, 1, n, n], seed + 1);
    let target = random_tensor(&[1, 1, n, n], seed + 2);
    let opts = FdOptions {
        step: 1e-7,
        floor: 1e-5,
    };
    let r = check_gradients_with(&params, &[signal, das], 3, seed, opts, |be, xs| {
        let out = asnet_forward(be, cfg, xs[0], xs[1]);
        let recon = be.graph.smooth_l1(out.y_r, &target);
        match out.y_d {
            Some(y_d) => {
                let aux = be.graph.smooth_l1(y_d, &target);
                be.graph.weighted_sum(&[(recon, 0.2), (aux, 1.0)])
            }
            None => recon,
        }
    });
    assert!(r.max_rel_err < TOL, "{cfg:?}: {r:?}");
}

#[test]
fn whole_network_matches_finite_differences() {
    let cfg = small_config();
    whole_network_check(&cfg, 11);
    whole_network_check(
        &NetConfig {
            branches: Branches::SignalOnly,
            ..cfg.clone()
        },
        12,
    );
}

#[test]
fn unfolded_stem_network_matches_finite_differences() {
    let cfg = NetConfig {
        use_ft_stem: false,
        ..small_config()
    };
    whole_network_check(&cfg, 13);
}

#[test]
fn every_parameter_receives_a_gradient() {
    // side 32 leaves the deepest GC block a 2×2 map; on a single position
    // its attention is constant and the key gradient vanishes
    let cfg = NetConfig::desk(3, 32, 4);
    let mut params = init_params::<f32>(&cfg);
    let n = cfg.side_n;
    let signal: Tensor<f32> = random_tensor(&cfg.signal_input_shape(2), 1).cast();
    let das: Tensor<f32> = random_tensor(&[2, 1, n, n], 2).cast();
    let target: Tensor<f32> = random_tensor(&[2, 1, n, n], 3).cast();
    let step = |params: &ParamStore<f32>| {
        batch_step(&cfg, params, signal.clone(), das.clone(), &target, 0.2, 1.0).1
    };

    // GC value transforms start at zero, so GC keys only see a gradient
    // once the transforms have moved
    let grads = step(&params);
    assert_eq!(grads.len(), params.len());
    for (name, g) in &grads {
        assert_eq!(g.shape, params.get(name).unwrap().shape, "{name}");
        assert!(g.all_finite(), "{name}");
        let zero = g.data.iter().all(|&v| v == 0.0);
        assert_eq!(zero, name.ends_with(".wk"), "{name}");
    }
    Adam::default().step(&mut params, &grads, 1e-3);
    for (name, g) in &step(&params) {
        assert!(
            g.data.iter().any(|&v| v != 0.0),
            "{name} has an all-zero gradient"
        );
    }
}

#[test]
fn probe_count_is_bounded_by_tensor_size() {
    let mut g = Graph::<f64>::new();
    let params = ParamStore::default();
    let be = GraphBackend::new(&mut g, &params, true);
    assert!(be.param_vars().is_empty());
    let r = check_gradients(
        &params,
        &[random_tensor(&[1, 1, 2, 2], 0)],
        PROBES,
        0,
        |be, xs| be.graph.smooth_l1(xs[0], &random_tensor(&[1, 1, 2, 2], 1)),
    );
    assert_eq!(r.n_checked, 4);
}
