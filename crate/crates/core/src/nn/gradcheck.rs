//! Central finite-difference checks of graph gradients at double precision.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::model::{Backend, GraphBackend, ShapeTracer};
use super::params::ParamStore;
use super::tensor::Tensor;

/// Step of the central difference.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Difference step and relative-error floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    pub step: f64,
    pub floor: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            step: FD_STEP,
            floor: REL_ERR_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Tensor and flat index of the worst entry, e.g. `conv.weight[17]` or `input0[3]`.
    pub worst: String,
    pub n_checked: usize,
}

/// A sub-network that can be traced for its parameters and built on a graph.
pub trait Block {
    fn build<B: Backend>(&self, b: &mut B, inputs: &[B::V]) -> B::V;
}

/// Parameters a block declares for the given input shapes, filled with
/// seeded uniform values in `±1/√fan_in`. Unlike network initialization,
/// biases and GC value transforms are non-zero so every path carries signal.
pub fn block_params<K: Block>(
    block: &K,
    input_shapes: &[[usize; 4]],
    seed: u64,
) -> ParamStore<f64> {
    let mut t = ShapeTracer::new();
    let inputs: Vec<usize> = input_shapes.iter().map(|&s| t.input(s)).collect();
    block.build(&mut t, &inputs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::default();
    for (name, shape) in t.params {
        let fan_in: usize = shape.iter().skip(1).product::<usize>().max(1);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..shape.iter().product())
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        store.insert(&name, Tensor::from_vec(&shape, data));
    }
    store
}

/// Seeded uniform `[-1, 1)` tensor.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Compares back-propagated gradients of the scalar built by `objective`
/// against central differences, on up to `probes` seeded entries of every
/// parameter and input tensor.
pub fn check_gradients<F>(
    params: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    probes: usize,
    seed: u64,
    objective: F,
) -> GradCheckReport
where
    F: Fn(&mut GraphBackend<f64>, &[Var]) -> Var,
{
    check_gradients_with(
        params,
        inputs,
        probes,
        seed,
        FdOptions::default(),
        objective,
    )
}

/// [`check_gradients`] with explicit options. Deep stacks of rectifiers put
/// a kink within `1e-5` of some probes; a smaller step keeps them out of the
/// difference window, at the cost of more round-off, which a larger floor
/// absorbs.
pub fn check_gradients_with<F>(
    params: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    probes: usize,
    seed: u64,
    opts: FdOptions,
    objective: F,
) -> GradCheckReport
where
    F: Fn(&mut GraphBackend<f64>, &[Var]) -> Var,
{
    let step = opts.step;
    let eval = |params: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> f64 {
        let mut graph = Graph::new();
        let mut be = GraphBackend::new(&mut graph, params, false);
        let vars: Vec<Var> = inputs.iter().map(|t| be.graph.input(t.clone())).collect();
        let root = objective(&mut be, &vars);
        graph.value(root).item()
    };

    let mut graph = Graph::new();
    let mut be = GraphBackend::new(&mut graph, params, true);
    let input_vars: Vec<Var> = inputs
        .iter()
        .map(|t| be.graph.leaf(t.clone(), true))
        .collect();
    let root = objective(&mut be, &input_vars);
    let param_vars = be.into_param_vars();
    let grads = graph.backward(root);
    let zeros = |shape: &[usize]| Tensor::zeros(shape);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        n_checked: 0,
    };
    let mut note = |name: &str, i: usize, analytic: f64, numeric: f64| {
        let e = relative_error(analytic, numeric, opts.floor);
        report.n_checked += 1;
        if e > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = e;
            report.worst = format!("{name}[{i}]");
        }
    };

    for (name, tensor) in params.iter() {
        let analytic = param_vars
            .get(name)
            .and_then(|&v| grads.get(v).cloned())
            .unwrap_or_else(|| zeros(&tensor.shape));
        for i in sample(&mut rng, tensor.len(), probes.min(tensor.len())) {
            let mut p = params.clone();
            let x0 = tensor.data[i];
            p.get_mut(name).unwrap().data[i] = x0 + step;
            let up = eval(&p, inputs);
            p.get_mut(name).unwrap().data[i] = x0 - step;
            let down = eval(&p, inputs);
            note(name, i, analytic.data[i], (up - down) / (2.0 * step));
        }
    }
    for (k, (tensor, &var)) in inputs.iter().zip(&input_vars).enumerate() {
        let analytic = grads
            .get(var)
            .cloned()
            .unwrap_or_else(|| zeros(&tensor.shape));
        for i in sample(&mut rng, tensor.len(), probes.min(tensor.len())) {
            let mut xs = inputs.to_vec();
            let x0 = tensor.data[i];
            xs[k].data[i] = x0 + step;
            let up = eval(params, &xs);
            xs[k].data[i] = x0 - step;
            let down = eval(params, &xs);
            note(
                &format!("input{k}"),
                i,
                analytic.data[i],
                (up - down) / (2.0 * step),
            );
        }
    }
    report
}

/// Checks a block through the scalar `⟨block(inputs), r⟩` for a fixed
/// random `r`, with [`block_params`] weights and random inputs.
pub fn check_block<K: Block>(
    block: &K,
    input_shapes: &[[usize; 4]],
    probes: usize,
    seed: u64,
) -> GradCheckReport {
    let params = block_params(block, input_shapes, seed);
    let inputs: Vec<Tensor<f64>> = input_shapes
        .iter()
        .enumerate()
        .map(|(k, s)| random_tensor(s, seed.wrapping_add(1 + k as u64)))
        .collect();
    let mut t = ShapeTracer::new();
    let vars: Vec<usize> = input_shapes.iter().map(|&s| t.input(s)).collect();
    let out = block.build(&mut t, &vars);
    let r = random_tensor(&t.dims(out), seed.wrapping_add(1000));
    check_gradients(&params, &inputs, probes, seed, |be, xs| {
        let y = block.build(be, xs);
        be.graph.dot(y, r.clone())
    })
}
