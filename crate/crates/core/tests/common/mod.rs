//! Fixtures shared by the integration suites.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use asnet_core::beamform::das_reconstruct;
use asnet_core::nn::config::Branches;
use asnet_core::nn::gradcheck::{
    block_params, check_block, check_gradients, random_tensor, Block, GradCheckReport,
};
use asnet_core::nn::model::{atrous_inception, down_block, ff2, sfe_forward};
use asnet_core::nn::{Backend, ConvGeom, NetConfig, Tensor};
use asnet_core::simulate::{forward_project, make_geometry};
use asnet_core::{ArrayGeometry, ImageGrid};

/// Entries probed per parameter or input tensor.
pub const PROBES: usize = 12;

/// Small widths whose fusion head sees eight channels.
pub fn small_config() -> NetConfig {
    NetConfig {
        in_channels_q: 2,
        side_n: 16,
        enc_widths: [4, 4, 8, 8],
        sfe_width: 4,
        use_ft_stem: true,
        branches: Branches::Both,
        seed: 5,
    }
}

pub struct Gc;

impl Block for Gc {
    fn build<B: Backend>(&self, b: &mut B, xs: &[B::V]) -> B::V {
        b.gc("gc", xs[0])
    }
}

pub struct Atrous;

impl Block for Atrous {
    fn build<B: Backend>(&self, b: &mut B, xs: &[B::V]) -> B::V {
        atrous_inception(b, "bottom", xs[0], 2)
    }
}

pub struct Down;

impl Block for Down {
    fn build<B: Backend>(&self, b: &mut B, xs: &[B::V]) -> B::V {
        down_block(b, "enc", xs[0], 8)
    }
}

/// One decoder stage: concat with pooled image features, 1×1 fuse,
/// stride-2 transposed convolution, rectifier.
pub struct UpStage;

impl Block for UpStage {
    fn build<B: Backend>(&self, b: &mut B, xs: &[B::V]) -> B::V {
        let width = b.dims(xs[0])[1];
        let cat = b.concat(&[xs[0], xs[1]]);
        let fused = b.conv("fuse", cat, width, ConvGeom::pointwise());
        let fused = b.relu(fused);
        let up = b.tconv("dec", fused, 4);
        b.relu(up)
    }
}

pub struct FusionHead;

impl Block for FusionHead {
    fn build<B: Backend>(&self, b: &mut B, xs: &[B::V]) -> B::V {
        ff2(b, &small_config(), xs[0], xs[1])
    }
}

/// Smooth-L1 of the image-path auxiliary output against a fixed target.
pub fn sfe_loss_check(seed: u64) -> GradCheckReport {
    let cfg = NetConfig {
        sfe_width: 8,
        ..small_config()
    };
    struct Sfe(NetConfig);
    impl Block for Sfe {
        fn build<B: Backend>(&self, b: &mut B, xs: &[B::V]) -> B::V {
            sfe_forward(b, &self.0, xs[0]).1
        }
    }
    let block = Sfe(cfg);
    let shape = [1, 1, 12, 12];
    let params = block_params(&block, &[shape], seed);
    let target = random_tensor(&shape, seed + 7);
    check_gradients(
        &params,
        &[random_tensor(&shape, seed + 1)],
        PROBES,
        seed,
        |be, xs| {
            let y_d = block.build(be, xs);
            be.graph.smooth_l1(y_d, &target)
        },
    )
}

/// `λr·L(y_r, g) + λa·L(y_d, g)` with differences spread over `[-2.5, 2.5]`
/// so both sides of the smooth-L1 knee are probed.
pub fn loss_check(seed: u64) -> GradCheckReport {
    let shape = [1, 1, 12, 12];
    let spread =
        |t: Tensor<f64>| Tensor::from_vec(&t.shape, t.data.iter().map(|v| 2.5 * v).collect());
    let target = Tensor::zeros(&shape);
    let inputs = [
        spread(random_tensor(&shape, seed)),
        spread(random_tensor(&shape, seed + 1)),
    ];
    check_gradients(&Default::default(), &inputs, 144, seed, |be, xs| {
        let r = be.graph.smooth_l1(xs[0], &target);
        let a = be.graph.smooth_l1(xs[1], &target);
        be.graph.weighted_sum(&[(r, 0.2), (a, 1.0)])
    })
}

/// Every block of the gradient suite with its worst relative error.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    vec![
        (
            "global context",
            check_block(&Gc, &[[1, 8, 12, 12]], PROBES, seed),
        ),
        (
            "atrous inception",
            check_block(&Atrous, &[[1, 8, 12, 12]], PROBES, seed),
        ),
        (
            "down-sampling",
            check_block(&Down, &[[1, 8, 12, 12]], PROBES, seed),
        ),
        (
            "transposed conv stage",
            check_block(&UpStage, &[[1, 8, 6, 6], [1, 4, 6, 6]], PROBES, seed),
        ),
        (
            "fusion head",
            check_block(&FusionHead, &[[1, 4, 12, 12], [1, 4, 12, 12]], PROBES, seed),
        ),
        ("image path + aux loss", sfe_loss_check(seed)),
        ("weighted smooth-L1 losses", loss_check(seed)),
    ]
}

/// Ring of the reference acquisition (18 mm radius, 1500 m/s, 40 MHz,
/// 5 MHz / 80 % transducer) over a 12.7 mm field of view.
pub fn ring_geometry(n_elements: usize, n_grid: usize) -> ArrayGeometry {
    make_geometry(n_elements, 0.018, 0.0127, n_grid, 1500.0, 40e6, 5e6, 0.8).unwrap()
}

/// Fractional sample index where the bipolar pulse of one channel changes
/// sign between its two main lobes, by linear interpolation.
pub fn main_zero_crossing(trace: &[f32]) -> f64 {
    let (mut hi, mut lo) = (0, 0);
    for (t, &v) in trace.iter().enumerate() {
        if v > trace[hi] {
            hi = t;
        }
        if v < trace[lo] {
            lo = t;
        }
    }
    let (a, b) = (hi.min(lo), hi.max(lo));
    for t in a..b {
        let (u, v) = (trace[t] as f64, trace[t + 1] as f64);
        if u == 0.0 {
            return t as f64;
        }
        if u * v < 0.0 {
            return t as f64 + u / (u - v);
        }
    }
    b as f64
}

/// Peak-location errors (Chebyshev distance in pixels) of sparse DAS on
/// random single-pixel phantoms inside the central 80 % of the field of view.
pub fn point_source_errors(geom: &ArrayGeometry, m: usize, trials: usize, seed: u64) -> Vec<usize> {
    let n = geom.n_grid;
    let (lo, hi) = (n / 10, n - n / 10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let (row, col) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
            let mut img = ImageGrid::zeros(n, geom.fov_m);
            img.set(row, col, 1.0);
            let sig = forward_project(&img, geom, m).unwrap();
            let (r, c) = das_reconstruct(&sig, geom).unwrap().argmax_abs();
            r.abs_diff(row).max(c.abs_diff(col))
        })
        .collect()
}

/// Measured global-context invariants on a random `[2, 8, 12, 12]` input.
#[derive(Debug)]
pub struct GcInvariants {
    /// Largest `|Σ_p α_p − 1|` over the batch.
    pub weight_sum_err: f64,
    /// Output equals input bit for bit when the value transform is zero.
    pub zero_transform_is_identity: bool,
    /// Largest relative change of the attention weights when every logit is
    /// shifted by the same constant.
    pub shift_rel_err: f64,
}

pub fn gc_invariants(seed: u64) -> GcInvariants {
    use asnet_core::nn::Graph;

    let shape = [2, 8, 12, 12];
    let x = random_tensor(&shape, seed);
    let wk = random_tensor(&[1, 8, 1, 1], seed + 1);
    let wv = random_tensor(&[8, 8, 1, 1], seed + 2);
    let attention = |x: &Tensor<f64>, wv: &Tensor<f64>| {
        let mut g = Graph::new();
        let (xv, kv, vv) = (g.input(x.clone()), g.input(wk.clone()), g.input(wv.clone()));
        let y = g.gc(xv, kv, vv);
        (g.gc_attention(y).unwrap().to_vec(), g.value(y).clone())
    };

    let (alpha, _) = attention(&x, &wv);
    let p = 12 * 12;
    let weight_sum_err = alpha
        .chunks(p)
        .map(|a| (a.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);

    let (_, y) = attention(&x, &Tensor::zeros(&[8, 8, 1, 1]));
    let zero_transform_is_identity = y
        .data
        .iter()
        .zip(&x.data)
        .all(|(a, b)| a.to_bits() == b.to_bits());

    // adding c / wk[0] to channel 0 at every position adds c to every logit
    let c = 25.0;
    let mut shifted = x.clone();
    for b in 0..2 {
        for v in &mut shifted.data[b * 8 * p..b * 8 * p + p] {
            *v += c / wk.data[0];
        }
    }
    let (alpha_shifted, _) = attention(&shifted, &wv);
    let shift_rel_err = alpha
        .iter()
        .zip(&alpha_shifted)
        .map(|(a, b)| (a - b).abs() / a.abs())
        .fold(0.0, f64::max);

    GcInvariants {
        weight_sum_err,
        zero_transform_is_identity,
        shift_rel_err,
    }
}
