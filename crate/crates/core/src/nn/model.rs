//! The reconstruction network, written once against [`Backend`] so the same
//! code builds the differentiable graph and the parameter / FLOP tables.
//!
//! Layout (sides for an `N × N` output):
//!
//! ```text
//! signal path   enc1..enc4 (N → N/16, GC after enc2 and enc4) → atrous bottom
//!               → fuse0 → dec1 → fuse1 → dec2 → fuse2 → dec3 → fuse3 → dec4
//! image path    stem → 4 × (1×1, 3×3, 1×1, GC, skip) → features → head (y_d)
//! fusion I      features average-pooled to N/16, N/8, N/4, N/2, N and
//!               concatenated at fuse0..fuse3 and at the final stage
//! fusion II     concat(dec4, features) → GC → 3×3 → 3×3 → 3×3 (y_r)
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{Branches, NetConfig, RAW_STEM_STRIDE};
use super::graph::{Graph, Var};
use super::kernels::ConvGeom;
use super::params::ParamStore;
use super::tensor::{Scalar, Tensor};

/// Operations the network is built from. Every parameterized op is addressed
/// by a block path; its tensors are `{path}.weight`/`{path}.bias` (convs) or
/// `{path}.wk`/`{path}.wv` (GC blocks).
pub trait Backend {
    type V: Copy;
    fn dims(&self, v: Self::V) -> [usize; 4];
    /// Convolution with bias; `out_c` output channels.
    fn conv(&mut self, path: &str, x: Self::V, out_c: usize, g: ConvGeom) -> Self::V;
    /// Stride-2 transposed 3×3 convolution with bias, doubling each side.
    fn tconv(&mut self, path: &str, x: Self::V, out_c: usize) -> Self::V;
    fn gc(&mut self, path: &str, x: Self::V) -> Self::V;
    fn relu(&mut self, x: Self::V) -> Self::V;
    fn add(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn concat(&mut self, parts: &[Self::V]) -> Self::V;
    fn avg_pool(&mut self, x: Self::V, k: usize) -> Self::V;
    fn zeros(&mut self, shape: [usize; 4]) -> Self::V;
}

/// Geometry of every decoder transposed convolution.
pub fn up_geom() -> ConvGeom {
    ConvGeom::same(3, 2, 1)
}

/// Geometry of the unfolded-input stem: 20×3 kernel, stride 20 along time.
pub fn raw_stem_geom() -> ConvGeom {
    ConvGeom {
        kh: RAW_STEM_STRIDE,
        kw: 3,
        sh: RAW_STEM_STRIDE,
        sw: 1,
        ph: 0,
        pw: 1,
        dh: 1,
        dw: 1,
    }
}

fn conv_relu<B: Backend>(b: &mut B, path: &str, x: B::V, out_c: usize, g: ConvGeom) -> B::V {
    let y = b.conv(path, x, out_c, g);
    b.relu(y)
}

/// Two 3×3 convolutions, the second with stride 2, each followed by a rectifier.
pub fn down_block<B: Backend>(b: &mut B, path: &str, x: B::V, width: usize) -> B::V {
    let h = conv_relu(
        b,
        &format!("{path}.conv1"),
        x,
        width,
        ConvGeom::same(3, 1, 1),
    );
    conv_relu(
        b,
        &format!("{path}.conv2"),
        h,
        width,
        ConvGeom::same(3, 2, 1),
    )
}

/// Atrous rates of the four bottom branches; multi-rate branches are chains.
pub const ATROUS_RATES: [&[usize]; 4] = [&[1], &[3], &[1, 3], &[1, 3, 5]];

/// Four dilated-convolution branches, concatenated, merged by a 1×1
/// convolution to the input width, and added to the input.
pub fn atrous_inception<B: Backend>(b: &mut B, path: &str, x: B::V, branch_width: usize) -> B::V {
    let width = b.dims(x)[1];
    let mut outs = Vec::with_capacity(ATROUS_RATES.len());
    for (i, rates) in ATROUS_RATES.iter().enumerate() {
        let mut h = x;
        for (j, &rate) in rates.iter().enumerate() {
            let name = format!("{path}.b{}.conv{}", i + 1, j + 1);
            h = conv_relu(b, &name, h, branch_width, ConvGeom::same(3, 1, rate));
        }
        outs.push(h);
    }
    let cat = b.concat(&outs);
    let merged = b.conv(&format!("{path}.merge"), cat, width, ConvGeom::pointwise());
    b.add(x, merged)
}

/// Five average-pooled copies of full-resolution features at sides
/// `N/16, N/8, N/4, N/2, N`.
pub fn ff1<B: Backend>(b: &mut B, features: B::V) -> [B::V; 5] {
    [16, 8, 4, 2, 1].map(|k| b.avg_pool(features, k))
}

/// Decoder feature maps and bottom features of the signal path.
#[derive(Debug, Clone, Copy)]
pub struct SignalPathOut<V> {
    pub bottom: V,
    /// Sides `N/8, N/4, N/2, N`.
    pub decoder: [V; 4],
}

/// Signal path. `pooled[k]` is concatenated onto the bottom (`k = 0`) and
/// onto decoder stages 1..3 before each following up-sampling layer, then
/// restored to the stage width by a 1×1 convolution.
pub fn bpr_forward<B: Backend>(
    b: &mut B,
    cfg: &NetConfig,
    x: B::V,
    pooled: &[B::V; 4],
) -> SignalPathOut<B::V> {
    let w = cfg.enc_widths;
    let mut h = x;
    if !cfg.use_ft_stem {
        h = b.conv("bpr.stem", h, cfg.in_channels_q, raw_stem_geom());
    }
    for (i, &width) in w.iter().enumerate() {
        let name = format!("bpr.enc{}", i + 1);
        h = down_block(b, &name, h, width);
        if i == 1 || i == 3 {
            h = b.gc(&format!("{name}.gc"), h);
        }
    }
    let bottom = atrous_inception(b, "bpr.bottom", h, cfg.branch_width());
    let dec_widths = [w[2], w[1], w[0], w[0]];
    let mut decoder = [bottom; 4];
    let mut cur = bottom;
    for k in 0..4 {
        let stage_width = b.dims(cur)[1];
        let cat = b.concat(&[cur, pooled[k]]);
        let fused = conv_relu(
            b,
            &format!("bpr.fuse{k}"),
            cat,
            stage_width,
            ConvGeom::pointwise(),
        );
        let up = b.tconv(&format!("bpr.dec{}", k + 1), fused, dec_widths[k]);
        cur = b.relu(up);
        decoder[k] = cur;
    }
    SignalPathOut { bottom, decoder }
}

/// Image path: returns `(features, y_d)`.
pub fn sfe_forward<B: Backend>(b: &mut B, cfg: &NetConfig, das: B::V) -> (B::V, B::V) {
    let s = cfg.sfe_width;
    let hidden = cfg.bottleneck_width();
    let mut h = conv_relu(b, "sfe.stem", das, s, ConvGeom::same(3, 1, 1));
    for i in 1..=4 {
        let p = format!("sfe.block{i}");
        let r = conv_relu(b, &format!("{p}.reduce"), h, hidden, ConvGeom::pointwise());
        let r = conv_relu(b, &format!("{p}.conv"), r, hidden, ConvGeom::same(3, 1, 1));
        let r = b.conv(&format!("{p}.restore"), r, s, ConvGeom::pointwise());
        let r = b.gc(&format!("{p}.gc"), r);
        let sum = b.add(h, r);
        h = b.relu(sum);
    }
    let y_d = b.conv("sfe.head", h, 1, ConvGeom::pointwise());
    (h, y_d)
}

/// Final fusion: concat → GC → three 3×3 convolutions (rectifier after the
/// first two) → one channel.
pub fn ff2<B: Backend>(b: &mut B, cfg: &NetConfig, bpr_out: B::V, pooled_full: B::V) -> B::V {
    let cat = b.concat(&[bpr_out, pooled_full]);
    let g = b.gc("ff2.gc", cat);
    let width = cfg.head_width();
    let h = conv_relu(b, "ff2.conv1", g, width, ConvGeom::same(3, 1, 1));
    let h = conv_relu(b, "ff2.conv2", h, width, ConvGeom::same(3, 1, 1));
    b.conv("ff2.conv3", h, 1, ConvGeom::same(3, 1, 1))
}

#[derive(Debug, Clone, Copy)]
pub struct NetOutputs<V> {
    pub y_r: V,
    pub y_d: Option<V>,
}

/// Whole network. `signal` has [`NetConfig::signal_input_shape`]; `das` is
/// `(B, 1, N, N)` and is ignored without an image path.
pub fn asnet_forward<B: Backend>(
    b: &mut B,
    cfg: &NetConfig,
    signal: B::V,
    das: B::V,
) -> NetOutputs<B::V> {
    match cfg.branches {
        Branches::ImageOnly => {
            let (_, y) = sfe_forward(b, cfg, das);
            NetOutputs {
                y_r: y,
                y_d: Some(y),
            }
        }
        Branches::Both => {
            let (features, y_d) = sfe_forward(b, cfg, das);
            let pooled = ff1(b, features);
            let bpr = bpr_forward(
                b,
                cfg,
                signal,
                &[pooled[0], pooled[1], pooled[2], pooled[3]],
            );
            let y_r = ff2(b, cfg, bpr.decoder[3], pooled[4]);
            NetOutputs {
                y_r,
                y_d: Some(y_d),
            }
        }
        Branches::SignalOnly => {
            let batch = b.dims(signal)[0];
            let n = cfg.side_n;
            let zeros = [16, 8, 4, 2, 1].map(|k| b.zeros([batch, cfg.sfe_width, n / k, n / k]));
            let bpr = bpr_forward(b, cfg, signal, &[zeros[0], zeros[1], zeros[2], zeros[3]]);
            let y_r = ff2(b, cfg, bpr.decoder[3], zeros[4]);
            NetOutputs { y_r, y_d: None }
        }
    }
}

/// Shape and cost of one parameterized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub path: String,
    pub kind: String,
    pub output_shape: [usize; 4],
    pub params: usize,
    pub flops: u64,
}

/// Backend that only propagates shapes, recording parameter shapes and an
/// analytic FLOP count (2 per multiply-accumulate, 1 per bias add,
/// elementwise add, and pooled input element; rectifiers are free).
#[derive(Debug, Clone, Default)]
pub struct ShapeTracer {
    shapes: Vec<[usize; 4]>,
    pub params: BTreeMap<String, Vec<usize>>,
    pub layers: Vec<LayerCost>,
    /// FLOPs of residual adds and pooling.
    pub elementwise_flops: u64,
}

impl ShapeTracer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&mut self, shape: [usize; 4]) -> usize {
        self.shapes.push(shape);
        self.shapes.len() - 1
    }

    pub fn total_flops(&self) -> u64 {
        self.layers.iter().map(|l| l.flops).sum::<u64>() + self.elementwise_flops
    }

    fn declare(&mut self, name: String, shape: Vec<usize>) -> usize {
        let n = shape.iter().product();
        let prev = self.params.insert(name.clone(), shape);
        assert!(prev.is_none(), "parameter {name} declared twice");
        n
    }

    fn record(
        &mut self,
        path: &str,
        kind: &str,
        shape: [usize; 4],
        params: usize,
        flops: u64,
    ) -> usize {
        self.layers.push(LayerCost {
            path: path.to_string(),
            kind: kind.to_string(),
            output_shape: shape,
            params,
            flops,
        });
        self.input(shape)
    }
}

impl Backend for ShapeTracer {
    type V = usize;

    fn dims(&self, v: usize) -> [usize; 4] {
        self.shapes[v]
    }

    fn conv(&mut self, path: &str, x: usize, out_c: usize, g: ConvGeom) -> usize {
        let [b, ci, h, w] = self.shapes[x];
        let (ho, wo) = g.out_size(h, w);
        let mut n = self.declare(format!("{path}.weight"), vec![out_c, ci, g.kh, g.kw]);
        n += self.declare(format!("{path}.bias"), vec![out_c]);
        let out = (b * out_c * ho * wo) as u64;
        let flops = 2 * (ci * g.taps()) as u64 * out + out;
        self.record(path, "conv", [b, out_c, ho, wo], n, flops)
    }

    fn tconv(&mut self, path: &str, x: usize, out_c: usize) -> usize {
        let [b, ci, h, w] = self.shapes[x];
        let g = up_geom();
        let (ho, wo) = g.transposed_out_size(h, w, g.sh - 1);
        let mut n = self.declare(format!("{path}.weight"), vec![ci, out_c, g.kh, g.kw]);
        n += self.declare(format!("{path}.bias"), vec![out_c]);
        let flops = 2 * (b * ci * out_c * g.taps() * h * w) as u64 + (b * out_c * ho * wo) as u64;
        self.record(path, "conv_transpose", [b, out_c, ho, wo], n, flops)
    }

    fn gc(&mut self, path: &str, x: usize) -> usize {
        let shape = self.shapes[x];
        let [b, c, h, w] = shape;
        let p = h * w;
        let mut n = self.declare(format!("{path}.wk"), vec![1, c, 1, 1]);
        n += self.declare(format!("{path}.wv"), vec![c, c, 1, 1]);
        // logits 2CP, softmax 3P, context 2CP, transform 2C², broadcast add CP
        let flops = (b * (5 * c * p + 3 * p + 2 * c * c)) as u64;
        self.record(path, "gc", shape, n, flops)
    }

    fn relu(&mut self, x: usize) -> usize {
        x
    }

    fn add(&mut self, a: usize, b: usize) -> usize {
        let shape = self.shapes[a];
        assert_eq!(shape, self.shapes[b], "add shape mismatch");
        self.elementwise_flops += shape.iter().product::<usize>() as u64;
        self.input(shape)
    }

    fn concat(&mut self, parts: &[usize]) -> usize {
        let [b, _, h, w] = self.shapes[parts[0]];
        let mut c = 0;
        for &p in parts {
            let s = self.shapes[p];
            assert_eq!((s[0], s[2], s[3]), (b, h, w), "concat shape mismatch");
            c += s[1];
        }
        self.input([b, c, h, w])
    }

    fn avg_pool(&mut self, x: usize, k: usize) -> usize {
        if k == 1 {
            return x;
        }
        let [b, c, h, w] = self.shapes[x];
        self.elementwise_flops += (b * c * h * w) as u64;
        self.input([b, c, h / k, w / k])
    }

    fn zeros(&mut self, shape: [usize; 4]) -> usize {
        self.input(shape)
    }
}

/// Traces `cfg` for one sample.
pub fn trace(cfg: &NetConfig) -> ShapeTracer {
    let mut t = ShapeTracer::new();
    let signal = t.input(cfg.signal_input_shape(1));
    let das = t.input([1, 1, cfg.side_n, cfg.side_n]);
    asnet_forward(&mut t, cfg, signal, das);
    t
}

/// Backend that records a differentiable forward pass on a [`Graph`].
pub struct GraphBackend<'a, T: Scalar> {
    pub graph: &'a mut Graph<T>,
    params: &'a ParamStore<T>,
    trainable: bool,
    vars: BTreeMap<String, Var>,
}

impl<'a, T: Scalar> GraphBackend<'a, T> {
    /// With `trainable`, parameter leaves require gradients.
    pub fn new(graph: &'a mut Graph<T>, params: &'a ParamStore<T>, trainable: bool) -> Self {
        Self {
            graph,
            params,
            trainable,
            vars: BTreeMap::new(),
        }
    }

    pub fn param(&mut self, name: &str) -> Var {
        if let Some(&v) = self.vars.get(name) {
            return v;
        }
        let value = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from store"))
            .clone();
        let v = self.graph.leaf(value, self.trainable);
        self.vars.insert(name.to_string(), v);
        v
    }

    /// Parameter leaves created so far, by name.
    pub fn param_vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn into_param_vars(self) -> BTreeMap<String, Var> {
        self.vars
    }
}

impl<T: Scalar> Backend for GraphBackend<'_, T> {
    type V = Var;

    fn dims(&self, v: Var) -> [usize; 4] {
        let (b, c, h, w) = self.graph.value(v).dims4();
        [b, c, h, w]
    }

    fn conv(&mut self, path: &str, x: Var, out_c: usize, g: ConvGeom) -> Var {
        let w = self.param(&format!("{path}.weight"));
        let b = self.param(&format!("{path}.bias"));
        debug_assert_eq!(self.graph.shape(w)[0], out_c);
        self.graph.conv2d(x, w, Some(b), g)
    }

    fn tconv(&mut self, path: &str, x: Var, out_c: usize) -> Var {
        let w = self.param(&format!("{path}.weight"));
        let b = self.param(&format!("{path}.bias"));
        debug_assert_eq!(self.graph.shape(w)[1], out_c);
        self.graph.conv_transpose2d(x, w, Some(b), up_geom())
    }

    fn gc(&mut self, path: &str, x: Var) -> Var {
        let wk = self.param(&format!("{path}.wk"));
        let wv = self.param(&format!("{path}.wv"));
        self.graph.gc(x, wk, wv)
    }

    fn relu(&mut self, x: Var) -> Var {
        self.graph.relu(x)
    }

    fn add(&mut self, a: Var, b: Var) -> Var {
        self.graph.add(a, b)
    }

    fn concat(&mut self, parts: &[Var]) -> Var {
        self.graph.concat(parts)
    }

    fn avg_pool(&mut self, x: Var, k: usize) -> Var {
        self.graph.avg_pool(x, k)
    }

    fn zeros(&mut self, shape: [usize; 4]) -> Var {
        self.graph.input(Tensor::zeros(&shape))
    }
}

/// Inference on a batch; returns `(y_r, y_d)` values.
pub fn infer<T: Scalar>(
    cfg: &NetConfig,
    params: &ParamStore<T>,
    signal: Tensor<T>,
    das: Tensor<T>,
) -> (Tensor<T>, Option<Tensor<T>>) {
    let mut graph = Graph::new();
    let mut be = GraphBackend::new(&mut graph, params, false);
    let s = be.graph.input(signal);
    let d = be.graph.input(das);
    let out = asnet_forward(&mut be, cfg, s, d);
    (
        graph.value(out.y_r).clone(),
        out.y_d.map(|v| graph.value(v).clone()),
    )
}
