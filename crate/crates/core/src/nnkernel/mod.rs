//! From-scratch network kernel: ensemble sampling, batched forward pass, and
//! manual backward pass for dense/convolutional layers with ReLU and
//! BatchNorm.
//!
//! Two backward modes exist on purpose. `FrozenStats` treats the batch
//! statistics as constants, which is the object the recursion analysis
//! describes; `FullBn` differentiates through them, which is what training
//! actually does. The Monte-Carlo oracle consumes the former, the trainer the
//! latter.

pub mod mat;

use crate::arch::{int_sqrt, Activation, ArchSpec, InputDim, LayerKind};
use crate::error::{Error, Result};
use crate::rng;
use mat::{axpy, dot, matmul_nn, matmul_nt, matmul_tn, Mat};
use rand_distr::{Distribution, StandardNormal};

/// Smallest usable normalization scale component.
const STAT_FLOOR: f64 = 1e-12;
/// Minimum batch for estimating population statistics.
const MIN_BN_BATCH: usize = 256;

/// Spatial bookkeeping of one convolutional layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_side: usize,
    pub out_side: usize,
    pub k_side: usize,
    pub stride: usize,
    /// `gather[site * F + f]` = input site read by kernel offset `f` at that
    /// output site.
    gather: Vec<u32>,
}

impl ConvGeom {
    pub fn kernel_sites(&self) -> usize {
        self.k_side * self.k_side
    }

    pub fn out_sites(&self) -> usize {
        self.out_side * self.out_side
    }

    pub fn in_sites(&self) -> usize {
        self.in_side * self.in_side
    }

    pub fn gather_site(&self, out_site: usize, f: usize) -> usize {
        self.gather[out_site * self.kernel_sites() + f] as usize
    }
}

/// Derive square-grid geometry for layer `l` (1-based) from the site counts
/// stored in the spec. The stride is the smallest one reproducing the stored
/// output site count with a valid (no padding) convolution.
fn conv_geom(spec: &ArchSpec, l: usize) -> Result<ConvGeom> {
    let layer = &spec.layers[l - 1];
    let (in_channels, in_sites) = if l == 1 {
        match spec.input {
            InputDim::Conv {
                channels,
                spatial_sites,
            } => (channels, spatial_sites),
            InputDim::Dense(_) => {
                return Err(Error::Structural(format!(
                    "layer {l}: convolutional layer over a dense input"
                )))
            }
        }
    } else {
        let prev = &spec.layers[l - 2];
        (prev.width, prev.spatial_sites.unwrap_or(0))
    };
    let bad = |msg: String| Error::Structural(format!("layer {l}: {msg}"));
    let in_side =
        int_sqrt(in_sites).ok_or_else(|| bad(format!("input sites {in_sites} not square")))?;
    let out_sites = layer.spatial_sites.unwrap_or(0);
    let out_side =
        int_sqrt(out_sites).ok_or_else(|| bad(format!("output sites {out_sites} not square")))?;
    let kernel_sites = layer.kernel_sites.unwrap_or(0);
    let k_side =
        int_sqrt(kernel_sites).ok_or_else(|| bad(format!("kernel sites {kernel_sites} not square")))?;
    if k_side > in_side {
        return Err(bad(format!("kernel side {k_side} exceeds input side {in_side}")));
    }
    let stride = (1..=in_side)
        .find(|s| (in_side - k_side) / s + 1 == out_side)
        .ok_or_else(|| {
            bad(format!(
                "no stride maps {in_side}x{in_side} onto {out_side}x{out_side} with a {k_side}x{k_side} kernel"
            ))
        })?;
    let mut gather = Vec::with_capacity(out_sites * kernel_sites);
    for r in 0..out_side {
        for c in 0..out_side {
            for kr in 0..k_side {
                for kc in 0..k_side {
                    let site = (r * stride + kr) * in_side + (c * stride + kc);
                    gather.push(site as u32);
                }
            }
        }
    }
    Ok(ConvGeom {
        in_channels,
        out_channels: layer.width,
        in_side,
        out_side,
        k_side,
        stride,
        gather,
    })
}

/// Non-random normalization parameters, one entry per unit (dense) or per
/// channel (convolutional).
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Sampled parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub activation: Activation,
    /// Dense: width x fan_in. Convolutional: C_out x (C_in * F), kernel
    /// offset fastest within each input channel block.
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub bn: Option<BnParams>,
    pub geom: Option<ConvGeom>,
    /// Flattened output units: width, or C_out * |K|.
    pub units: usize,
}

/// One sampled random network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInstance {
    pub spec: ArchSpec,
    pub layers: Vec<LayerParams>,
    pub seed: u64,
}

impl NetInstance {
    pub fn input_units(&self) -> usize {
        self.spec.input.units()
    }

    pub fn output_units(&self) -> usize {
        self.layers.last().expect("net has layers").units
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| l.bn.is_some())
    }

    /// Count of trainable parameters in layer `l` (weights + biases only).
    pub fn weight_param_count(&self, l: usize) -> usize {
        let layer = &self.layers[l - 1];
        layer.weight.rows() * layer.weight.cols() + layer.bias.len()
    }

    /// Euclidean norm over every parameter tensor including normalization
    /// scales and shifts.
    pub fn param_norm(&self) -> f64 {
        let mut sq = 0.0;
        for layer in &self.layers {
            sq += layer.weight.frobenius_sq();
            sq += layer.bias.iter().map(|v| v * v).sum::<f64>();
            if let Some(bn) = &layer.bn {
                sq += bn.gamma.iter().map(|v| v * v).sum::<f64>();
                sq += bn.beta.iter().map(|v| v * v).sum::<f64>();
            }
        }
        sq.sqrt()
    }
}

/// Draw one network from the Gaussian ensemble. Deterministic in
/// `(spec, seed)`; each layer uses its own substream so sampling order is
/// irrelevant.
pub fn sample_network(spec: &ArchSpec, seed: u64) -> Result<NetInstance> {
    let mut layers = Vec::with_capacity(spec.depth());
    for l in 1..=spec.depth() {
        let layer = &spec.layers[l - 1];
        let mut stream = rng::layer_stream(seed, l);
        let geom = match layer.kind {
            LayerKind::Convolutional => Some(conv_geom(spec, l)?),
            LayerKind::FullyConnected => None,
        };
        let (w_rows, w_cols, units) = match layer.kind {
            LayerKind::FullyConnected => (layer.width, layer.fan_in, layer.width),
            LayerKind::Convolutional => {
                let g = geom.as_ref().unwrap();
                (
                    layer.width,
                    g.in_channels * g.kernel_sites(),
                    layer.width * g.out_sites(),
                )
            }
        };
        let w_scale = (spec.init.sigma_w_sq / layer.fan_in as f64).sqrt();
        let mut weight = Mat::zeros(w_rows, w_cols);
        for v in weight.as_mut_slice() {
            let z: f64 = StandardNormal.sample(&mut stream);
            *v = w_scale * z;
        }
        let b_scale = spec.init.sigma_b_sq.sqrt();
        let bias: Vec<f64> = (0..w_rows)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut stream);
                b_scale * z
            })
            .collect();
        let bn = layer.batch_norm.then(|| BnParams {
            gamma: vec![layer.gamma; w_rows],
            beta: vec![layer.beta; w_rows],
        });
        layers.push(LayerParams {
            kind: layer.kind,
            activation: layer.activation,
            weight,
            bias,
            bn,
            geom,
            units,
        });
    }
    Ok(NetInstance {
        spec: spec.clone(),
        layers,
        seed,
    })
}

/// How the forward pass treats normalization layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// No normalization layers may be present.
    Vanilla,
    /// Normalization statistics estimated from the batch (population proxy);
    /// requires at least 256 examples.
    BnPopulation,
}

/// Batch statistics of one normalized layer: per unit (dense) or per channel
/// (convolutional).
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mu: Vec<f64>,
    pub s: Vec<f64>,
}

/// Everything the forward pass recorded for one layer.
#[derive(Debug, Clone)]
pub struct LayerTape {
    /// Pre-activations, examples x units.
    pub z: Mat,
    /// Normalized units (normalization layers only).
    pub u: Option<Mat>,
    /// Activations leaving the layer.
    pub h: Mat,
    pub stats: Option<BnStats>,
    /// Backward signals d(seeded output)/dz; populated by [`backward`].
    pub delta: Option<Mat>,
}

/// Forward/backward state over a whole batch.
#[derive(Debug, Clone)]
pub struct BatchTape {
    pub layers: Vec<LayerTape>,
}

impl BatchTape {
    pub fn output(&self) -> &Mat {
        &self.layers.last().expect("tape has layers").h
    }

    pub fn batch_size(&self) -> usize {
        self.layers[0].z.rows()
    }
}

fn affine(layer: &LayerParams, input: &Mat) -> Mat {
    match layer.kind {
        LayerKind::FullyConnected => {
            let mut z = matmul_nt(input, &layer.weight);
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            z
        }
        LayerKind::Convolutional => {
            let g = layer.geom.as_ref().expect("conv layer has geometry");
            let (k_out, f, cin) = (g.out_sites(), g.kernel_sites(), g.in_channels);
            let k_in = g.in_sites();
            let mut z = Mat::zeros(input.rows(), layer.units);
            let mut patch = Mat::zeros(k_out, cin * f);
            for x in 0..input.rows() {
                let hrow = input.row(x);
                for so in 0..k_out {
                    let prow = patch.row_mut(so);
                    for ci in 0..cin {
                        let base = ci * k_in;
                        for kf in 0..f {
                            prow[ci * f + kf] = hrow[base + g.gather[so * f + kf] as usize];
                        }
                    }
                }
                let zrow = z.row_mut(x);
                for co in 0..g.out_channels {
                    let wrow = layer.weight.row(co);
                    let b = layer.bias[co];
                    for so in 0..k_out {
                        zrow[co * k_out + so] = dot(wrow, patch.row(so)) + b;
                    }
                }
            }
            z
        }
    }
}

/// Per-unit (dense) or per-channel (conv) mean and scale over the batch.
fn batch_stats(layer: &LayerParams, z: &Mat, layer_idx: usize) -> Result<BnStats> {
    let m = z.rows() as f64;
    let (groups, group_sites) = match layer.kind {
        LayerKind::FullyConnected => (layer.units, 1),
        LayerKind::Convolutional => {
            let g = layer.geom.as_ref().unwrap();
            (g.out_channels, g.out_sites())
        }
    };
    let n = m * group_sites as f64;
    let mut mu = vec![0.0; groups];
    let mut sq = vec![0.0; groups];
    for x in 0..z.rows() {
        let row = z.row(x);
        for (c, (mu_c, sq_c)) in mu.iter_mut().zip(sq.iter_mut()).enumerate() {
            for &v in &row[c * group_sites..(c + 1) * group_sites] {
                *mu_c += v;
                *sq_c += v * v;
            }
        }
    }
    let mut s = vec![0.0; groups];
    for c in 0..groups {
        mu[c] /= n;
        let var = (sq[c] / n - mu[c] * mu[c]).max(0.0);
        s[c] = var.sqrt();
        if s[c] < STAT_FLOOR {
            return Err(Error::DegenerateStatistics {
                layer: layer_idx,
                value: s[c],
            });
        }
    }
    Ok(BnStats { mu, s })
}

/// The group (stat index) owning flat unit `j`.
fn unit_group(layer: &LayerParams, j: usize) -> usize {
    match layer.kind {
        LayerKind::FullyConnected => j,
        LayerKind::Convolutional => j / layer.geom.as_ref().unwrap().out_sites(),
    }
}

fn forward_impl(
    net: &NetInstance,
    batch: &Mat,
    frozen: Option<&[Option<BnStats>]>,
) -> Result<BatchTape> {
    if batch.cols() != net.input_units() {
        return Err(Error::Structural(format!(
            "batch has {} features, network expects {}",
            batch.cols(),
            net.input_units()
        )));
    }
    if batch.rows() == 0 {
        return Err(Error::Structural("empty batch".into()));
    }
    let mut tapes: Vec<LayerTape> = Vec::with_capacity(net.layers.len());
    for (idx, layer) in net.layers.iter().enumerate() {
        let l = idx + 1;
        let input = if idx == 0 { batch } else { &tapes[idx - 1].h };
        let z = affine(layer, input);
        let tape = match &layer.bn {
            Some(bn) => {
                let stats = match frozen {
                    Some(all) => all[idx]
                        .clone()
                        .ok_or_else(|| Error::Structural(format!("layer {l}: missing frozen stats")))?,
                    None => batch_stats(layer, &z, l)?,
                };
                let mut u = Mat::zeros(z.rows(), z.cols());
                let mut h = Mat::zeros(z.rows(), z.cols());
                for x in 0..z.rows() {
                    let zrow = z.row(x);
                    let urow = u.row_mut(x);
                    let hrow = h.row_mut(x);
                    for j in 0..zrow.len() {
                        let g = unit_group(layer, j);
                        let un = (zrow[j] - stats.mu[g]) / stats.s[g];
                        urow[j] = un;
                        let y = bn.gamma[g] * un + bn.beta[g];
                        hrow[j] = match layer.activation {
                            Activation::ReLU => y.max(0.0),
                            Activation::Linear => y,
                        };
                    }
                }
                LayerTape {
                    z,
                    u: Some(u),
                    h,
                    stats: Some(stats),
                    delta: None,
                }
            }
            None => {
                let h = match layer.activation {
                    Activation::ReLU => {
                        let mut h = z.clone();
                        for v in h.as_mut_slice() {
                            if *v < 0.0 {
                                *v = 0.0;
                            }
                        }
                        h
                    }
                    Activation::Linear => z.clone(),
                };
                LayerTape {
                    z,
                    u: None,
                    h,
                    stats: None,
                    delta: None,
                }
            }
        };
        tapes.push(tape);
    }
    Ok(BatchTape { layers: tapes })
}

/// Run the batched forward pass.
pub fn forward(net: &NetInstance, batch: &Mat, mode: ForwardMode) -> Result<BatchTape> {
    if net.has_batch_norm() {
        match mode {
            ForwardMode::Vanilla => {
                return Err(Error::Structural(
                    "network has normalization layers; use the population mode".into(),
                ))
            }
            ForwardMode::BnPopulation => {
                if batch.rows() < MIN_BN_BATCH {
                    return Err(Error::Structural(format!(
                        "population statistics need at least {MIN_BN_BATCH} examples, got {}",
                        batch.rows()
                    )));
                }
            }
        }
    }
    forward_impl(net, batch, None)
}

/// Forward pass with externally supplied normalization statistics, for
/// checking the frozen-statistics gradients by finite differences.
pub fn forward_frozen(
    net: &NetInstance,
    batch: &Mat,
    stats: &[Option<BnStats>],
) -> Result<BatchTape> {
    if stats.len() != net.layers.len() {
        return Err(Error::Structural(
            "frozen stats list length does not match layer count".into(),
        ));
    }
    forward_impl(net, batch, Some(stats))
}

/// How the backward pass treats normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardMode {
    /// Statistics held constant: the object the recursion analysis studies.
    FrozenStats,
    /// Differentiate through the batch statistics: real training behavior.
    FullBn,
}

/// Parameter gradients of one layer, aggregated over the batch.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
}

/// Propagate `gh` (gradient w.r.t. this layer's activations) to the gradient
/// w.r.t. its pre-activations, honoring the backward mode. Returns the delta
/// matrix and, in full mode, the (gamma, beta) gradients.
fn gate_layer(
    layer: &LayerParams,
    tape: &LayerTape,
    gh: Mat,
    mode: BackwardMode,
) -> (Mat, Option<(Vec<f64>, Vec<f64>)>) {
    match &layer.bn {
        None => {
            let mut delta = gh;
            if layer.activation == Activation::ReLU {
                for x in 0..delta.rows() {
                    let zrow = tape.z.row(x);
                    for (d, &z) in delta.row_mut(x).iter_mut().zip(zrow) {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
            }
            (delta, None)
        }
        Some(bn) => {
            let stats = tape.stats.as_ref().expect("bn layer has stats");
            let u = tape.u.as_ref().expect("bn layer has normalized units");
            let m = gh.rows();
            let units = gh.cols();
            // gy = dL/d(gamma u + beta), zero where the relu is off
            let mut gy = gh;
            for x in 0..m {
                let urow = u.row(x);
                let grow = gy.row_mut(x);
                for j in 0..units {
                    let g = unit_group(layer, j);
                    let y = bn.gamma[g] * urow[j] + bn.beta[g];
                    if layer.activation == Activation::ReLU && y <= 0.0 {
                        grow[j] = 0.0;
                    }
                }
            }
            let groups = bn.gamma.len();
            let group_sites = units / groups;
            match mode {
                BackwardMode::FrozenStats => {
                    let mut delta = gy;
                    for x in 0..m {
                        let drow = delta.row_mut(x);
                        for j in 0..units {
                            let g = unit_group(layer, j);
                            drow[j] *= bn.gamma[g] / stats.s[g];
                        }
                    }
                    (delta, None)
                }
                BackwardMode::FullBn => {
                    // per group: d z = (gu - mean(gu) - u * mean(gu u)) / s
                    let mut g_gamma = vec![0.0; groups];
                    let mut g_beta = vec![0.0; groups];
                    let mut mean_gu = vec![0.0; groups];
                    let mut mean_guu = vec![0.0; groups];
                    for x in 0..m {
                        let grow = gy.row(x);
                        let urow = u.row(x);
                        for j in 0..units {
                            let g = unit_group(layer, j);
                            let gu = grow[j] * bn.gamma[g];
                            g_beta[g] += grow[j];
                            g_gamma[g] += grow[j] * urow[j];
                            mean_gu[g] += gu;
                            mean_guu[g] += gu * urow[j];
                        }
                    }
                    let n = (m * group_sites) as f64;
                    for g in 0..groups {
                        mean_gu[g] /= n;
                        mean_guu[g] /= n;
                    }
                    let mut delta = gy;
                    for x in 0..m {
                        let drow = delta.row_mut(x);
                        let urow = u.row(x);
                        for j in 0..units {
                            let g = unit_group(layer, j);
                            let gu = drow[j] * bn.gamma[g];
                            drow[j] = (gu - mean_gu[g] - urow[j] * mean_guu[g]) / stats.s[g];
                        }
                    }
                    (delta, Some((g_gamma, g_beta)))
                }
            }
        }
    }
}

/// Gradient w.r.t. the previous layer's activations given this layer's delta.
fn propagate(layer: &LayerParams, delta: &Mat, prev_units: usize) -> Mat {
    match layer.kind {
        LayerKind::FullyConnected => matmul_nn(delta, &layer.weight),
        LayerKind::Convolutional => {
            let g = layer.geom.as_ref().unwrap();
            let (k_out, f, cin, k_in) = (g.out_sites(), g.kernel_sites(), g.in_channels, g.in_sites());
            let mut gh = Mat::zeros(delta.rows(), prev_units);
            let mut v = vec![0.0; cin * f];
            for x in 0..delta.rows() {
                let drow = delta.row(x);
                let out = gh.row_mut(x);
                for so in 0..k_out {
                    v.iter_mut().for_each(|t| *t = 0.0);
                    for co in 0..g.out_channels {
                        let d = drow[co * k_out + so];
                        if d != 0.0 {
                            axpy(d, layer.weight.row(co), &mut v);
                        }
                    }
                    for ci in 0..cin {
                        let base = ci * k_in;
                        for kf in 0..f {
                            out[base + g.gather[so * f + kf] as usize] += v[ci * f + kf];
                        }
                    }
                }
            }
            gh
        }
    }
}

fn layer_weight_grads(layer: &LayerParams, delta: &Mat, input: &Mat) -> (Mat, Vec<f64>) {
    match layer.kind {
        LayerKind::FullyConnected => {
            let gw = matmul_tn(delta, input);
            let gb = delta.column_sums();
            (gw, gb)
        }
        LayerKind::Convolutional => {
            let g = layer.geom.as_ref().unwrap();
            let (k_out, f, cin, k_in) = (g.out_sites(), g.kernel_sites(), g.in_channels, g.in_sites());
            let mut gw = Mat::zeros(g.out_channels, cin * f);
            let mut gb = vec![0.0; g.out_channels];
            let mut patch = Mat::zeros(k_out, cin * f);
            for x in 0..delta.rows() {
                let hrow = input.row(x);
                for so in 0..k_out {
                    let prow = patch.row_mut(so);
                    for ci in 0..cin {
                        let base = ci * k_in;
                        for kf in 0..f {
                            prow[ci * f + kf] = hrow[base + g.gather[so * f + kf] as usize];
                        }
                    }
                }
                let drow = delta.row(x);
                for co in 0..g.out_channels {
                    let grow = gw.row_mut(co);
                    for so in 0..k_out {
                        let d = drow[co * k_out + so];
                        gb[co] += d;
                        if d != 0.0 {
                            axpy(d, patch.row(so), grow);
                        }
                    }
                }
            }
            (gw, gb)
        }
    }
}

/// Backward pass. `seed` is the gradient at the output pre-activations
/// (examples x output units): unit rows for Jacobian probing, a loss gradient
/// for training. Fills `delta` on every layer tape; returns parameter
/// gradients when `want_grads` is set.
pub fn backward(
    net: &NetInstance,
    tape: &mut BatchTape,
    input: &Mat,
    seed: &Mat,
    mode: BackwardMode,
    want_grads: bool,
) -> Result<Option<ParamGrads>> {
    let depth = net.layers.len();
    if seed.rows() != tape.batch_size() || seed.cols() != net.output_units() {
        return Err(Error::Structural(format!(
            "seed gradient is {}x{}, expected {}x{}",
            seed.rows(),
            seed.cols(),
            tape.batch_size(),
            net.output_units()
        )));
    }
    let mut g_weights: Vec<Option<(Mat, Vec<f64>)>> = (0..depth).map(|_| None).collect();
    let mut g_bn: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..depth).map(|_| None).collect();
    let mut delta = seed.clone();
    // the output layer is affine, so the seed is already dL/dz there
    for l in (2..=depth).rev() {
        let layer = &net.layers[l - 1];
        if want_grads {
            g_weights[l - 1] = Some(layer_weight_grads(layer, &delta, &tape.layers[l - 2].h));
        }
        let prev_layer = &net.layers[l - 2];
        let gh = propagate(layer, &delta, prev_layer.units);
        let (next_delta, bn_grads) = gate_layer(prev_layer, &tape.layers[l - 2], gh, mode);
        if want_grads {
            g_bn[l - 2] = bn_grads;
        }
        tape.layers[l - 1].delta = Some(std::mem::replace(&mut delta, next_delta));
    }
    if want_grads {
        g_weights[0] = Some(layer_weight_grads(&net.layers[0], &delta, input));
    }
    tape.layers[0].delta = Some(delta);
    if !want_grads {
        return Ok(None);
    }
    let layers = g_weights
        .into_iter()
        .zip(g_bn)
        .map(|(w, bn)| {
            let (weight, bias) = w.expect("weight grads filled for every layer");
            let (gamma, beta) = match bn {
                Some((g, b)) => (Some(g), Some(b)),
                None => (None, None),
            };
            LayerGrads {
                weight,
                bias,
                gamma,
                beta,
            }
        })
        .collect();
    Ok(Some(ParamGrads { layers }))
}

/// Per-example gradient rows for layer `l` (1-based) under the current
/// seeding: row `x` is the flattened `[weight grads, bias grads]` of example
/// `x`. Requires a prior [`backward`] call.
pub fn weight_gradients(net: &NetInstance, tape: &BatchTape, input: &Mat, l: usize) -> Result<Mat> {
    let layer = &net.layers[l - 1];
    let delta = tape.layers[l - 1]
        .delta
        .as_ref()
        .ok_or_else(|| Error::Structural(format!("layer {l}: run backward first")))?;
    let prev_h = if l == 1 { input } else { &tape.layers[l - 2].h };
    let m = delta.rows();
    let cols = net.weight_param_count(l);
    let mut rows = Mat::zeros(m, cols);
    match layer.kind {
        LayerKind::FullyConnected => {
            let fan_in = layer.weight.cols();
            let width = layer.weight.rows();
            for x in 0..m {
                let drow = delta.row(x);
                let hrow = prev_h.row(x);
                let out = rows.row_mut(x);
                for j in 0..width {
                    if drow[j] != 0.0 {
                        axpy(drow[j], hrow, &mut out[j * fan_in..(j + 1) * fan_in]);
                    }
                    out[width * fan_in + j] = drow[j];
                }
            }
        }
        LayerKind::Convolutional => {
            let g = layer.geom.as_ref().unwrap();
            let (k_out, f, cin, k_in) = (g.out_sites(), g.kernel_sites(), g.in_channels, g.in_sites());
            let wlen = cin * f;
            let mut patch = Mat::zeros(k_out, wlen);
            for x in 0..m {
                let hrow = prev_h.row(x);
                for so in 0..k_out {
                    let prow = patch.row_mut(so);
                    for ci in 0..cin {
                        let base = ci * k_in;
                        for kf in 0..f {
                            prow[ci * f + kf] = hrow[base + g.gather[so * f + kf] as usize];
                        }
                    }
                }
                let drow = delta.row(x);
                let out = rows.row_mut(x);
                for co in 0..g.out_channels {
                    let mut bias_sum = 0.0;
                    for so in 0..k_out {
                        let d = drow[co * k_out + so];
                        bias_sum += d;
                        if d != 0.0 {
                            axpy(d, patch.row(so), &mut out[co * wlen..(co + 1) * wlen]);
                        }
                    }
                    out[g.out_channels * wlen + co] = bias_sum;
                }
            }
        }
    }
    Ok(rows)
}

/// Seed matrix selecting one output component for every example.
pub fn unit_seed(m: usize, output_units: usize, component: usize) -> Mat {
    let mut seed = Mat::zeros(m, output_units);
    for x in 0..m {
        seed.set(x, component, 1.0);
    }
    seed
}

#[cfg(test)]
mod tests;
