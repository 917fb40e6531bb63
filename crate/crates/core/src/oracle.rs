//! Monte-Carlo verification layer.
//!
//! Every order parameter is also a sample average over random networks and
//! random data, so each recursion output can be checked against a direct
//! estimate: sample an ensemble of networks, push a large batch of
//! standard-normal inputs through, run the frozen-statistics backward pass,
//! and average. Cross-sample and cross-site expectations use the
//! inclusion-exclusion identity `sum_{i != j} <a_i, a_j> = |sum a|^2 -
//! sum |a_i|^2`, which keeps the cost linear in the batch.
//!
//! The same machinery estimates the empirical Fisher information spectrum:
//! per-(example, output) gradient rows form a Gram matrix whose top
//! eigenvalue comes from power iteration, with the normalized all-ones
//! Rayleigh quotient as the plug-in lower bound.

use crate::arch::{ArchSpec, InputDim, LayerKind};
use crate::error::{Error, Result};
use crate::meanfield::{run_profile, OrderParamProfile};
use crate::nnkernel::mat::{dot, matmul_nt, Mat};
use crate::nnkernel::{
    backward, forward, sample_network, unit_seed, BackwardMode, BatchTape, ForwardMode,
    NetInstance,
};
use crate::rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Maximum Gram dimension (`m * outputs`) for the dense spectral path.
const MAX_GRAM_ROWS: usize = 20_000;

/// One Monte-Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl McEstimate {
    fn from_samples(samples: &[f64]) -> McEstimate {
        let n = samples.len();
        assert!(n >= 2, "need at least two replicates");
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        McEstimate {
            mean,
            std_error: (var / n as f64).sqrt(),
            n_samples: n,
        }
    }
}

/// Estimates of every order parameter at one layer (0 = input, where only
/// the activation moments exist).
#[derive(Debug, Clone)]
pub struct LayerEstimates {
    pub layer: usize,
    pub gamma_cap: Option<McEstimate>,
    pub gamma_tilde: Option<McEstimate>,
    pub gamma_hat: Option<McEstimate>,
    pub h: McEstimate,
    pub h_tilde: McEstimate,
    pub h_hat: Option<McEstimate>,
    pub delta: Option<McEstimate>,
    pub delta_tilde: Option<McEstimate>,
    pub delta_hat: Option<McEstimate>,
}

/// Raw per-replicate order-parameter samples for one layer.
#[derive(Debug, Clone, Copy, Default)]
struct LayerSample {
    gamma_cap: Option<f64>,
    gamma_tilde: Option<f64>,
    gamma_hat: Option<f64>,
    h: f64,
    h_tilde: f64,
    h_hat: Option<f64>,
    delta: Option<f64>,
    delta_tilde: Option<f64>,
    delta_hat: Option<f64>,
}

/// Same-sample and cross-sample second moments of a batch field, per unit.
/// Returns `(mean_sq, cross_sample)`.
fn pair_moments(field: &Mat) -> (f64, f64) {
    let m = field.rows() as f64;
    let units = field.cols() as f64;
    let total_sq = field.frobenius_sq();
    let col_sums = field.column_sums();
    let sum_colsq: f64 = col_sums.iter().map(|v| v * v).sum();
    let mean_sq = total_sq / (m * units);
    let cross = (sum_colsq - total_sq) / (m * (m - 1.0) * units);
    (mean_sq, cross)
}

/// Cross-site cross-sample moment for a conv field laid out channel-major
/// (`unit = c * sites + s`), with diagonal terms removed in both indices.
/// `divisor` is the channel normalization (channel count for the forward
/// family, 1 for the backward family).
fn hat_moment(field: &Mat, channels: usize, sites: usize, divisor: f64) -> f64 {
    let m = field.rows() as f64;
    let k = sites as f64;
    let col_sums = field.column_sums();
    let mut acc = 0.0;
    for c in 0..channels {
        let cols = &col_sums[c * sites..(c + 1) * sites];
        let s_all: f64 = cols.iter().sum();
        let a: f64 = cols.iter().map(|v| v * v).sum();
        let mut b = 0.0;
        let mut t = 0.0;
        for x in 0..field.rows() {
            let row = &field.row(x)[c * sites..(c + 1) * sites];
            let rs: f64 = row.iter().sum();
            b += rs * rs;
            t += row.iter().map(|v| v * v).sum::<f64>();
        }
        acc += s_all * s_all - a - b + t;
    }
    acc / (k * (k - 1.0) * m * (m - 1.0)) / divisor
}

fn conv_shape(spec: &ArchSpec, l: usize) -> Option<(usize, usize)> {
    if l == 0 {
        match spec.input {
            InputDim::Conv {
                channels,
                spatial_sites,
            } => Some((channels, spatial_sites)),
            InputDim::Dense(_) => None,
        }
    } else {
        let layer = &spec.layers[l - 1];
        (layer.kind == LayerKind::Convolutional)
            .then(|| (layer.width, layer.spatial_sites.unwrap_or(0)))
    }
}

/// Forward-family moments of a field at layer `l`: `(same, cross_sample,
/// cross_site)`, per-unit normalization.
fn field_moments(spec: &ArchSpec, l: usize, field: &Mat) -> (f64, f64, Option<f64>) {
    let (same, cross) = pair_moments(field);
    match conv_shape(spec, l) {
        Some((c, k)) if k > 1 => {
            let hat = hat_moment(field, c, k, c as f64);
            (same, cross, Some(hat))
        }
        Some(_) => (same, cross, Some(0.0)),
        None => (same, cross, None),
    }
}

/// Backward-family moments: site-indexed channel-vector norms, so no
/// division by the channel count.
fn delta_moments(spec: &ArchSpec, l: usize, field: &Mat) -> (f64, f64, Option<f64>) {
    let m = field.rows() as f64;
    let total_sq = field.frobenius_sq();
    let col_sums = field.column_sums();
    let sum_colsq: f64 = col_sums.iter().map(|v| v * v).sum();
    match conv_shape(spec, l) {
        Some((c, k)) => {
            let sites = k as f64;
            let delta = total_sq / (m * sites);
            let delta_tilde = (sum_colsq - total_sq) / (m * (m - 1.0) * sites);
            let hat = if k > 1 {
                Some(hat_moment(field, c, k, 1.0))
            } else {
                Some(0.0)
            };
            (delta, delta_tilde, hat)
        }
        None => {
            let delta = total_sq / m;
            let delta_tilde = (sum_colsq - total_sq) / (m * (m - 1.0));
            (delta, delta_tilde, None)
        }
    }
}

pub(crate) fn gaussian_batch(rng: &mut impl rand::Rng, m: usize, dim: usize) -> Mat {
    let data = (0..m * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z
        })
        .collect();
    Mat::from_vec(m, dim, data)
}

fn forward_mode(spec: &ArchSpec) -> ForwardMode {
    if spec.has_batch_norm() {
        ForwardMode::BnPopulation
    } else {
        ForwardMode::Vanilla
    }
}

fn replicate_samples(
    spec: &ArchSpec,
    m: usize,
    root_seed: u64,
    r: usize,
) -> Result<Vec<LayerSample>> {
    let net = sample_network(spec, rng::replicate_net_seed(root_seed, r))?;
    let mut data_rng = rng::replicate_stream(root_seed, r);
    let batch = gaussian_batch(&mut data_rng, m, spec.input.units());
    let mut tape = forward(&net, &batch, forward_mode(spec))?;
    // first-component seeding matches the unit backward base case
    let seed = unit_seed(m, net.output_units(), 0);
    backward(&net, &mut tape, &batch, &seed, BackwardMode::FrozenStats, false)?;

    let depth = spec.depth();
    let mut rows = Vec::with_capacity(depth + 1);
    let (h0, ht0, hh0) = field_moments(spec, 0, &batch);
    rows.push(LayerSample {
        h: h0,
        h_tilde: ht0,
        h_hat: hh0,
        ..LayerSample::default()
    });
    for l in 1..=depth {
        let lt = &tape.layers[l - 1];
        let (g, gt, gh) = field_moments(spec, l, &lt.z);
        let (h, ht, hh) = field_moments(spec, l, &lt.h);
        let delta_field = lt.delta.as_ref().expect("backward filled deltas");
        let (d, dt, dh) = delta_moments(spec, l, delta_field);
        rows.push(LayerSample {
            gamma_cap: Some(g),
            gamma_tilde: Some(gt),
            gamma_hat: gh,
            h,
            h_tilde: ht,
            h_hat: hh,
            delta: Some(d),
            delta_tilde: Some(dt),
            delta_hat: dh,
        });
    }
    Ok(rows)
}

fn aggregate(per_layer: Vec<Vec<LayerSample>>) -> Vec<LayerEstimates> {
    let n_layers = per_layer[0].len();
    let collect = |f: &dyn Fn(&LayerSample) -> Option<f64>, l: usize| -> Option<McEstimate> {
        let vals: Option<Vec<f64>> = per_layer.iter().map(|rep| f(&rep[l])).collect();
        vals.map(|v| McEstimate::from_samples(&v))
    };
    (0..n_layers)
        .map(|l| LayerEstimates {
            layer: l,
            gamma_cap: collect(&|s| s.gamma_cap, l),
            gamma_tilde: collect(&|s| s.gamma_tilde, l),
            gamma_hat: collect(&|s| s.gamma_hat, l),
            h: collect(&|s| Some(s.h), l).unwrap(),
            h_tilde: collect(&|s| Some(s.h_tilde), l).unwrap(),
            h_hat: collect(&|s| s.h_hat, l),
            delta: collect(&|s| s.delta, l),
            delta_tilde: collect(&|s| s.delta_tilde, l),
            delta_hat: collect(&|s| s.delta_hat, l),
        })
        .collect()
}

/// Estimate every order parameter of `spec` from `n_nets` independent
/// networks, each probed with `m` i.i.d. standard-normal inputs (the data
/// model behind the recursions). Replicates run in parallel on disjoint
/// seed substreams; the reduction order is fixed, so results depend only on
/// `seed`.
pub fn estimate_order_params(
    spec: &ArchSpec,
    n_nets: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<LayerEstimates>> {
    if n_nets < 2 {
        return Err(Error::Structural("need at least 2 replicate nets".into()));
    }
    if m < 256 {
        return Err(Error::Structural(
            "order-parameter estimation needs m >= 256".into(),
        ));
    }
    let samples: Result<Vec<Vec<LayerSample>>> = (0..n_nets)
        .into_par_iter()
        .map(|r| replicate_samples(spec, m, seed, r))
        .collect();
    Ok(aggregate(samples?))
}

/// Empirical spectral quantities of one sampled network.
#[derive(Debug, Clone)]
pub struct EmpiricalSpectrum {
    /// Top eigenvalue of the empirical FIM Gram matrix.
    pub lambda_max_empirical: f64,
    /// Normalized all-ones Rayleigh quotient (plug-in lower bound).
    pub v_statistic: f64,
    /// Per-layer contributions to the plug-in bound.
    pub per_layer_f: Vec<f64>,
}

/// Top eigenvalue of a symmetric PSD matrix by power iteration with a fixed
/// seeded start plus one restart. Relative tolerance on the Rayleigh
/// quotient; errors with the last iterate on non-convergence.
pub fn power_iteration(gram: &Mat, seed: u64, tol: f64, max_iters: usize) -> Result<f64> {
    assert_eq!(gram.rows(), gram.cols(), "gram matrix must be square");
    let n = gram.rows();
    let mut best: Option<f64> = None;
    for attempt in 0..2u64 {
        let mut stream = rng::replicate_stream(seed, 0x5057 + attempt as usize);
        let mut v: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut stream);
                z
            })
            .collect();
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let mut lambda = 0.0;
        let mut converged = false;
        let mut residual = f64::INFINITY;
        for _ in 0..max_iters {
            let mut w = vec![0.0; n];
            for (i, wi) in w.iter_mut().enumerate() {
                *wi = dot(gram.row(i), &v);
            }
            let new_lambda = dot(&v, &w);
            let wnorm = dot(&w, &w).sqrt();
            if wnorm == 0.0 {
                lambda = 0.0;
                converged = true;
                break;
            }
            let mut rsq = 0.0;
            for i in 0..n {
                let d = w[i] - new_lambda * v[i];
                rsq += d * d;
            }
            residual = rsq.sqrt() / wnorm;
            let delta = (new_lambda - lambda).abs();
            lambda = new_lambda;
            for i in 0..n {
                v[i] = w[i] / wnorm;
            }
            if delta <= tol * lambda.abs().max(f64::MIN_POSITIVE) && residual <= tol.sqrt() {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::PowerIteration {
                rayleigh: lambda,
                residual,
            });
        }
        best = Some(best.map_or(lambda, |b: f64| b.max(lambda)));
    }
    Ok(best.unwrap())
}

/// Build the per-(example, output-component) gradient row matrix over the
/// weight and bias parameters of every layer, component-major row order.
/// Returns `(rows, per-layer column offsets)`.
fn gradient_rows(
    net: &NetInstance,
    tape: &mut BatchTape,
    batch: &Mat,
) -> Result<(Mat, Vec<usize>)> {
    let m = batch.rows();
    let outputs = net.output_units();
    let depth = net.layers.len();
    let mut offsets = Vec::with_capacity(depth + 1);
    let mut total = 0;
    offsets.push(0);
    for l in 1..=depth {
        total += net.weight_param_count(l);
        offsets.push(total);
    }
    let mut rows = Mat::zeros(m * outputs, total);
    for comp in 0..outputs {
        let seed = unit_seed(m, outputs, comp);
        backward(net, tape, batch, &seed, BackwardMode::FrozenStats, false)?;
        for l in 1..=depth {
            let layer_rows = crate::nnkernel::weight_gradients(net, tape, batch, l)?;
            for x in 0..m {
                let dst = rows.row_mut(comp * m + x);
                dst[offsets[l - 1]..offsets[l]].copy_from_slice(layer_rows.row(x));
            }
        }
    }
    Ok((rows, offsets))
}

/// Estimate the empirical FIM top eigenvalue of one sampled network via the
/// Gram matrix of per-(example, output) gradient rows.
pub fn empirical_fim_lambda_max(spec: &ArchSpec, seed: u64, m: usize) -> Result<EmpiricalSpectrum> {
    let net = sample_network(spec, seed)?;
    let outputs = net.output_units();
    if m * outputs > MAX_GRAM_ROWS {
        return Err(Error::Structural(format!(
            "gram would have {} rows; cap is {MAX_GRAM_ROWS}",
            m * outputs
        )));
    }
    let mut data_rng = rng::replicate_stream(seed, 0x46494d);
    let batch = gaussian_batch(&mut data_rng, m, spec.input.units());
    let mut tape = forward(&net, &batch, forward_mode(spec))?;
    let (rows, offsets) = gradient_rows(&net, &mut tape, &batch)?;

    let mut gram = matmul_nt(&rows, &rows);
    let scale = 1.0 / m as f64;
    for v in gram.as_mut_slice() {
        *v *= scale;
    }
    let n_rows = gram.rows();
    let v_statistic = gram.as_slice().iter().sum::<f64>() / n_rows as f64;

    // per-layer plug-in contributions: squared norms of the summed rows
    let col_sums = rows.column_sums();
    let denom = (m * m * outputs) as f64;
    let per_layer_f = offsets
        .windows(2)
        .map(|w| col_sums[w[0]..w[1]].iter().map(|v| v * v).sum::<f64>() / denom)
        .collect();

    let lambda_max_empirical = power_iteration(&gram, seed ^ 0x9e37, 1e-8, 10_000)?;
    Ok(EmpiricalSpectrum {
        lambda_max_empirical,
        v_statistic,
        per_layer_f,
    })
}

/// Plug-in bound only, usable at any width: one ones-seeded backward pass
/// per network gives the summed gradient rows layer by layer. Returns
/// `(v_statistic, per-layer f)`.
pub fn vstat_estimate(spec: &ArchSpec, seed: u64, m: usize) -> Result<(f64, Vec<f64>)> {
    let net = sample_network(spec, seed)?;
    let outputs = net.output_units();
    let mut data_rng = rng::replicate_stream(seed, 0x565354);
    let batch = gaussian_batch(&mut data_rng, m, spec.input.units());
    let mut tape = forward(&net, &batch, forward_mode(spec))?;
    let mut seed_mat = Mat::zeros(m, outputs);
    seed_mat.as_mut_slice().fill(1.0);
    let grads = backward(
        &net,
        &mut tape,
        &batch,
        &seed_mat,
        BackwardMode::FrozenStats,
        true,
    )?
    .expect("grads requested");
    let denom = (m * m * outputs) as f64;
    let per_layer: Vec<f64> = grads
        .layers
        .iter()
        .map(|g| (g.weight.frobenius_sq() + g.bias.iter().map(|v| v * v).sum::<f64>()) / denom)
        .collect();
    Ok((per_layer.iter().sum(), per_layer))
}

/// Configuration of the theory/empirical comparison.
#[derive(Debug, Clone)]
pub struct ValidateConfig {
    pub n_nets: usize,
    pub m: usize,
    pub seed: u64,
    /// Statistical gate in standard errors.
    pub z_threshold: f64,
    /// Systematic margin for per-layer order parameters (finite width).
    pub order_param_margin: f64,
    /// Margin for the summed bound vs the plug-in estimate (compounds the
    /// factorization and finite-width errors).
    pub sum_f_margin: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig {
            n_nets: 8,
            m: 4096,
            seed: 7,
            z_threshold: 3.0,
            order_param_margin: 0.10,
            sum_f_margin: 0.20,
        }
    }
}

/// One comparison row.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub quantity: &'static str,
    /// Layer index; `None` for whole-network aggregates.
    pub layer: Option<usize>,
    pub theory: f64,
    pub empirical: f64,
    pub std_error: f64,
    pub z: f64,
    pub pass: bool,
}

/// Comparison of every order parameter (and the summed bound) against the
/// Monte-Carlo estimates.
#[derive(Debug, Clone)]
pub struct DiscrepancyReport {
    pub rows: Vec<ReportRow>,
    pub passed: bool,
}

impl DiscrepancyReport {
    pub fn failed_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| !r.pass)
    }
}

fn make_row(
    quantity: &'static str,
    layer: Option<usize>,
    theory: f64,
    est: McEstimate,
    z_threshold: f64,
    margin: f64,
) -> ReportRow {
    let dev = est.mean - theory;
    let z = if est.std_error > 0.0 {
        dev / est.std_error
    } else if dev == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let pass = dev.abs() <= z_threshold * est.std_error + margin * theory.abs();
    ReportRow {
        quantity,
        layer,
        theory,
        empirical: est.mean,
        std_error: est.std_error,
        z,
        pass,
    }
}

fn theory_rows(
    profile: &OrderParamProfile,
    estimates: &[LayerEstimates],
    cfg: &ValidateConfig,
) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    let zt = cfg.z_threshold;
    let margin = cfg.order_param_margin;
    for est in estimates {
        let l = est.layer;
        let (h_th, ht_th, hh_th) = profile.h_moments(l);
        rows.push(make_row("H", Some(l), h_th, est.h, zt, margin));
        rows.push(make_row("H_tilde", Some(l), ht_th, est.h_tilde, zt, margin));
        if let (Some(th), Some(e)) = (hh_th, est.h_hat) {
            rows.push(make_row("H_hat", Some(l), th, e, zt, margin));
        }
        if l == 0 {
            continue;
        }
        let p = &profile.layers[l - 1];
        if let Some(e) = est.gamma_cap {
            rows.push(make_row("Gamma", Some(l), p.gamma_cap, e, zt, margin));
        }
        if let Some(e) = est.gamma_tilde {
            rows.push(make_row("Gamma_tilde", Some(l), p.gamma_tilde, e, zt, margin));
        }
        if let (Some(th), Some(e)) = (p.gamma_hat, est.gamma_hat) {
            rows.push(make_row("Gamma_hat", Some(l), th, e, zt, margin));
        }
        if let Some(e) = est.delta {
            rows.push(make_row("Delta", Some(l), p.delta, e, zt, margin));
        }
        if let Some(e) = est.delta_tilde {
            rows.push(make_row("Delta_tilde", Some(l), p.delta_tilde, e, zt, margin));
        }
        if let (Some(th), Some(e)) = (p.delta_hat, est.delta_hat) {
            rows.push(make_row("Delta_hat", Some(l), th, e, zt, margin));
        }
    }
    rows
}

/// Run the full comparison: order parameters layer by layer, plus the summed
/// eigenvalue bound against the plug-in estimate.
pub fn compare_theory_vs_empirical(
    spec: &ArchSpec,
    cfg: &ValidateConfig,
) -> Result<DiscrepancyReport> {
    if let Some(w) = spec.layers.iter().map(|l| l.width).min() {
        if w < 64 {
            log::warn!(
                "narrowest layer has width {w}; finite-width margins may fail below width 64"
            );
        }
    }
    let profile = run_profile(spec)?;
    let estimates = estimate_order_params(spec, cfg.n_nets, cfg.m, cfg.seed)?;
    let mut rows = theory_rows(&profile, &estimates, cfg);

    let report = crate::eigenbound::spectral_report(spec, &profile, spec.init.momentum)?;
    let vstats: Result<Vec<f64>> = (0..cfg.n_nets)
        .into_par_iter()
        .map(|r| {
            vstat_estimate(spec, rng::replicate_net_seed(cfg.seed, 0x1000 + r), cfg.m)
                .map(|v| v.0)
        })
        .collect();
    let v_est = McEstimate::from_samples(&vstats?);
    rows.push(make_row(
        "sum_f",
        None,
        report.lambda_bound,
        v_est,
        cfg.z_threshold,
        cfg.sum_f_margin,
    ));

    let passed = rows.iter().all(|r| r.pass);
    Ok(DiscrepancyReport { rows, passed })
}

/// CSV with header `quantity,layer,theory,empirical,std_error,z`.
pub fn report_csv(report: &DiscrepancyReport) -> String {
    let mut out = String::from("quantity,layer,theory,empirical,std_error,z\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.quantity,
            r.layer.map(|l| l.to_string()).unwrap_or_default(),
            r.theory,
            r.empirical,
            r.std_error,
            r.z
        ));
    }
    out
}

/// Human-readable table for terminal output.
pub fn report_table(report: &DiscrepancyReport) -> String {
    let mut out = format!(
        "{:<12} {:>5} {:>14} {:>14} {:>12} {:>9}  status\n",
        "quantity", "layer", "theory", "empirical", "std_error", "z"
    );
    for r in &report.rows {
        out.push_str(&format!(
            "{:<12} {:>5} {:>14.6} {:>14.6} {:>12.2e} {:>9.2}  {}\n",
            r.quantity,
            r.layer.map(|l| l.to_string()).unwrap_or_default(),
            r.theory,
            r.empirical,
            r.std_error,
            r.z,
            if r.pass { "ok" } else { "FAIL" }
        ));
    }
    out
}
