//! Spectral bound and critical learning rate.
//!
//! Each layer contributes a nonnegative term to a lower bound on the expected
//! top eigenvalue of the Fisher information matrix of a random network:
//!
//! * dense layer `l`: `f_l = N_{l-1} * H~_{l-1} * D~_l`
//! * convolutional layer `l`:
//!   `f_l = C_{l-1} |F_l| [(|K_l|-1) D^_l + D~_l] [(|K_l|-1) H^_{l-1} + H~_{l-1}]`
//!
//! The bound is the sum over layers (the final linear layer included, with
//! its unit backward seed), and the critical momentum-GD learning rate is
//! `eta* = 2 (1 + mu) / lambda`. The quadratic-model optimum sits at half
//! that, which experiments track, so reports expose both.

use crate::arch::{ArchSpec, LayerKind};
use crate::error::{Error, Result};
use crate::meanfield::{run_profile, OrderParamProfile};

/// Spectral summary of one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    /// Per-layer bound contributions, 1-based layer order.
    pub f_per_layer: Vec<f64>,
    /// Lower bound on the expected top FIM eigenvalue: the sum of `f_per_layer`.
    pub lambda_bound: f64,
    /// Largest stable learning rate `2 (1 + mu) / lambda_bound`.
    pub eta_star: f64,
    /// Quadratic-model optimum `eta_star / 2`.
    pub eta_opt: f64,
}

/// Bound contribution of layer `l` (1-based).
pub fn layer_contribution(spec: &ArchSpec, profile: &OrderParamProfile, l: usize) -> Result<f64> {
    if l == 0 || l > spec.depth() {
        return Err(Error::Structural(format!(
            "layer index {l} outside 1..={}",
            spec.depth()
        )));
    }
    let layer = &spec.layers[l - 1];
    let (_, prev_h_tilde, prev_h_hat) = profile.h_moments(l - 1);
    let cur = &profile.layers[l - 1];
    match layer.kind {
        LayerKind::FullyConnected => Ok(layer.fan_in as f64 * prev_h_tilde * cur.delta_tilde),
        LayerKind::Convolutional => {
            let sites = layer.spatial_sites.ok_or_else(|| {
                Error::Structural(format!("layer {l}: convolutional layer missing spatial_sites"))
            })? as f64;
            let delta_hat = cur.delta_hat.ok_or_else(|| {
                Error::Structural(format!("layer {l}: profile missing cross-site backward moment"))
            })?;
            let h_hat = prev_h_hat.ok_or_else(|| {
                Error::Structural(format!("layer {l}: profile missing cross-site forward moment"))
            })?;
            let back = (sites - 1.0) * delta_hat + cur.delta_tilde;
            let fwd = (sites - 1.0) * h_hat + prev_h_tilde;
            Ok(layer.fan_in as f64 * back * fwd)
        }
    }
}

/// Assemble the spectral report for a computed profile.
pub fn spectral_report(
    spec: &ArchSpec,
    profile: &OrderParamProfile,
    momentum: f64,
) -> Result<SpectralReport> {
    let mut f_per_layer = Vec::with_capacity(spec.depth());
    for l in 1..=spec.depth() {
        f_per_layer.push(layer_contribution(spec, profile, l)?);
    }
    let lambda_bound: f64 = f_per_layer.iter().sum();
    if lambda_bound <= 0.0 {
        return Err(Error::Structural(
            "degenerate spectrum: eigenvalue bound is zero".into(),
        ));
    }
    let eta_star = 2.0 * (1.0 + momentum) / lambda_bound;
    Ok(SpectralReport {
        f_per_layer,
        lambda_bound,
        eta_star,
        eta_opt: eta_star / 2.0,
    })
}

/// Recursions plus spectral report in one call.
pub fn analyze(spec: &ArchSpec) -> Result<(OrderParamProfile, SpectralReport)> {
    let profile = run_profile(spec)?;
    let report = spectral_report(spec, &profile, spec.init.momentum)?;
    Ok((profile, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariant {
    Bn,
    Vanilla,
}

impl std::fmt::Display for SweepVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepVariant::Bn => "bn",
            SweepVariant::Vanilla => "vanilla",
        })
    }
}

/// One row of a scale sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub gamma: f64,
    pub lambda_bound: f64,
    pub eta_star: f64,
    pub eta_opt: f64,
    pub variant: SweepVariant,
}

/// Evaluate the bound across a grid of normalization scales, applied
/// uniformly to every normalized layer, plus the unnormalized reference.
///
/// Output order is the grid order: all `bn` rows, then one `vanilla` row per
/// grid point (the reference is scale-free; repeating it keeps rows aligned
/// for plotting).
pub fn gamma_sweep(spec: &ArchSpec, gamma_grid: &[f64], momentum: f64) -> Result<Vec<SweepPoint>> {
    if gamma_grid.is_empty() {
        return Err(Error::Structural("gamma grid is empty".into()));
    }
    let hidden_all_bn = spec
        .layers
        .iter()
        .take(spec.depth() - 1)
        .all(|l| l.batch_norm);
    if !hidden_all_bn {
        return Err(Error::Structural(
            "gamma sweep requires BatchNorm on every hidden layer".into(),
        ));
    }
    let mut rows = Vec::with_capacity(2 * gamma_grid.len());
    for &gamma in gamma_grid {
        let scaled = spec.with_gamma(gamma);
        let profile = run_profile(&scaled)?;
        let report = spectral_report(&scaled, &profile, momentum)?;
        rows.push(SweepPoint {
            gamma,
            lambda_bound: report.lambda_bound,
            eta_star: report.eta_star,
            eta_opt: report.eta_opt,
            variant: SweepVariant::Bn,
        });
    }
    let vanilla = spec.without_batch_norm();
    let profile = run_profile(&vanilla)?;
    let report = spectral_report(&vanilla, &profile, momentum)?;
    for &gamma in gamma_grid {
        rows.push(SweepPoint {
            gamma,
            lambda_bound: report.lambda_bound,
            eta_star: report.eta_star,
            eta_opt: report.eta_opt,
            variant: SweepVariant::Vanilla,
        });
    }
    Ok(rows)
}

/// CSV with the fixed header `gamma,lambda_bound,eta_star,eta_opt,variant`.
pub fn sweep_csv(rows: &[SweepPoint]) -> String {
    let mut out = String::from("gamma,lambda_bound,eta_star,eta_opt,variant\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.gamma, r.lambda_bound, r.eta_star, r.eta_opt, r.variant
        ));
    }
    out
}
