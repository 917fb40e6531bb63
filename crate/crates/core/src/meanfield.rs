//! Layer-wise order-parameter recursions.
//!
//! Six scalar statistics describe a wide random dense layer: the second
//! moments of pre-activations (Gamma), activations (H) and backward signals
//! (Delta), each in a same-sample and a cross-sample flavor (plain / tilde).
//! Convolutional layers add a cross-site flavor (hat) of each, nine in total.
//! In the wide-network limit these satisfy closed recursions over depth,
//! evaluated here layer by layer: a forward pass for the Gamma/H families and
//! a backward pass for the Delta family.
//!
//! ReLU activations with zero normalization shift are assumed throughout;
//! anything else is rejected because the closed forms no longer apply.

use crate::arch::{Activation, ArchSpec, InitSpec, LayerKind};
use crate::error::{Error, Result};

use std::f64::consts::PI;

/// Clamp tolerance before a correlation ratio is considered suspicious.
const CLAMP_WARN: f64 = 1e-9;

/// Order parameters of one layer.
///
/// Hat components are present on convolutional layers only. `c_tilde` and
/// `c_hat` cache the correlation ratios actually used by the recursion after
/// clamping to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOrderParams {
    pub gamma_cap: f64,
    pub gamma_tilde: f64,
    pub gamma_hat: Option<f64>,
    pub h: f64,
    pub h_tilde: f64,
    pub h_hat: Option<f64>,
    pub delta: f64,
    pub delta_tilde: f64,
    pub delta_hat: Option<f64>,
    pub c_tilde: f64,
    pub c_hat: Option<f64>,
}

/// Activation moments of the network input (the layer-0 base case).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputMoments {
    pub h: f64,
    pub h_tilde: f64,
    /// Cross-site moment; present when the first layer is convolutional.
    pub h_hat: Option<f64>,
}

/// Full profile over layers 0..=L; index 0 is the input base case.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderParamProfile {
    pub input: InputMoments,
    /// Entry `l - 1` holds layer `l`.
    pub layers: Vec<LayerOrderParams>,
}

impl OrderParamProfile {
    /// Number of rows including the input base case (L + 1).
    pub fn len(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Activation moments leaving layer `l` (0 = input).
    pub fn h_moments(&self, l: usize) -> (f64, f64, Option<f64>) {
        if l == 0 {
            (self.input.h, self.input.h_tilde, self.input.h_hat)
        } else {
            let p = &self.layers[l - 1];
            (p.h, p.h_tilde, p.h_hat)
        }
    }
}

/// Moments produced by one forward step, before the backward pass fills in
/// the Delta family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardParams {
    pub gamma_cap: f64,
    pub gamma_tilde: f64,
    pub gamma_hat: Option<f64>,
    pub h: f64,
    pub h_tilde: f64,
    pub h_hat: Option<f64>,
    pub c_tilde: f64,
    pub c_hat: Option<f64>,
}

/// Backward moments of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardParams {
    pub delta: f64,
    pub delta_tilde: f64,
    pub delta_hat: Option<f64>,
}

/// Base case: standardized data gives unit same-sample activation moments and
/// vanishing cross-sample (and cross-site) moments.
pub fn input_base_case(spec: &ArchSpec) -> InputMoments {
    let conv_first = spec.layers.first().map(|l| l.kind) == Some(LayerKind::Convolutional);
    InputMoments {
        h: 1.0,
        h_tilde: 0.0,
        h_hat: conv_first.then_some(0.0),
    }
}

/// `E[relu(a) relu(b)]` for standard bivariate normals with correlation `c`,
/// as a multiple of `1/(2 pi)`: `sqrt(1 - c^2) + c pi/2 + c asin(c)`.
///
/// Equals 1 at c = 0 and pi at c = 1, monotone increasing in between.
pub fn relu_pair_bracket(c: f64) -> f64 {
    (1.0 - c * c).max(0.0).sqrt() + c * (PI / 2.0) + c * c.asin()
}

/// `2 pi P(a > 0, b > 0)` for standard bivariate normals with correlation
/// `c`: `pi/2 + asin(c)`.
pub fn step_pair_factor(c: f64) -> f64 {
    PI / 2.0 + c.asin()
}

fn correlation(layer: usize, num: f64, den: f64, what: &str) -> Result<f64> {
    if den == 0.0 {
        return Err(Error::DegenerateLayer { layer });
    }
    let c = num / den;
    if c < -CLAMP_WARN || c > 1.0 + CLAMP_WARN {
        log::warn!("layer {layer}: {what} correlation {c} clamped to [0,1]");
    }
    Ok(c.clamp(0.0, 1.0))
}

/// Forward step of a plain dense layer.
pub fn forward_step_fc_vanilla(
    prev_h: f64,
    prev_h_tilde: f64,
    init: &InitSpec,
    layer: usize,
) -> Result<ForwardParams> {
    let gamma_cap = init.sigma_b_sq + init.sigma_w_sq * prev_h;
    let gamma_tilde = init.sigma_b_sq + init.sigma_w_sq * prev_h_tilde;
    let c = correlation(layer, gamma_tilde, gamma_cap, "same-site")?;
    Ok(ForwardParams {
        gamma_cap,
        gamma_tilde,
        gamma_hat: None,
        h: gamma_cap / 2.0,
        h_tilde: gamma_cap / (2.0 * PI) * relu_pair_bracket(c),
        h_hat: None,
        c_tilde: c,
        c_hat: None,
    })
}

/// Forward step of a normalized dense layer: the activation moments depend
/// only on the scale parameter.
pub fn forward_step_fc_bn(
    prev_h: f64,
    prev_h_tilde: f64,
    init: &InitSpec,
    gamma: f64,
    layer: usize,
) -> Result<ForwardParams> {
    let gamma_cap = init.sigma_b_sq + init.sigma_w_sq * prev_h;
    let gamma_tilde = init.sigma_b_sq + init.sigma_w_sq * prev_h_tilde;
    let c = correlation(layer, gamma_tilde, gamma_cap, "same-site")?;
    Ok(ForwardParams {
        gamma_cap,
        gamma_tilde,
        gamma_hat: None,
        h: gamma * gamma / 2.0,
        h_tilde: gamma * gamma / (2.0 * PI),
        h_hat: None,
        c_tilde: c,
        c_hat: None,
    })
}

/// Forward step of a convolutional layer (both variants). The cross-site
/// moment of the input defaults to 0 when absent (the input base case).
pub fn forward_step_conv(
    prev_h: f64,
    prev_h_tilde: f64,
    prev_h_hat: f64,
    init: &InitSpec,
    bn: bool,
    gamma: f64,
    layer: usize,
) -> Result<ForwardParams> {
    let gamma_cap = init.sigma_b_sq + init.sigma_w_sq * prev_h;
    let gamma_tilde = init.sigma_b_sq + init.sigma_w_sq * prev_h_tilde;
    let gamma_hat = init.sigma_b_sq + init.sigma_w_sq * prev_h_hat;
    let c_tilde = correlation(layer, gamma_tilde, gamma_cap, "same-site")?;
    let c_hat = correlation(layer, gamma_hat, gamma_cap, "cross-site")?;
    let (h, h_tilde, h_hat) = if bn {
        let g2 = gamma * gamma;
        (g2 / 2.0, g2 / (2.0 * PI), g2 / (2.0 * PI))
    } else {
        (
            gamma_cap / 2.0,
            gamma_cap / (2.0 * PI) * relu_pair_bracket(c_tilde),
            gamma_cap / (2.0 * PI) * relu_pair_bracket(c_hat),
        )
    };
    Ok(ForwardParams {
        gamma_cap,
        gamma_tilde,
        gamma_hat: Some(gamma_hat),
        h,
        h_tilde,
        h_hat: Some(h_hat),
        c_tilde,
        c_hat: Some(c_hat),
    })
}

/// Backward step of a dense layer. `next` carries the Delta pair of layer
/// `l + 1`; `current` is the forward state of layer `l`.
pub fn backward_step_fc(
    next: (f64, f64),
    current: &ForwardParams,
    init: &InitSpec,
    bn: bool,
    gamma: f64,
    layer: usize,
) -> Result<BackwardParams> {
    let (delta_next, delta_tilde_next) = next;
    let (delta, delta_tilde) = if bn {
        if current.gamma_cap == 0.0 {
            return Err(Error::DegenerateLayer { layer });
        }
        let g2 = gamma * gamma;
        (
            g2 * init.sigma_w_sq / 2.0 * delta_next / current.gamma_cap,
            g2 * init.sigma_w_sq / 4.0 * delta_tilde_next / current.gamma_cap,
        )
    } else {
        (
            init.sigma_w_sq / 2.0 * delta_next,
            init.sigma_w_sq * delta_tilde_next / (2.0 * PI) * step_pair_factor(current.c_tilde),
        )
    };
    Ok(BackwardParams {
        delta,
        delta_tilde,
        delta_hat: None,
    })
}

/// Backward step of a convolutional layer. `next_hat` falls back to the
/// cross-sample value when the next layer carries no cross-site component
/// (a dense head treats flattened sites symmetrically).
pub fn backward_step_conv(
    next: (f64, f64, Option<f64>),
    current: &ForwardParams,
    init: &InitSpec,
    bn: bool,
    gamma: f64,
    layer: usize,
) -> Result<BackwardParams> {
    let (delta_next, delta_tilde_next, next_hat) = next;
    let delta_hat_next = next_hat.unwrap_or(delta_tilde_next);
    let c_hat = current
        .c_hat
        .ok_or_else(|| Error::Structural(format!("layer {layer}: missing cross-site moments")))?;
    let (delta, delta_tilde, delta_hat) = if bn {
        if current.gamma_cap == 0.0 {
            return Err(Error::DegenerateLayer { layer });
        }
        let g2 = gamma * gamma;
        (
            g2 * init.sigma_w_sq / 2.0 * delta_next / current.gamma_cap,
            g2 * init.sigma_w_sq / 4.0 * delta_tilde_next / current.gamma_cap,
            g2 * init.sigma_w_sq / 4.0 * delta_hat_next / current.gamma_cap,
        )
    } else {
        (
            init.sigma_w_sq / 2.0 * delta_next,
            init.sigma_w_sq * delta_tilde_next / (2.0 * PI) * step_pair_factor(current.c_tilde),
            init.sigma_w_sq * delta_hat_next / (2.0 * PI) * step_pair_factor(c_hat),
        )
    };
    Ok(BackwardParams {
        delta,
        delta_tilde,
        delta_hat: Some(delta_hat),
    })
}

/// Run the full forward then backward recursion over a validated spec.
pub fn run_profile(spec: &ArchSpec) -> Result<OrderParamProfile> {
    let diags = crate::arch::validate_dims(spec);
    if !diags.is_empty() {
        return Err(Error::Structural(format!(
            "invalid spec: {}",
            diags
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        )));
    }
    for (idx, layer) in spec.layers.iter().enumerate() {
        if layer.beta != 0.0 {
            return Err(Error::Structural(format!(
                "layer {}: nonzero normalization shift is outside the recursion model",
                idx + 1
            )));
        }
        if idx + 1 < spec.layers.len() && layer.activation != Activation::ReLU {
            return Err(Error::Structural(format!(
                "layer {}: only relu hidden activations have closed-form recursions",
                idx + 1
            )));
        }
    }

    let depth = spec.depth();
    let input = input_base_case(spec);
    let mut forward: Vec<ForwardParams> = Vec::with_capacity(depth);

    for l in 1..=depth {
        let layer = &spec.layers[l - 1];
        let (prev_h, prev_ht, prev_hh) = if l == 1 {
            (input.h, input.h_tilde, input.h_hat)
        } else {
            let p = &forward[l - 2];
            (p.h, p.h_tilde, p.h_hat)
        };
        let params = if layer.activation == Activation::Linear {
            // identity activation passes the pre-activation moments through
            let mut p = match layer.kind {
                LayerKind::Convolutional => forward_step_conv(
                    prev_h,
                    prev_ht,
                    prev_hh.unwrap_or(prev_ht),
                    &spec.init,
                    false,
                    layer.gamma,
                    l,
                )?,
                LayerKind::FullyConnected => {
                    forward_step_fc_vanilla(prev_h, prev_ht, &spec.init, l)?
                }
            };
            p.h = p.gamma_cap;
            p.h_tilde = p.gamma_tilde;
            p.h_hat = p.gamma_hat;
            p
        } else {
            match layer.kind {
                LayerKind::FullyConnected => {
                    if layer.batch_norm {
                        forward_step_fc_bn(prev_h, prev_ht, &spec.init, layer.gamma, l)?
                    } else {
                        forward_step_fc_vanilla(prev_h, prev_ht, &spec.init, l)?
                    }
                }
                LayerKind::Convolutional => forward_step_conv(
                    prev_h,
                    prev_ht,
                    prev_hh.unwrap_or(0.0),
                    &spec.init,
                    layer.batch_norm,
                    layer.gamma,
                    l,
                )?,
            }
        };
        forward.push(params);
    }

    // backward base case: unit seed at the output layer
    let mut backward: Vec<BackwardParams> = vec![
        BackwardParams {
            delta: 0.0,
            delta_tilde: 0.0,
            delta_hat: None,
        };
        depth
    ];
    backward[depth - 1] = BackwardParams {
        delta: 1.0,
        delta_tilde: 1.0,
        delta_hat: (spec.layers[depth - 1].kind == LayerKind::Convolutional).then_some(1.0),
    };
    for l in (1..depth).rev() {
        let layer = &spec.layers[l - 1];
        let next = &backward[l];
        backward[l - 1] = match layer.kind {
            LayerKind::FullyConnected => backward_step_fc(
                (next.delta, next.delta_tilde),
                &forward[l - 1],
                &spec.init,
                layer.batch_norm,
                layer.gamma,
                l,
            )?,
            LayerKind::Convolutional => backward_step_conv(
                (next.delta, next.delta_tilde, next.delta_hat),
                &forward[l - 1],
                &spec.init,
                layer.batch_norm,
                layer.gamma,
                l,
            )?,
        };
    }

    let layers = forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| {
            let p = LayerOrderParams {
                gamma_cap: f.gamma_cap,
                gamma_tilde: f.gamma_tilde,
                gamma_hat: f.gamma_hat,
                h: f.h,
                h_tilde: f.h_tilde,
                h_hat: f.h_hat,
                delta: b.delta,
                delta_tilde: b.delta_tilde,
                delta_hat: b.delta_hat,
                c_tilde: f.c_tilde,
                c_hat: f.c_hat,
            };
            debug_assert!(p.gamma_tilde <= p.gamma_cap * (1.0 + 1e-12));
            debug_assert!(p.h_tilde <= p.h * (1.0 + 1e-12));
            debug_assert!(p.delta_tilde <= p.delta * (1.0 + 1e-12));
            p
        })
        .collect();

    Ok(OrderParamProfile { input, layers })
}

fn csv_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columnar CSV with one row per layer, the input base case first.
pub fn profile_csv(profile: &OrderParamProfile) -> String {
    let mut out =
        String::from("layer,Gamma,Gamma_tilde,Gamma_hat,H,H_tilde,H_hat,Delta,Delta_tilde,Delta_hat\n");
    out.push_str(&format!(
        "0,,,,{},{},{},,,\n",
        profile.input.h,
        profile.input.h_tilde,
        csv_cell(profile.input.h_hat)
    ));
    for (idx, p) in profile.layers.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            idx + 1,
            p.gamma_cap,
            p.gamma_tilde,
            csv_cell(p.gamma_hat),
            p.h,
            p.h_tilde,
            csv_cell(p.h_hat),
            p.delta,
            p.delta_tilde,
            csv_cell(p.delta_hat)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{parse_arch, InputDim};

    fn init(sigma_w_sq: f64, sigma_b_sq: f64) -> InitSpec {
        InitSpec {
            sigma_w_sq,
            sigma_b_sq,
            momentum: 0.9,
        }
    }

    fn paper_fc_bn(gamma: f64) -> ArchSpec {
        let text = format!(
            r#"
[input]
dim = 784
[init]
sigma_w_sq = 2.0
sigma_b_sq = 0.5
[[layer]]
kind = "fc"
width = 1000
batch_norm = true
gamma = {gamma}
[[layer]]
kind = "fc"
width = 1000
batch_norm = true
gamma = {gamma}
[[layer]]
kind = "fc"
width = 1000
batch_norm = true
gamma = {gamma}
[[layer]]
kind = "fc"
width = 10
activation = "linear"
"#
        );
        parse_arch(&text).unwrap()
    }

    #[test]
    fn input_base_case_values() {
        let spec = paper_fc_bn(1.0);
        let base = input_base_case(&spec);
        assert_eq!((base.h, base.h_tilde), (1.0, 0.0));
        assert_eq!(base.h_hat, None);

        let conv = parse_arch(
            r#"
[input]
channels = 3
spatial_sites = 1024
[init]
sigma_w_sq = 2.0
sigma_b_sq = 0.5
[[layer]]
kind = "conv"
width = 8
kernel_sites = 9
spatial_sites = 225
[[layer]]
kind = "fc"
width = 10
activation = "linear"
"#,
        )
        .unwrap();
        assert_eq!(input_base_case(&conv).h_hat, Some(0.0));
    }

    #[test]
    fn first_step_moments_from_standardized_input() {
        // Gamma_1 = sigma_b^2 + sigma_w^2, Gamma_tilde_1 = sigma_b^2
        let p = forward_step_fc_vanilla(1.0, 0.0, &init(2.0, 0.5), 1).unwrap();
        assert_eq!(p.gamma_cap, 2.5);
        assert_eq!(p.gamma_tilde, 0.5);
    }

    #[test]
    fn vanilla_step_uncorrelated_case() {
        let p = forward_step_fc_vanilla(1.0, 0.0, &init(2.0, 0.0), 1).unwrap();
        assert_eq!(p.gamma_cap, 2.0);
        assert_eq!(p.gamma_tilde, 0.0);
        assert_eq!(p.h, 1.0);
        assert!((p.h_tilde - 1.0 / PI).abs() < 1e-15, "h_tilde = {}", p.h_tilde);
    }

    #[test]
    fn vanilla_step_fully_correlated_collapses_to_h() {
        let p = forward_step_fc_vanilla(0.4, 0.4, &init(2.0, 0.5), 2).unwrap();
        assert_eq!(p.gamma_cap, p.gamma_tilde);
        assert_eq!(p.h_tilde, p.h);
    }

    #[test]
    fn vanilla_step_matches_gaussian_quadrature_oracle() {
        // E[relu(a) relu(b)] for cov [[1.5, 0.7], [0.7, 1.5]] evaluated with
        // 600-node Gauss-Legendre quadrature over the positive quadrant.
        const QUADRATURE: f64 = 0.4402337182932879;
        let p = forward_step_fc_vanilla(0.5, 0.1, &init(2.0, 0.5), 2).unwrap();
        assert_eq!(p.gamma_cap, 1.5);
        assert_eq!(p.gamma_tilde, 0.7);
        assert!(
            ((p.h_tilde - QUADRATURE) / QUADRATURE).abs() < 1e-12,
            "h_tilde = {}",
            p.h_tilde
        );
    }

    #[test]
    fn bn_step_moments_depend_only_on_gamma() {
        let p = forward_step_fc_bn(1.0, 0.0, &init(2.0, 0.5), 1.0, 1).unwrap();
        assert_eq!(p.h, 0.5);
        assert!((p.h_tilde - 1.0 / (2.0 * PI)).abs() < 1e-15);
        let p2 = forward_step_fc_bn(0.77, 0.3, &init(1.3, 0.01), 2.0, 2).unwrap();
        assert_eq!(p2.h, 2.0);
        assert!((p2.h_tilde - 2.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn backward_vanilla_criticality_preserves_delta() {
        let cur = forward_step_fc_vanilla(1.0, 0.0, &init(2.0, 0.0), 1).unwrap();
        let b = backward_step_fc((1.0, 1.0), &cur, &init(2.0, 0.0), false, 1.0, 1).unwrap();
        assert_eq!(b.delta, 1.0);
        // c = 0: delta_tilde = sigma_w^2/(2 pi) * pi/2 = 0.5
        assert!((b.delta_tilde - 0.5).abs() < 1e-15);
    }

    #[test]
    fn backward_bn_divides_by_gamma_cap() {
        let cur = ForwardParams {
            gamma_cap: 1.5,
            gamma_tilde: 0.5,
            gamma_hat: None,
            h: 0.5,
            h_tilde: 0.16,
            h_hat: None,
            c_tilde: 1.0 / 3.0,
            c_hat: None,
        };
        let b = backward_step_fc((1.0, 1.0), &cur, &init(2.0, 0.5), true, 1.0, 2).unwrap();
        assert!((b.delta - 2.0 / 3.0).abs() < 1e-15);
        assert!((b.delta_tilde - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn backward_conv_bn_hat_component() {
        let cur = ForwardParams {
            gamma_cap: 1.5,
            gamma_tilde: 0.5,
            gamma_hat: Some(0.5),
            h: 0.5,
            h_tilde: 0.16,
            h_hat: Some(0.16),
            c_tilde: 1.0 / 3.0,
            c_hat: Some(1.0 / 3.0),
        };
        let b =
            backward_step_conv((1.0, 1.0, Some(1.0)), &cur, &init(2.0, 0.5), true, 1.0, 2).unwrap();
        assert!((b.delta_hat.unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn backward_conv_vanilla_hat_limits() {
        let mk = |c_hat| ForwardParams {
            gamma_cap: 2.0,
            gamma_tilde: 2.0 * c_hat,
            gamma_hat: Some(2.0 * c_hat),
            h: 1.0,
            h_tilde: 0.3,
            h_hat: Some(0.3),
            c_tilde: c_hat,
            c_hat: Some(c_hat),
        };
        // fully correlated sites: hat rule coincides with the plain rule
        let b1 = backward_step_conv(
            (1.0, 1.0, Some(1.0)),
            &mk(1.0),
            &init(2.0, 0.0),
            false,
            1.0,
            1,
        )
        .unwrap();
        assert!((b1.delta_hat.unwrap() - b1.delta).abs() < 1e-15);
        // uncorrelated sites: the hat signal halves per layer at sigma_w^2 = 2
        let b0 = backward_step_conv(
            (1.0, 1.0, Some(1.0)),
            &mk(0.0),
            &init(2.0, 0.0),
            false,
            1.0,
            1,
        )
        .unwrap();
        assert!((b0.delta_hat.unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn profile_reference_bn_values() {
        let profile = run_profile(&paper_fc_bn(1.0)).unwrap();
        let l2 = &profile.layers[1];
        assert!((l2.gamma_cap - 1.5).abs() < 1e-15);
        assert!((l2.gamma_tilde - (0.5 + 1.0 / PI)).abs() < 1e-15);
        let last = profile.layers.last().unwrap();
        assert_eq!((last.delta, last.delta_tilde), (1.0, 1.0));
        assert_eq!(profile.len(), 5);
    }

    #[test]
    fn profile_critical_vanilla_fixed_point() {
        let mut spec = paper_fc_bn(1.0).without_batch_norm();
        spec.init.sigma_b_sq = 0.0;
        let profile = run_profile(&spec).unwrap();
        for (idx, p) in profile.layers.iter().enumerate() {
            assert!((p.gamma_cap - 2.0).abs() < 1e-12, "layer {idx}");
            assert!((p.delta - 1.0).abs() < 1e-12, "layer {idx}");
        }
    }

    #[test]
    fn profile_rejects_nonzero_shift() {
        let mut spec = paper_fc_bn(1.0);
        spec.layers[0].beta = 0.1;
        let err = run_profile(&spec).unwrap_err();
        assert!(err.to_string().contains("normalization shift"));
    }

    #[test]
    fn bracket_endpoints_are_exact() {
        assert_eq!(relu_pair_bracket(0.0), 1.0);
        assert_eq!(relu_pair_bracket(1.0), PI);
        assert_eq!(step_pair_factor(0.0), PI / 2.0);
        assert_eq!(step_pair_factor(1.0), PI);
    }

    #[test]
    fn gamma_scaling_is_exact() {
        for gamma in [0.3, 0.9, 1.7] {
            let a = forward_step_fc_bn(0.8, 0.2, &init(2.0, 0.5), gamma, 2).unwrap();
            let b = forward_step_fc_bn(0.8, 0.2, &init(2.0, 0.5), 2.0 * gamma, 2).unwrap();
            assert_eq!(b.h, 4.0 * a.h);
            assert_eq!(b.h_tilde, 4.0 * a.h_tilde);
        }
    }

    #[test]
    fn csv_has_input_row_and_empty_hat_columns_for_dense() {
        let profile = run_profile(&paper_fc_bn(1.0)).unwrap();
        let csv = profile_csv(&profile);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "layer,Gamma,Gamma_tilde,Gamma_hat,H,H_tilde,H_hat,Delta,Delta_tilde,Delta_hat"
        );
        assert_eq!(lines.next().unwrap(), "0,,,,1,0,,,,");
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.lines().nth(2).unwrap().ends_with(','), "dense rows leave hat empty");
    }

    #[test]
    fn input_dim_units() {
        assert_eq!(InputDim::Dense(784).units(), 784);
        assert_eq!(
            InputDim::Conv {
                channels: 3,
                spatial_sites: 1024
            }
            .units(),
            3072
        );
    }
}
