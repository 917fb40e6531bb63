//! Declarative network description consumed by every other module.
//!
//! An architecture is an ordered list of layer transforms plus the
//! initialization ensemble (weight/bias variances, optimizer momentum).
//! Configs are TOML documents; see `configs/` in the repository root for the
//! canonical examples.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    FullyConnected,
    Convolutional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Linear,
}

/// One layer transform.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Incoming units: previous width for dense layers, previous channels
    /// times `kernel_sites` for convolutional layers.
    pub fan_in: usize,
    /// Units (dense) or channels (convolutional) produced by this layer.
    pub width: usize,
    /// Kernel site count |F| (9 for a 3x3 kernel). Convolutional only.
    pub kernel_sites: Option<usize>,
    /// Output spatial site count |K|. Convolutional only.
    pub spatial_sites: Option<usize>,
    pub batch_norm: bool,
    /// Normalization scale; ignored when `batch_norm` is false.
    pub gamma: f64,
    /// Normalization shift. Accepted by the parser but the recursion engine
    /// only supports 0.
    pub beta: f64,
    pub activation: Activation,
}

/// Input shape: a flat vector, or channels x spatial sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputDim {
    Dense(usize),
    Conv { channels: usize, spatial_sites: usize },
}

impl InputDim {
    pub fn units(&self) -> usize {
        match *self {
            InputDim::Dense(n) => n,
            InputDim::Conv {
                channels,
                spatial_sites,
            } => channels * spatial_sites,
        }
    }
}

/// Random initialization ensemble and optimizer momentum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    /// Weight variance numerator: each weight has variance sigma_w_sq / fan_in.
    pub sigma_w_sq: f64,
    /// Bias variance.
    pub sigma_b_sq: f64,
    /// Momentum coefficient of the gradient-descent update.
    pub momentum: f64,
}

/// A full network description. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub layers: Vec<LayerSpec>,
    pub init: InitSpec,
    pub input: InputDim,
}

/// A validation finding: which layer (if any) and which rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    /// 1-based layer index; `None` for whole-spec rules.
    pub layer: Option<usize>,
    pub rule: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.layer {
            Some(l) => write!(f, "layer {}: {}", l, self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

impl ArchSpec {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| l.batch_norm)
    }

    pub fn is_conv(&self) -> bool {
        self.layers.iter().any(|l| l.kind == LayerKind::Convolutional)
    }

    /// Output dimension of the network.
    pub fn output_dim(&self) -> usize {
        let last = self.layers.last().expect("spec has layers");
        match last.kind {
            LayerKind::FullyConnected => last.width,
            LayerKind::Convolutional => last.width * last.spatial_sites.unwrap_or(1),
        }
    }

    /// Copy with the given scale applied to every normalized layer.
    pub fn with_gamma(&self, gamma: f64) -> ArchSpec {
        let mut spec = self.clone();
        for layer in &mut spec.layers {
            if layer.batch_norm {
                layer.gamma = gamma;
            }
        }
        spec
    }

    /// Copy with normalization removed everywhere.
    pub fn without_batch_norm(&self) -> ArchSpec {
        let mut spec = self.clone();
        for layer in &mut spec.layers {
            layer.batch_norm = false;
        }
        spec
    }

    /// Copy with a different weight variance.
    pub fn with_sigma_w_sq(&self, sigma_w_sq: f64) -> ArchSpec {
        let mut spec = self.clone();
        spec.init.sigma_w_sq = sigma_w_sq;
        spec
    }

    /// Copy with every hidden dense layer resized to `width` (fan-ins are
    /// recomputed). Convolutional layers are left untouched.
    pub fn with_hidden_width(&self, width: usize) -> ArchSpec {
        let mut spec = self.clone();
        let last = spec.layers.len() - 1;
        for l in 0..spec.layers.len() {
            if l < last
                && spec.layers[l].kind == LayerKind::FullyConnected
                && spec.layers[l].activation == Activation::ReLU
            {
                spec.layers[l].width = width;
            }
        }
        recompute_fan_in(&mut spec);
        spec
    }
}

/// Units leaving layer `l` (1-based); `l = 0` is the input.
pub fn layer_output_units(spec: &ArchSpec, l: usize) -> usize {
    if l == 0 {
        return spec.input.units();
    }
    let layer = &spec.layers[l - 1];
    match layer.kind {
        LayerKind::FullyConnected => layer.width,
        LayerKind::Convolutional => layer.width * layer.spatial_sites.unwrap_or(0),
    }
}

fn expected_fan_in(spec: &ArchSpec, l: usize) -> usize {
    let layer = &spec.layers[l - 1];
    let (prev_width, prev_sites) = if l == 1 {
        match spec.input {
            InputDim::Dense(n) => (n, None),
            InputDim::Conv {
                channels,
                spatial_sites,
            } => (channels, Some(spatial_sites)),
        }
    } else {
        let prev = &spec.layers[l - 2];
        (prev.width, prev.spatial_sites)
    };
    match layer.kind {
        // a conv layer sees prev channels x its own kernel sites
        LayerKind::Convolutional => prev_width * layer.kernel_sites.unwrap_or(0),
        // a dense layer after a conv layer consumes the flattened map
        LayerKind::FullyConnected => prev_width * prev_sites.unwrap_or(1),
    }
}

fn recompute_fan_in(spec: &mut ArchSpec) {
    for l in 1..=spec.layers.len() {
        spec.layers[l - 1].fan_in = expected_fan_in(spec, l);
    }
}

/// Check every structural invariant; an empty list means the spec is valid.
pub fn validate_dims(spec: &ArchSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |layer: Option<usize>, rule: String| out.push(Diagnostic { layer, rule });

    if spec.layers.len() < 2 {
        push(None, "network needs at least 2 layers".into());
        return out;
    }
    if !(spec.init.sigma_w_sq > 0.0) {
        push(None, "sigma_w_sq must be positive".into());
    }
    if spec.init.sigma_b_sq < 0.0 {
        push(None, "sigma_b_sq must be nonnegative".into());
    }
    if !(0.0..1.0).contains(&spec.init.momentum) {
        push(None, "momentum must lie in [0, 1)".into());
    }
    match spec.input {
        InputDim::Dense(n) if n == 0 => push(None, "input dim must be positive".into()),
        InputDim::Conv {
            channels,
            spatial_sites,
        } if channels == 0 || spatial_sites == 0 => {
            push(None, "input channels and spatial sites must be positive".into())
        }
        _ => {}
    }

    for (idx, layer) in spec.layers.iter().enumerate() {
        let l = idx + 1;
        if layer.width == 0 {
            push(Some(l), "width must be positive".into());
        }
        match layer.kind {
            LayerKind::Convolutional => {
                if layer.kernel_sites.is_none() {
                    push(Some(l), "convolutional layer missing kernel_sites".into());
                }
                if layer.spatial_sites.is_none() {
                    push(Some(l), "convolutional layer missing spatial_sites".into());
                }
                if layer.kernel_sites == Some(0) || layer.spatial_sites == Some(0) {
                    push(Some(l), "kernel_sites and spatial_sites must be positive".into());
                }
            }
            LayerKind::FullyConnected => {
                if layer.kernel_sites.is_some() || layer.spatial_sites.is_some() {
                    push(
                        Some(l),
                        "kernel_sites/spatial_sites only apply to convolutional layers".into(),
                    );
                }
            }
        }
        if layer.batch_norm && !(layer.gamma > 0.0) {
            push(Some(l), "gamma must be positive when batch_norm is enabled".into());
        }
        let expected = expected_fan_in(spec, l);
        if expected != 0 && layer.fan_in != expected {
            push(
                Some(l),
                format!(
                    "fan_in {} does not match layer {} output (expected {})",
                    layer.fan_in,
                    l - 1,
                    expected
                ),
            );
        }
        // conv after dense has no spatial structure to convolve over
        if layer.kind == LayerKind::Convolutional && l > 1 {
            let prev = &spec.layers[idx - 1];
            if prev.kind == LayerKind::FullyConnected {
                push(Some(l), "convolutional layer cannot follow a dense layer".into());
            }
        }
    }

    let last = spec.layers.len();
    let final_layer = &spec.layers[last - 1];
    if final_layer.activation != Activation::Linear || final_layer.batch_norm {
        push(Some(last), "final layer must be linear without BatchNorm".into());
    }
    out
}

/// Output spatial sites of a square valid (no padding) convolution.
///
/// `input_sites` and `kernel_sites` must be perfect squares; the kernel must
/// fit and step evenly enough to cover the map.
pub fn conv_spatial_sites(input_sites: usize, kernel_sites: usize, stride: usize) -> Result<usize> {
    let in_side = int_sqrt(input_sites).ok_or_else(|| {
        Error::Structural(format!("input_sites {input_sites} is not a perfect square"))
    })?;
    let k_side = int_sqrt(kernel_sites).ok_or_else(|| {
        Error::Structural(format!("kernel_sites {kernel_sites} is not a perfect square"))
    })?;
    if stride == 0 {
        return Err(Error::Structural("stride must be positive".into()));
    }
    if k_side > in_side {
        return Err(Error::Structural(format!(
            "kernel side {k_side} exceeds input side {in_side}"
        )));
    }
    let out_side = (in_side - k_side) / stride + 1;
    Ok(out_side * out_side)
}

pub(crate) fn int_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

// ---------------------------------------------------------------------------
// TOML schema
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RawConfig {
    input: RawInput,
    init: RawInit,
    #[serde(rename = "layer")]
    layers: Vec<RawLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawInput {
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spatial_sites: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawInit {
    sigma_w_sq: f64,
    sigma_b_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    momentum: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawLayer {
    kind: String,
    width: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel_sites: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spatial_sites: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_norm: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    activation: Option<String>,
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Parse and fully validate a TOML architecture document.
///
/// Defaults: `momentum = 0.9`, `beta = 0`, `batch_norm = false`, `gamma = 1`,
/// `activation = "relu"`. Fan-ins are derived from adjacency.
pub fn parse_arch(text: &str) -> Result<ArchSpec> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| config_err("<document>", e.to_string()))?;

    let input = match (raw.input.dim, raw.input.channels, raw.input.spatial_sites) {
        (Some(d), None, None) => InputDim::Dense(d),
        (None, Some(c), Some(k)) => InputDim::Conv {
            channels: c,
            spatial_sites: k,
        },
        _ => {
            return Err(config_err(
                "input",
                "provide either `dim` or both `channels` and `spatial_sites`",
            ))
        }
    };

    let init = InitSpec {
        sigma_w_sq: raw.init.sigma_w_sq,
        sigma_b_sq: raw.init.sigma_b_sq,
        momentum: raw.init.momentum.unwrap_or(0.9),
    };

    let mut layers = Vec::with_capacity(raw.layers.len());
    for (idx, rl) in raw.layers.iter().enumerate() {
        let field = |name: &str| format!("layer[{idx}].{name}");
        let kind = match rl.kind.as_str() {
            "fc" | "dense" | "fully_connected" => LayerKind::FullyConnected,
            "conv" | "convolutional" => LayerKind::Convolutional,
            other => {
                return Err(config_err(
                    &field("kind"),
                    format!("unknown layer kind `{other}` (expected `fc` or `conv`)"),
                ))
            }
        };
        let activation = match rl.activation.as_deref() {
            None | Some("relu") => Activation::ReLU,
            Some("linear") => Activation::Linear,
            Some(other) => {
                return Err(config_err(
                    &field("activation"),
                    format!("unknown activation `{other}` (expected `relu` or `linear`)"),
                ))
            }
        };
        layers.push(LayerSpec {
            kind,
            fan_in: 0, // filled below
            width: rl.width,
            kernel_sites: rl.kernel_sites,
            spatial_sites: rl.spatial_sites,
            batch_norm: rl.batch_norm.unwrap_or(false),
            gamma: rl.gamma.unwrap_or(1.0),
            beta: rl.beta.unwrap_or(0.0),
            activation,
        });
    }

    let mut spec = ArchSpec {
        layers,
        init,
        input,
    };
    recompute_fan_in(&mut spec);

    let diags = validate_dims(&spec);
    if !diags.is_empty() {
        let joined = diags
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(config_err("<document>", joined));
    }
    Ok(spec)
}

/// Serialize back to the TOML schema accepted by [`parse_arch`].
pub fn serialize_arch(spec: &ArchSpec) -> String {
    let raw = RawConfig {
        input: match spec.input {
            InputDim::Dense(d) => RawInput {
                dim: Some(d),
                channels: None,
                spatial_sites: None,
            },
            InputDim::Conv {
                channels,
                spatial_sites,
            } => RawInput {
                dim: None,
                channels: Some(channels),
                spatial_sites: Some(spatial_sites),
            },
        },
        init: RawInit {
            sigma_w_sq: spec.init.sigma_w_sq,
            sigma_b_sq: spec.init.sigma_b_sq,
            momentum: Some(spec.init.momentum),
        },
        layers: spec
            .layers
            .iter()
            .map(|l| RawLayer {
                kind: match l.kind {
                    LayerKind::FullyConnected => "fc".into(),
                    LayerKind::Convolutional => "conv".into(),
                },
                width: l.width,
                kernel_sites: l.kernel_sites,
                spatial_sites: l.spatial_sites,
                batch_norm: Some(l.batch_norm),
                gamma: Some(l.gamma),
                beta: Some(l.beta),
                activation: Some(match l.activation {
                    Activation::ReLU => "relu".into(),
                    Activation::Linear => "linear".into(),
                }),
            })
            .collect(),
    };
    toml::to_string(&raw).expect("arch specs serialize cleanly")
}
