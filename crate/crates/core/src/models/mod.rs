//! Declarative network architectures, their validation, parameter builders,
//! and checkpoint serialization.

mod checkpoint;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use network::{build_model, Network, Param, TemporalRun};

use serde::{Deserialize, Serialize};

use crate::error::Error;

fn default_stride() -> usize {
    1
}

fn default_v_th() -> f64 {
    crate::spiking::DEFAULT_V_TH
}

fn default_alpha() -> f64 {
    crate::spiking::SurrogateConfig::default().alpha
}

/// One layer of an [`ArchitectureSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Batchnorm,
    Pool {
        window: usize,
    },
    Flatten,
    Fc {
        out_features: usize,
    },
    Dropout {
        p: f64,
    },
    Spike,
    Relu,
}

impl LayerSpec {
    fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Batchnorm => "batchnorm",
            LayerSpec::Pool { .. } => "pool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Spike => "spike",
            LayerSpec::Relu => "relu",
        }
    }
}

/// Declarative topology: an ordered layer list from `input_shape` down to
/// `num_classes` outputs. `timesteps` is present exactly for spiking
/// networks, which must contain at least one spike layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub name: String,
    /// (channels, height, width) of one input frame after preprocessing.
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timesteps: Option<usize>,
    /// Firing threshold for spike layers.
    #[serde(default = "default_v_th")]
    pub v_th: f64,
    /// Sigmoid slope of the surrogate derivative.
    #[serde(default = "default_alpha")]
    pub surrogate_alpha: f64,
    pub layers: Vec<LayerSpec>,
}

/// Activation/feature shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Spatial { c: usize, h: usize, w: usize },
    Flat { features: usize },
}

impl Stage {
    pub fn numel(&self) -> usize {
        match *self {
            Stage::Spatial { c, h, w } => c * h * w,
            Stage::Flat { features } => features,
        }
    }
}

/// Shape-checked view of one layer: its input and output stages plus the
/// crop a floor-division pool applies before the strict pooling op.
#[derive(Debug, Clone)]
pub struct LayerPlan {
    pub index: usize,
    pub spec: LayerSpec,
    pub input: Stage,
    pub output: Stage,
    /// (h, w) to crop to before pooling, when extents do not divide.
    pub pre_crop: Option<(usize, usize)>,
}

fn layer_err(index: usize, spec: &LayerSpec, msg: String) -> Error {
    Error::Validation(format!("layer {} ({}): {}", index, spec.kind_name(), msg))
}

/// Validates a spec and returns the per-layer shape plan.
///
/// Checks that shapes chain from `input_shape` to `num_classes`, that
/// spatial ops precede flatten and dense ops follow it, and that the
/// spiking marker (`timesteps`) agrees with the presence of spike layers.
pub fn plan(spec: &ArchitectureSpec) -> Result<Vec<LayerPlan>, Error> {
    let (c0, h0, w0) = spec.input_shape;
    if c0 == 0 || h0 == 0 || w0 == 0 {
        return Err(Error::Validation(format!(
            "input shape {:?} has a zero extent",
            spec.input_shape
        )));
    }
    if spec.num_classes < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 classes, got {}",
            spec.num_classes
        )));
    }
    if let Some(t) = spec.timesteps {
        if t == 0 {
            return Err(Error::Validation("timesteps must be at least 1".into()));
        }
    }
    if spec.v_th <= 0.0 || !spec.v_th.is_finite() {
        return Err(Error::Validation(format!(
            "firing threshold must be positive, got {}",
            spec.v_th
        )));
    }
    if spec.surrogate_alpha <= 0.0 || !spec.surrogate_alpha.is_finite() {
        return Err(Error::Validation(format!(
            "surrogate slope must be positive, got {}",
            spec.surrogate_alpha
        )));
    }

    let mut stage = Stage::Spatial {
        c: c0,
        h: h0,
        w: w0,
    };
    let mut plans = Vec::with_capacity(spec.layers.len());
    let mut spikes = 0usize;

    for (index, layer) in spec.layers.iter().enumerate() {
        let input = stage;
        let mut pre_crop = None;
        let output = match (layer, input) {
            (
                &LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                },
                Stage::Spatial { c: _, h, w },
            ) => {
                if out_channels == 0 || kernel == 0 {
                    return Err(layer_err(index, layer, "channels and kernel must be positive".into()));
                }
                if stride == 0 {
                    return Err(layer_err(index, layer, "stride must be at least 1".into()));
                }
                if kernel > h + 2 * padding || kernel > w + 2 * padding {
                    return Err(layer_err(
                        index,
                        layer,
                        format!("kernel {kernel} exceeds padded input {h}x{w} (pad {padding})"),
                    ));
                }
                Stage::Spatial {
                    c: out_channels,
                    h: (h + 2 * padding - kernel) / stride + 1,
                    w: (w + 2 * padding - kernel) / stride + 1,
                }
            }
            (LayerSpec::Batchnorm, Stage::Spatial { .. }) => input,
            (&LayerSpec::Pool { window }, Stage::Spatial { c, h, w }) => {
                if window < 2 {
                    return Err(layer_err(index, layer, "window must be at least 2".into()));
                }
                if h < window || w < window {
                    return Err(layer_err(
                        index,
                        layer,
                        format!("window {window} exceeds input {h}x{w}"),
                    ));
                }
                // Floor semantics: trailing rows/columns are dropped first.
                let (ch, cw) = (h - h % window, w - w % window);
                if (ch, cw) != (h, w) {
                    pre_crop = Some((ch, cw));
                }
                Stage::Spatial {
                    c,
                    h: ch / window,
                    w: cw / window,
                }
            }
            (LayerSpec::Flatten, Stage::Spatial { c, h, w }) => Stage::Flat { features: c * h * w },
            (&LayerSpec::Fc { out_features }, Stage::Flat { .. }) => {
                if out_features == 0 {
                    return Err(layer_err(index, layer, "output width must be positive".into()));
                }
                Stage::Flat {
                    features: out_features,
                }
            }
            (&LayerSpec::Dropout { p }, _) => {
                if !(0.0..1.0).contains(&p) {
                    return Err(layer_err(
                        index,
                        layer,
                        format!("rate must lie in [0,1), got {p}"),
                    ));
                }
                input
            }
            (LayerSpec::Spike, _) => {
                spikes += 1;
                input
            }
            (LayerSpec::Relu, _) => input,
            (l, Stage::Flat { .. }) => {
                return Err(layer_err(
                    index,
                    l,
                    "requires spatial input but the tensor was already flattened".into(),
                ));
            }
            (l, Stage::Spatial { .. }) => {
                return Err(layer_err(
                    index,
                    l,
                    "requires flattened input; insert a flatten layer first".into(),
                ));
            }
        };
        plans.push(LayerPlan {
            index,
            spec: layer.clone(),
            input,
            output,
            pre_crop,
        });
        stage = output;
    }

    match stage {
        Stage::Flat { features } if features == spec.num_classes => {}
        other => {
            return Err(Error::Validation(format!(
                "network must end with {} flat outputs, got {:?}",
                spec.num_classes, other
            )));
        }
    }
    if spec.timesteps.is_some() && spikes == 0 {
        return Err(Error::Validation(
            "a spiking network (timesteps set) needs at least one spike layer".into(),
        ));
    }
    if spec.timesteps.is_none() && spikes > 0 {
        return Err(Error::Validation(
            "spike layers require timesteps to be set".into(),
        ));
    }
    Ok(plans)
}

impl ArchitectureSpec {
    pub fn is_spiking(&self) -> bool {
        self.timesteps.is_some()
    }

    pub fn validate(&self) -> Result<(), Error> {
        plan(self).map(|_| ())
    }

    /// The same topology with spiking activations swapped for ReLU, used
    /// as the conventional baseline in operation counting.
    pub fn analog_twin(&self) -> ArchitectureSpec {
        let mut twin = self.clone();
        twin.name = format!("{}-analog", self.name);
        twin.timesteps = None;
        for layer in &mut twin.layers {
            if matches!(layer, LayerSpec::Spike) {
                *layer = LayerSpec::Relu;
            }
        }
        twin
    }

    /// Trainable scalar count implied by the layer list.
    pub fn param_count(&self) -> Result<usize, Error> {
        let plans = plan(self)?;
        let mut count = 0usize;
        for p in &plans {
            match (&p.spec, p.input) {
                (&LayerSpec::Conv { out_channels, kernel, .. }, Stage::Spatial { c, .. }) => {
                    count += out_channels * c * kernel * kernel + out_channels;
                }
                (LayerSpec::Batchnorm, Stage::Spatial { c, .. }) => {
                    count += 2 * c;
                }
                (&LayerSpec::Fc { out_features }, Stage::Flat { features }) => {
                    count += features * out_features + out_features;
                }
                _ => {}
            }
        }
        Ok(count)
    }

    /// Parses the structured-text config format.
    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        let spec: ArchitectureSpec =
            toml::from_str(text).map_err(|e| Error::Validation(format!("architecture config: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("architecture spec serializes")
    }
}

fn conv_block(out_channels: usize, activation: LayerSpec) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        },
        LayerSpec::Batchnorm,
        activation,
        LayerSpec::Pool { window: 2 },
    ]
}

fn conv_backbone(activation: fn() -> LayerSpec) -> Vec<LayerSpec> {
    let mut layers = conv_block(16, activation());
    layers.extend(conv_block(32, activation()));
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Fc { out_features: 64 });
    layers.push(activation());
    layers.push(LayerSpec::Fc { out_features: 11 });
    layers
}

/// Conventional CNN reference topology (ReLU activations).
pub fn default_cnn() -> ArchitectureSpec {
    ArchitectureSpec {
        name: "cnn".into(),
        input_shape: (1, 25, 25),
        num_classes: 11,
        timesteps: None,
        v_th: default_v_th(),
        surrogate_alpha: default_alpha(),
        layers: conv_backbone(|| LayerSpec::Relu),
    }
}

/// Spiking CNN: identical topology to [`default_cnn`] with IF spike layers
/// in place of ReLU.
pub fn default_scnn() -> ArchitectureSpec {
    ArchitectureSpec {
        name: "scnn".into(),
        input_shape: (1, 25, 25),
        num_classes: 11,
        timesteps: Some(crate::spiking::DEFAULT_TIMESTEPS),
        v_th: default_v_th(),
        surrogate_alpha: default_alpha(),
        layers: conv_backbone(|| LayerSpec::Spike),
    }
}

/// Spiking MLP: two hidden dense layers with dropout after each.
pub fn default_smlp() -> ArchitectureSpec {
    ArchitectureSpec {
        name: "smlp".into(),
        input_shape: (1, 25, 25),
        num_classes: 11,
        timesteps: Some(crate::spiking::DEFAULT_TIMESTEPS),
        v_th: default_v_th(),
        surrogate_alpha: default_alpha(),
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Fc { out_features: 320 },
            LayerSpec::Spike,
            LayerSpec::Dropout { p: 0.5 },
            LayerSpec::Fc { out_features: 256 },
            LayerSpec::Spike,
            LayerSpec::Dropout { p: 0.5 },
            LayerSpec::Fc { out_features: 11 },
        ],
    }
}

/// Looks up a built-in spec by name.
pub fn builtin_spec(name: &str) -> Option<ArchitectureSpec> {
    match name {
        "cnn" => Some(default_cnn()),
        "scnn" => Some(default_scnn()),
        "smlp" => Some(default_smlp()),
        _ => None,
    }
}
