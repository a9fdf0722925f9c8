//! Model configuration.

use std::collections::BTreeMap;

use super::ModelError;

/// How the final affine layers of the prior, posterior and contribution
/// networks start out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Zeros: the untrained model is exactly standard normal everywhere.
    ZeroHeads,
    /// Small random weights, for gradient checks on a non-trivial model.
    Random,
}

impl InitScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            InitScheme::ZeroHeads => "zero-heads",
            InitScheme::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero-heads" => Some(InitScheme::ZeroHeads),
            "random" => Some(InitScheme::Random),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Image side length; a power of two.
    pub resolution: usize,
    /// Stochastic layers per scale, one entry per scale from `1×1` upwards.
    pub layers_per_scale: Vec<usize>,
    /// Multiplier on 128 outer / 64 inner residual channels.
    pub width_factor: f64,
    /// Residual blocks per scale in the bottom-up path and each head.
    pub blocks_per_scale: usize,
    pub init: InitScheme,
    pub seed: u64,
}

impl ModelConfig {
    /// `layers` stochastic layers at every scale of a `resolution²` image.
    pub fn uniform(resolution: usize, layers: usize) -> Self {
        let scales = resolution.max(1).trailing_zeros() as usize + 1;
        Self {
            resolution,
            layers_per_scale: vec![layers; scales],
            width_factor: 0.25,
            blocks_per_scale: 3,
            init: InitScheme::ZeroHeads,
            seed: 0,
        }
    }

    pub fn num_scales(&self) -> usize {
        self.layers_per_scale.len()
    }

    /// Total number of stochastic layers `L`.
    pub fn depth(&self) -> usize {
        self.layers_per_scale.iter().sum()
    }

    pub fn outer_channels(&self) -> usize {
        ((128.0 * self.width_factor).round() as usize).max(2)
    }

    pub fn inner_channels(&self) -> usize {
        ((64.0 * self.width_factor).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.resolution;
        if n == 0 || !n.is_power_of_two() {
            return Err(ModelError::Config(format!(
                "resolution {n} is not a power of two"
            )));
        }
        let scales = n.trailing_zeros() as usize + 1;
        if self.layers_per_scale.len() != scales {
            return Err(ModelError::Config(format!(
                "resolution {n} has {scales} scales but {} layer counts were given",
                self.layers_per_scale.len()
            )));
        }
        if self.layers_per_scale.contains(&0) {
            return Err(ModelError::Config(
                "every scale needs at least one layer".into(),
            ));
        }
        if !(self.width_factor > 0.0 && self.width_factor.is_finite()) {
            return Err(ModelError::Config(format!(
                "width factor {} must be positive",
                self.width_factor
            )));
        }
        if self.blocks_per_scale == 0 {
            return Err(ModelError::Config(
                "blocks_per_scale must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `key=value` pairs, as stored in checkpoint headers.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let layers: Vec<String> = self.layers_per_scale.iter().map(usize::to_string).collect();
        vec![
            ("model.resolution".into(), self.resolution.to_string()),
            ("model.layers_per_scale".into(), layers.join(",")),
            (
                "model.width_factor".into(),
                format!("{:?}", self.width_factor),
            ),
            (
                "model.blocks_per_scale".into(),
                self.blocks_per_scale.to_string(),
            ),
            ("model.init".into(), self.init.as_str().into()),
            ("model.seed".into(), self.seed.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, ModelError> {
        let get = |k: &str| {
            pairs
                .get(k)
                .ok_or_else(|| ModelError::Config(format!("missing key {k}")))
        };
        let bad = |k: &str| ModelError::Config(format!("invalid value for {k}"));
        let resolution = get("model.resolution")?
            .parse()
            .map_err(|_| bad("model.resolution"))?;
        let layers_per_scale = parse_layers(get("model.layers_per_scale")?, resolution)
            .ok_or_else(|| bad("model.layers_per_scale"))?;
        let config = Self {
            resolution,
            layers_per_scale,
            width_factor: get("model.width_factor")?
                .parse()
                .map_err(|_| bad("model.width_factor"))?,
            blocks_per_scale: get("model.blocks_per_scale")?
                .parse()
                .map_err(|_| bad("model.blocks_per_scale"))?,
            init: InitScheme::parse(get("model.init")?).ok_or_else(|| bad("model.init"))?,
            seed: get("model.seed")?.parse().map_err(|_| bad("model.seed"))?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Parses either one count for every scale (`"5"`) or a comma list.
pub fn parse_layers(s: &str, resolution: usize) -> Option<Vec<usize>> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<_>>()?;
    if parts.len() == 1 && resolution.is_power_of_two() {
        Some(vec![parts[0]; resolution.trailing_zeros() as usize + 1])
    } else {
        Some(parts)
    }
}
