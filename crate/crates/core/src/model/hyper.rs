use serde::{Deserialize, Serialize};

use crate::error::{HireError, Result};
use crate::inter::{AnchorPolicy, GateMode};
use crate::intra::EdgeNorm;
use crate::numcore::DType;

/// Which modality provides the queries that get enhanced and gated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Regions attend to words; the text is the global context.
    #[default]
    #[serde(rename = "i2t", alias = "image-to-text")]
    ImageToText,
    /// Words attend to regions; the image is the global context.
    #[serde(rename = "t2i", alias = "text-to-image")]
    TextToImage,
}

impl Direction {
    pub fn default_lambda(self) -> f64 {
        match self {
            Direction::ImageToText => 4.0,
            Direction::TextToImage => 9.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Direction::ImageToText => "i2t",
            Direction::TextToImage => "t2i",
        }
    }
}

/// Order of the intra-modal (A: self-attention 1, graph 2) and inter-modal
/// (B: local-local 3, local-global 4) stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ordering {
    #[default]
    #[serde(rename = "A12B34")]
    A12B34,
    /// Inter-modal stages on projected features, intra-modal afterwards.
    #[serde(rename = "B34A12")]
    B34A12,
    /// Graph reasoning before self-attention.
    #[serde(rename = "A21B34")]
    A21B34,
    /// Local-global gating before local-local attention.
    #[serde(rename = "A12B43")]
    A12B43,
}

impl Ordering {
    pub const ALL: [Ordering; 4] = [Ordering::A12B34, Ordering::B34A12, Ordering::A21B34, Ordering::A12B43];

    pub fn label(self) -> &'static str {
        match self {
            Ordering::A12B34 => "A(12)B(34)",
            Ordering::B34A12 => "B(34)A(12)",
            Ordering::A21B34 => "A(21)B(34)",
            Ordering::A12B43 => "A(12)B(43)",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Negatives {
    /// Every violating negative contributes.
    #[default]
    Sum,
    /// Only the largest violation per query.
    Hardest,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    #[default]
    Mean,
    Max,
}

/// Component switches; a disabled stage becomes a pass-through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Components {
    pub vsa: bool,
    pub tsa: bool,
    pub vssg: bool,
    pub llii: bool,
    pub lgii: bool,
}

impl Default for Components {
    fn default() -> Self {
        Components {
            vsa: true,
            tsa: true,
            vssg: true,
            llii: true,
            lgii: true,
        }
    }
}

impl Components {
    pub const NAMES: [&'static str; 5] = ["vsa", "tsa", "vssg", "llii", "lgii"];

    pub fn without(name: &str) -> Result<Self> {
        let mut c = Components::default();
        match name {
            "vsa" => c.vsa = false,
            "tsa" => c.tsa = false,
            "vssg" => c.vssg = false,
            "llii" => c.llii = false,
            "lgii" => c.lgii = false,
            other => return Err(HireError::Config(format!("unknown component {other:?}"))),
        }
        Ok(c)
    }

    pub fn disabled(&self) -> Vec<&'static str> {
        let flags = [self.vsa, self.tsa, self.vssg, self.llii, self.lgii];
        Self::NAMES
            .iter()
            .zip(flags)
            .filter(|(_, on)| !on)
            .map(|(n, _)| *n)
            .collect()
    }
}

/// Architecture and loss settings of one directional model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub direction: Direction,
    /// Joint-space width `D_v = D_t`.
    pub d_model: usize,
    /// Attention heads `L`.
    pub heads: usize,
    /// Feed-forward hidden width; `None` means `d_model`.
    pub d_ff: Option<usize>,
    /// Width of the edge maps `Wφ`, `Wϕ`.
    pub d_map: usize,
    /// Attention smoothing; `None` picks the direction default.
    pub lambda: Option<f64>,
    /// IoU threshold for spatial edges.
    pub mu: f64,
    pub margin: f64,
    pub edge_norm: EdgeNorm,
    pub anchor: AnchorPolicy,
    pub gate: GateMode,
    pub negatives: Negatives,
    pub add_pool: Pool,
    /// Count masked words in the pooled sentence vector.
    pub include_masked_in_mean: bool,
    pub bias: bool,
    pub ordering: Ordering,
    pub components: Components,
    pub dtype: DType,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            direction: Direction::ImageToText,
            d_model: 1024,
            heads: 16,
            d_ff: None,
            d_map: 256,
            lambda: None,
            mu: 0.4,
            margin: 0.2,
            edge_norm: EdgeNorm::Softmax,
            anchor: AnchorPolicy::Literal,
            gate: GateMode::Scalar,
            negatives: Negatives::Sum,
            add_pool: Pool::Mean,
            include_masked_in_mean: false,
            bias: false,
            ordering: Ordering::A12B34,
            components: Components::default(),
            dtype: DType::F32,
        }
    }
}

impl HyperParams {
    /// Small widths used by gradient checks and the synthetic suite.
    pub fn toy(direction: Direction) -> Self {
        HyperParams {
            direction,
            d_model: 16,
            heads: 2,
            d_map: 8,
            ..HyperParams::default()
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| self.direction.default_lambda())
    }

    pub fn d_ff(&self) -> usize {
        self.d_ff.unwrap_or(self.d_model)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HireError::Config(m));
        if self.d_model == 0 || self.d_map == 0 || self.d_ff() == 0 {
            return bad("d_model, d_map and d_ff must be positive".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("heads ({}) must divide d_model ({})", self.heads, self.d_model));
        }
        if !(self.lambda() > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda()));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return bad(format!("mu must lie in (0, 1), got {}", self.mu));
        }
        if !(self.margin >= 0.0) {
            return bad(format!("margin must be non-negative, got {}", self.margin));
        }
        Ok(())
    }
}
