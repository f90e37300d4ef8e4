use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Architecture variant: the full model, its ablations and baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    /// Shared extractor, branches, dynamic cross-stitch, cross-task
    /// attention, BiLSTMs, heads.
    Full,
    /// No shared network: each task owns a private copy of the shared convs.
    Nsn,
    /// No BiLSTM: heads read the time-pooled attended features.
    Nb,
    /// No attention: attention replaced by the identity.
    Na,
    /// Static cross-stitch: learned input-independent mixing per channel.
    Cs,
    /// Single-task CNN-BiLSTM-GRU tower per task, no sharing.
    Cbg,
}

pub const ALL_VARIANTS: [Variant; 6] = [Variant::Full, Variant::Nsn, Variant::Nb, Variant::Na, Variant::Cs, Variant::Cbg];

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "FULL",
            Self::Nsn => "NSN",
            Self::Nb => "NB",
            Self::Na => "NA",
            Self::Cs => "CS",
            Self::Cbg => "CBG",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_VARIANTS
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| config_err!("unknown model variant `{s}` (expected full, nsn, nb, na, cs or cbg)"))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
}

/// Complete architecture description. Every field is required when read
/// from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DystanConfig {
    pub in_channels: usize,
    pub seq_len: usize,
    pub shared_conv: Vec<ConvSpec>,
    pub branch_conv: ConvSpec,
    pub dcsu_hidden: usize,
    pub attention_heads: usize,
    pub lstm_hidden: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub num_sed: usize,
    pub num_soc: usize,
    pub variant: Variant,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for DystanConfig {
    fn default() -> Self {
        Self {
            in_channels: 13,
            seq_len: 100,
            shared_conv: vec![ConvSpec { filters: 64, kernel: 7 }, ConvSpec { filters: 64, kernel: 5 }],
            branch_conv: ConvSpec { filters: 128, kernel: 3 },
            dcsu_hidden: 64,
            attention_heads: 4,
            lstm_hidden: 128,
            head_hidden: 128,
            dropout: 0.4,
            num_sed: 4,
            num_soc: 3,
            variant: Variant::Full,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl DystanConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("seq_len", self.seq_len),
            ("dcsu_hidden", self.dcsu_hidden),
            ("attention_heads", self.attention_heads),
            ("lstm_hidden", self.lstm_hidden),
            ("head_hidden", self.head_hidden),
            ("num_sed", self.num_sed),
            ("num_soc", self.num_soc),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(config_err!("{name} must be positive"));
        }
        if self.shared_conv.is_empty() {
            return Err(config_err!("shared_conv needs at least one layer"));
        }
        for (i, c) in self.shared_conv.iter().chain([&self.branch_conv]).enumerate() {
            if c.filters == 0 || c.kernel % 2 == 0 {
                return Err(config_err!("conv layer {i}: filters must be positive and kernel odd, got {c:?}"));
            }
            if c.kernel > self.seq_len {
                return Err(config_err!("conv layer {i}: kernel {} longer than seq_len {}", c.kernel, self.seq_len));
            }
        }
        if self.branch_conv.filters % self.attention_heads != 0 {
            return Err(config_err!(
                "branch width {} not divisible by {} attention heads",
                self.branch_conv.filters,
                self.attention_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.bn_eps > 0.0) {
            return Err(config_err!("bn_eps must be positive, got {}", self.bn_eps));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(config_err!("bn_momentum must lie in [0, 1], got {}", self.bn_momentum));
        }
        Ok(())
    }

    /// Width of the pooled per-task embedding.
    pub fn embedding_dim(&self) -> usize {
        match self.variant {
            Variant::Nb => self.branch_conv.filters,
            Variant::Cbg => self.lstm_hidden,
            _ => 2 * self.lstm_hidden,
        }
    }
}
