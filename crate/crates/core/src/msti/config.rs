use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::checkpoint::config_hash;

/// Which attention paths a block uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Cardinal/radix grouping only; radix splits are averaged.
    Base,
    /// Spatial attention on each split, radix splits averaged.
    Spatial,
    /// Channel statistics + grouped FC radix attention, no spatial map.
    Temporal,
    /// Both.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Base,
        Variant::Spatial,
        Variant::Temporal,
        Variant::Full,
    ];

    pub fn spatial(self) -> bool {
        matches!(self, Variant::Spatial | Variant::Full)
    }

    pub fn temporal(self) -> bool {
        matches!(self, Variant::Temporal | Variant::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Spatial => "spatial",
            Variant::Temporal => "temporal",
            Variant::Full => "full",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::config(
                    "model.variant",
                    format!("unknown variant `{s}` (base|spatial|temporal|full)"),
                )
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub blocks: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MstiConfig {
    /// Input channels.
    pub channels: usize,
    /// Input window length.
    pub window: usize,
    pub num_classes: usize,
    /// Cardinality K.
    pub cardinality: usize,
    /// Radix R.
    pub radix: usize,
    pub stem_taps: usize,
    pub stem_channels: usize,
    /// The first block of every stage downsamples by 2.
    pub stages: Vec<Stage>,
    pub variant: Variant,
    /// Grouped-FC reduction ratio.
    #[serde(default = "default_reduction")]
    pub reduction: usize,
    #[serde(default = "default_min_hidden")]
    pub min_hidden: usize,
}

fn default_reduction() -> usize {
    4
}

fn default_min_hidden() -> usize {
    8
}

impl MstiConfig {
    /// Default architecture for a `channels x window` input.
    pub fn default_for(channels: usize, window: usize, num_classes: usize) -> Self {
        Self {
            channels,
            window,
            num_classes,
            cardinality: 2,
            radix: 2,
            stem_taps: 5,
            stem_channels: 32,
            stages: vec![
                Stage {
                    blocks: 1,
                    width: 64,
                },
                Stage {
                    blocks: 1,
                    width: 128,
                },
                Stage {
                    blocks: 1,
                    width: 256,
                },
            ],
            variant: Variant::Full,
            reduction: default_reduction(),
            min_hidden: default_min_hidden(),
        }
    }

    /// WISDM shape: 3 axes, 90 samples, 6 activities.
    pub fn wisdm() -> Self {
        Self::default_for(3, 90, 6)
    }

    pub fn groups(&self) -> usize {
        self.cardinality * self.radix
    }

    /// Hidden width of the attention MLP for a block of `width` channels,
    /// rounded up to a multiple of the cardinality.
    pub fn hidden(&self, width: usize) -> usize {
        let h = (width / self.reduction.max(1)).max(self.min_hidden);
        h.div_ceil(self.cardinality) * self.cardinality
    }

    pub fn validate(&self) -> Result<()> {
        let nonzero = [
            ("model.channels", self.channels),
            ("model.window", self.window),
            ("model.num_classes", self.num_classes),
            ("model.cardinality", self.cardinality),
            ("model.radix", self.radix),
            ("model.stem_taps", self.stem_taps),
            ("model.stem_channels", self.stem_channels),
        ];
        for (path, v) in nonzero {
            if v == 0 {
                return Err(Error::config(path, "must be >= 1"));
            }
        }
        if self.stages.is_empty() {
            return Err(Error::config("model.stages", "at least one stage required"));
        }
        let g = self.groups();
        if !self.stem_channels.is_multiple_of(g) {
            return Err(Error::config(
                "model.stem_channels",
                format!("{} not divisible by K*R = {g}", self.stem_channels),
            ));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 {
                return Err(Error::config(
                    format!("model.stages[{i}].blocks"),
                    "must be >= 1",
                ));
            }
            if s.width == 0 || s.width % g != 0 {
                return Err(Error::config(
                    format!("model.stages[{i}].width"),
                    format!("{} not divisible by K*R = {g}", s.width),
                ));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        config_hash(&format!("msti\n{}", self.to_toml()))
    }
}
