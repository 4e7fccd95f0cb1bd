//! Architecture description of the residual discriminator and the layer
//! naming scheme shared by taps and weight records.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_RESOLUTION: usize = 8;
pub const MAX_RESOLUTION: usize = 1024;
/// Spatial size of the final block.
pub const HEAD_RESOLUTION: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchError {
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error("unknown layer name `{0}`")]
    UnknownLayer(String),
    #[error("layer `{layer}` does not exist at resolution {resolution}")]
    LayerNotInGraph { layer: String, resolution: usize },
    #[error("tap set is empty")]
    EmptyTaps,
    #[error("layer `{0}` tapped more than once")]
    DuplicateTap(String),
    #[error("tap weight for `{layer}` must be finite and non-negative, got {weight}")]
    BadTapWeight { layer: String, weight: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchConfig {
    pub img_resolution: usize,
    pub img_channels: usize,
    pub channel_base: usize,
    pub channel_max: usize,
    pub mbstd_group: usize,
    pub latent_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::new(1024)
    }
}

impl ArchConfig {
    /// Reference defaults at the given resolution.
    pub fn new(img_resolution: usize) -> Self {
        Self {
            img_resolution,
            img_channels: 3,
            channel_base: 32768,
            channel_max: 512,
            mbstd_group: 4,
            latent_dim: 512,
        }
    }

    pub fn with_channels(mut self, channel_base: usize, channel_max: usize) -> Self {
        self.channel_base = channel_base;
        self.channel_max = channel_max;
        self
    }

    pub fn with_latent_dim(mut self, latent_dim: usize) -> Self {
        self.latent_dim = latent_dim;
        self
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let r = self.img_resolution;
        if !r.is_power_of_two() || !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&r) {
            return Err(ArchError::Config(format!(
                "img_resolution must be a power of two in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {r}"
            )));
        }
        for (field, v) in [
            ("img_channels", self.img_channels),
            ("channel_max", self.channel_max),
            ("mbstd_group", self.mbstd_group),
            ("latent_dim", self.latent_dim),
        ] {
            if v == 0 {
                return Err(ArchError::Config(format!("{field} must be positive")));
            }
        }
        if self.channel_base < r {
            return Err(ArchError::Config(format!(
                "channel_base {} leaves zero channels at resolution {r}",
                self.channel_base
            )));
        }
        Ok(())
    }

    /// `log2(img_resolution / 4)`.
    pub fn num_blocks(&self) -> usize {
        (self.img_resolution / HEAD_RESOLUTION).trailing_zeros() as usize
    }

    /// Resolutions of the residual blocks, input side first.
    pub fn block_resolutions(&self) -> impl Iterator<Item = usize> {
        let top = self.img_resolution;
        (0..self.num_blocks()).map(move |i| top >> i)
    }

    pub fn channels(&self, res: usize) -> usize {
        (self.channel_base / res).min(self.channel_max)
    }

    /// Every layer of the graph in evaluation order.
    pub fn layer_names(&self) -> Vec<LayerName> {
        let mut names = vec![LayerName::FromRgb(self.img_resolution)];
        for r in self.block_resolutions() {
            names.extend([LayerName::Skip(r), LayerName::Conv0(r), LayerName::Conv1(r)]);
        }
        names.extend([
            LayerName::Mbstd,
            LayerName::HeadConv,
            LayerName::Fc,
            LayerName::Out,
        ]);
        names
    }

    pub fn contains(&self, name: LayerName) -> bool {
        match name {
            LayerName::FromRgb(r) => r == self.img_resolution,
            LayerName::Conv0(r) | LayerName::Conv1(r) | LayerName::Skip(r) => {
                r.is_power_of_two() && (MIN_RESOLUTION..=self.img_resolution).contains(&r)
            }
            _ => true,
        }
    }

    pub fn check_layer(&self, name: LayerName) -> Result<(), ArchError> {
        if self.contains(name) {
            Ok(())
        } else {
            Err(ArchError::LayerNotInGraph {
                layer: name.to_string(),
                resolution: self.img_resolution,
            })
        }
    }

    /// Number of ×2 reductions between the input image and the output of
    /// `name`.
    pub fn downsample_stages(&self, name: LayerName) -> usize {
        let depth = |r: usize| (self.img_resolution / r).trailing_zeros() as usize;
        match name {
            LayerName::FromRgb(_) => 0,
            LayerName::Conv0(r) => depth(r),
            LayerName::Conv1(r) | LayerName::Skip(r) => depth(r) + 1,
            _ => self.num_blocks(),
        }
    }

    /// Smallest square input for which `name` still sees at least a 1×1
    /// feature map; layers of the 4×4 head need the full resolution.
    pub fn min_input_size(&self, name: LayerName) -> usize {
        if name.is_head() {
            self.img_resolution
        } else {
            1 << self.downsample_stages(name)
        }
    }
}

/// Canonical layer name, rendered as `b{res}.{kind}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerName {
    FromRgb(usize),
    Skip(usize),
    Conv0(usize),
    Conv1(usize),
    Mbstd,
    HeadConv,
    Fc,
    Out,
}

impl LayerName {
    pub fn is_head(self) -> bool {
        matches!(
            self,
            LayerName::Mbstd | LayerName::HeadConv | LayerName::Fc | LayerName::Out
        )
    }

    /// Whether this layer is a convolution.
    pub fn is_conv(self) -> bool {
        !matches!(self, LayerName::Mbstd | LayerName::Fc | LayerName::Out)
    }

    pub fn has_parameters(self) -> bool {
        self != LayerName::Mbstd
    }

    pub fn has_bias(self) -> bool {
        !matches!(self, LayerName::Skip(_) | LayerName::Mbstd)
    }
}

impl fmt::Display for LayerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerName::FromRgb(r) => write!(f, "b{r}.fromrgb"),
            LayerName::Skip(r) => write!(f, "b{r}.skip"),
            LayerName::Conv0(r) => write!(f, "b{r}.conv0"),
            LayerName::Conv1(r) => write!(f, "b{r}.conv1"),
            LayerName::Mbstd => f.write_str("b4.mbstd"),
            LayerName::HeadConv => f.write_str("b4.conv"),
            LayerName::Fc => f.write_str("b4.fc"),
            LayerName::Out => f.write_str("b4.out"),
        }
    }
}

impl FromStr for LayerName {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || ArchError::UnknownLayer(s.to_string());
        let (block, kind) = s
            .strip_prefix('b')
            .and_then(|rest| rest.split_once('.'))
            .ok_or_else(unknown)?;
        if block.is_empty() || block.starts_with('0') || !block.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(unknown());
        }
        let res: usize = block.parse().map_err(|_| unknown())?;
        let name = match (res, kind) {
            (4, "mbstd") => LayerName::Mbstd,
            (4, "conv") => LayerName::HeadConv,
            (4, "fc") => LayerName::Fc,
            (4, "out") => LayerName::Out,
            (r, _) if r < MIN_RESOLUTION || !r.is_power_of_two() => return Err(unknown()),
            (r, "fromrgb") => LayerName::FromRgb(r),
            (r, "skip") => LayerName::Skip(r),
            (r, "conv0") => LayerName::Conv0(r),
            (r, "conv1") => LayerName::Conv1(r),
            _ => return Err(unknown()),
        };
        Ok(name)
    }
}

impl Serialize for LayerName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LayerName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub layer: LayerName,
    pub weight: f32,
}

/// Ordered, duplicate-free set of weighted layer taps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Tap>", into = "Vec<Tap>")]
pub struct TapSet {
    taps: Vec<Tap>,
}

impl TapSet {
    pub fn new(taps: Vec<Tap>) -> Result<Self, ArchError> {
        if taps.is_empty() {
            return Err(ArchError::EmptyTaps);
        }
        for (i, t) in taps.iter().enumerate() {
            if !t.weight.is_finite() || t.weight < 0.0 {
                return Err(ArchError::BadTapWeight {
                    layer: t.layer.to_string(),
                    weight: t.weight,
                });
            }
            if taps[..i].iter().any(|o| o.layer == t.layer) {
                return Err(ArchError::DuplicateTap(t.layer.to_string()));
            }
        }
        Ok(Self { taps })
    }

    /// Unit-weight taps.
    pub fn uniform(layers: impl IntoIterator<Item = LayerName>) -> Result<Self, ArchError> {
        Self::new(
            layers
                .into_iter()
                .map(|layer| Tap { layer, weight: 1.0 })
                .collect(),
        )
    }

    pub fn single(layer: LayerName) -> Self {
        Self {
            taps: vec![Tap { layer, weight: 1.0 }],
        }
    }

    pub fn validate_for(&self, arch: &ArchConfig) -> Result<(), ArchError> {
        self.taps.iter().try_for_each(|t| arch.check_layer(t.layer))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Tap> {
        self.taps.iter()
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn layers(&self) -> impl Iterator<Item = LayerName> + '_ {
        self.taps.iter().map(|t| t.layer)
    }

    pub fn weight(&self, layer: LayerName) -> Option<f32> {
        self.taps
            .iter()
            .find(|t| t.layer == layer)
            .map(|t| t.weight)
    }

    pub fn min_input_size(&self, arch: &ArchConfig) -> usize {
        self.layers()
            .map(|l| arch.min_input_size(l))
            .max()
            .unwrap_or(1)
    }

    /// Input sizes must be multiples of this so every ×2 stage sees an even
    /// extent.
    pub fn size_granule(&self, arch: &ArchConfig) -> usize {
        1 << self
            .layers()
            .map(|l| arch.downsample_stages(l))
            .max()
            .unwrap_or(0)
    }

    pub fn needs_head(&self) -> bool {
        self.layers().any(LayerName::is_head)
    }
}

impl TryFrom<Vec<Tap>> for TapSet {
    type Error = ArchError;
    fn try_from(v: Vec<Tap>) -> Result<Self, ArchError> {
        TapSet::new(v)
    }
}

impl From<TapSet> for Vec<Tap> {
    fn from(t: TapSet) -> Self {
        t.taps
    }
}

/// Smallest input spatial size for which every tap in `taps` receives a
/// non-empty feature map.
pub fn truncated_forward_min_size(taps: &TapSet, cfg: &ArchConfig) -> usize {
    taps.min_input_size(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_count() {
        assert_eq!(ArchConfig::new(1024).num_blocks(), 8);
        assert_eq!(ArchConfig::new(8).num_blocks(), 1);
        let blocks: Vec<_> = ArchConfig::new(1024).block_resolutions().collect();
        assert_eq!(blocks, vec![1024, 512, 256, 128, 64, 32, 16, 8]);
    }

    #[test]
    fn channel_schedule() {
        let a = ArchConfig::new(1024);
        assert_eq!(a.channels(1024), 32);
        assert_eq!(a.channels(256), 128);
        assert_eq!(a.channels(64), 512);
        assert_eq!(a.channels(4), 512);
    }

    #[test]
    fn rejects_bad_resolution() {
        for r in [0, 4, 12, 2048] {
            assert!(ArchConfig::new(r).validate().is_err(), "{r}");
        }
    }

    #[test]
    fn names_round_trip() {
        let a = ArchConfig::new(256);
        for name in a.layer_names() {
            let s = name.to_string();
            assert_eq!(s.parse::<LayerName>().unwrap(), name);
        }
        assert_eq!("b4.fc".parse::<LayerName>().unwrap(), LayerName::Fc);
    }

    #[test]
    fn unknown_names_rejected() {
        for s in [
            "",
            "b16",
            "b16.conv2",
            "b016.conv0",
            "b12.conv0",
            "b4.conv0",
            "b2.skip",
            "B16.conv0",
            "b16.conv0 ",
            "b16_conv1",
            "b8.fromrgb.weight",
        ] {
            assert!(s.parse::<LayerName>().is_err(), "{s:?}");
        }
    }

    #[test]
    fn membership() {
        let a = ArchConfig::new(64);
        assert!(a.contains(LayerName::FromRgb(64)));
        assert!(!a.contains(LayerName::FromRgb(32)));
        assert!(!a.contains(LayerName::Conv0(128)));
        assert!(a.contains(LayerName::Conv1(8)));
    }

    #[test]
    fn min_sizes() {
        let a = ArchConfig::new(1024);
        assert_eq!(a.min_input_size(LayerName::HeadConv), 1024);
        assert_eq!(a.min_input_size(LayerName::FromRgb(1024)), 1);
        // two reductions (b1024, b512) before b256.conv0
        assert_eq!(a.min_input_size(LayerName::Conv0(256)), 4);
        assert_eq!(a.min_input_size(LayerName::Conv1(256)), 8);
        assert_eq!(a.min_input_size(LayerName::Conv1(8)), 256);
    }

    #[test]
    fn tapset_invariants() {
        assert_eq!(TapSet::new(vec![]), Err(ArchError::EmptyTaps));
        let dup = TapSet::uniform([LayerName::Fc, LayerName::Fc]);
        assert!(matches!(dup, Err(ArchError::DuplicateTap(_))));
        let neg = TapSet::new(vec![Tap {
            layer: LayerName::Fc,
            weight: -1.0,
        }]);
        assert!(matches!(neg, Err(ArchError::BadTapWeight { .. })));
        let t = TapSet::single(LayerName::Conv0(32));
        assert!(t.validate_for(&ArchConfig::new(16)).is_err());
    }
}
