//! Pipeline configuration and its `key = value` file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::camera::{FragmentParams, KeyframeMode};
use crate::error::{Error, Result};
use crate::featvol::BackboneConfig;
use crate::voxgrid::{level_voxel_size, FINEST_VOXEL_SIZE};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    #[default]
    Gru,
    /// Running mean of geometric features in the hidden state.
    Average,
    /// No feature fusion; predicted TSDFs are averaged at integration.
    LinearTsdf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionArea {
    /// Only voxels surviving sparsification update the hidden state.
    Occ,
    /// Every visible voxel of the fragment volume updates the hidden state.
    #[default]
    Fbv,
}

impl FromStr for FusionMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(Self::Gru),
            "avg" | "average" => Ok(Self::Average),
            "linear" | "linear_tsdf" => Ok(Self::LinearTsdf),
            _ => Err(Error::Config(format!("unknown fusion method `{s}` (gru, avg, linear)"))),
        }
    }
}

impl FromStr for FusionArea {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "occ" => Ok(Self::Occ),
            "fbv" => Ok(Self::Fbv),
            _ => Err(Error::Config(format!("unknown fusion area `{s}` (occ, fbv)"))),
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gru => "gru",
            Self::Average => "avg",
            Self::LinearTsdf => "linear",
        })
    }
}

impl fmt::Display for FusionArea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Occ => "occ",
            Self::Fbv => "fbv",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FusionConfig {
    pub fusion: FusionMethod,
    pub area: FusionArea,
    pub n_views: usize,
    pub theta: f32,
    pub lambda: f64,
    pub d_max: f64,
    pub t_max: f64,
    pub r_max_deg: f64,
    pub voxel_size: f64,
    #[serde(skip)]
    pub keyframe_mode: KeyframeMode,
    /// Backbone feature channels per level, coarse to fine.
    pub channels: [usize; 3],
    /// Geometric feature (and hidden state) width.
    pub geo_channels: usize,
    pub geo_layers: usize,
    pub mlp_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            fusion: FusionMethod::Gru,
            area: FusionArea::Fbv,
            n_views: 9,
            theta: 0.5,
            lambda: 0.12,
            d_max: 3.0,
            t_max: 0.1,
            r_max_deg: 15.0,
            voxel_size: FINEST_VOXEL_SIZE,
            keyframe_mode: KeyframeMode::Conjunction,
            channels: [24, 32, 48],
            geo_channels: 16,
            geo_layers: 2,
            mlp_hidden: vec![32],
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl FusionConfig {
    /// Small network used by tests and the toy training run.
    pub fn toy() -> Self {
        Self {
            channels: [8, 8, 8],
            geo_channels: 8,
            mlp_hidden: vec![16],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.n_views < 2 {
            return bad(format!("n_views must be at least 2, got {}", self.n_views));
        }
        if !(self.d_max > 0.0 && self.voxel_size > 0.0) {
            return bad("d_max and voxel_size must be positive".into());
        }
        if self.geo_channels == 0 || self.geo_layers == 0 {
            return bad("geo_channels and geo_layers must be positive".into());
        }
        if self.fusion == FusionMethod::LinearTsdf && self.area == FusionArea::Occ {
            return bad("fusion `linear` keeps no hidden state, so area `occ` does not apply".into());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "fusion" | "fusion_method" => self.fusion = value.parse()?,
            "area" | "fusion_area" => self.area = value.parse()?,
            "n_views" => self.n_views = parse(key, value)?,
            "theta" => self.theta = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "d_max" => self.d_max = parse(key, value)?,
            "t_max" => self.t_max = parse(key, value)?,
            "R_max_deg" | "r_max_deg" => self.r_max_deg = parse(key, value)?,
            "voxel_size" => self.voxel_size = parse(key, value)?,
            "keyframe_mode" => self.keyframe_mode = value.parse()?,
            "channels" => {
                let v = parse_list(key, value)?;
                self.channels = v
                    .try_into()
                    .map_err(|_| Error::Config("`channels` needs three values".into()))?;
            }
            "geo_channels" => self.geo_channels = parse(key, value)?,
            "geo_layers" => self.geo_layers = parse(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse_list(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the defaults. `#` starts a
    /// comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Serializes every key, readable by [`FusionConfig::parse_str`].
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mode = match self.keyframe_mode {
            KeyframeMode::Conjunction => "and",
            KeyframeMode::Disjunction => "or",
        };
        format!(
            "fusion = {}\narea = {}\nn_views = {}\ntheta = {}\nlambda = {}\nd_max = {}\nt_max = {}\nR_max_deg = {}\n\
             voxel_size = {}\nkeyframe_mode = {mode}\nchannels = {}\ngeo_channels = {}\ngeo_layers = {}\nmlp_hidden = {}\nseed = {}\n",
            self.fusion,
            self.area,
            self.n_views,
            self.theta,
            self.lambda,
            self.d_max,
            self.t_max,
            self.r_max_deg,
            self.voxel_size,
            list(&self.channels),
            self.geo_channels,
            self.geo_layers,
            list(&self.mlp_hidden),
            self.seed
        )
    }

    pub fn fragment_params(&self) -> FragmentParams {
        FragmentParams {
            n_views: self.n_views,
            t_max: self.t_max,
            r_max_deg: self.r_max_deg,
            d_max: self.d_max,
            coarse_voxel: level_voxel_size(self.voxel_size, 1),
            mode: self.keyframe_mode,
        }
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            channels: self.channels,
            ..BackboneConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = FusionConfig::default();
        assert_eq!((c.voxel_size, c.lambda, c.d_max), (0.04, 0.12, 3.0));
        assert_eq!((c.r_max_deg, c.t_max, c.theta, c.n_views), (15.0, 0.1, 0.5, 9));
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = FusionConfig::toy();
        c.fusion = FusionMethod::Average;
        c.area = FusionArea::Occ;
        c.n_views = 7;
        c.mlp_hidden = vec![12, 6];
        c.keyframe_mode = KeyframeMode::Disjunction;
        assert_eq!(FusionConfig::parse_str(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_errors() {
        let c = FusionConfig::parse_str("# header\n n_views = 5  # trailing\n\nfusion = linear\n").unwrap();
        assert_eq!((c.n_views, c.fusion), (5, FusionMethod::LinearTsdf));
        assert!(FusionConfig::parse_str("bogus = 1").is_err());
        assert!(FusionConfig::parse_str("theta = 1.5").is_err());
        assert!(FusionConfig::parse_str("n_views = 1").is_err());
        assert!(FusionConfig::parse_str("n_views").is_err());
        assert!(FusionConfig::parse_str("fusion = linear\narea = occ").is_err());
    }
}
