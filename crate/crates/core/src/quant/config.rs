use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::QuantError;

/// Code width. Fixed: the engine implements 4-bit schemes only.
pub const BITS: u32 = 4;
pub const DEFAULT_GROUP_SIZE: usize = 16;
pub const DEFAULT_DAMPING: f32 = 0.01;
/// `{0, 0.1, ..., 1.0}`.
pub const DEFAULT_ALPHA_GRID: [f32; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
/// Candidate clip fractions tried per group when `clip_search` is on.
pub const CLIP_FRACTIONS: [f32; 4] = [1.0, 0.9, 0.8, 0.7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rtn,
    Gsq,
    Gptq,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rtn => "rtn",
            Method::Gsq => "gsq",
            Method::Gptq => "gptq",
        }
    }

    /// Numeric tag used in tensor-file metadata.
    pub fn tag(self) -> u8 {
        match self {
            Method::Rtn => 0,
            Method::Gsq => 1,
            Method::Gptq => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Method::Rtn),
            1 => Some(Method::Gsq),
            2 => Some(Method::Gptq),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rtn" => Ok(Method::Rtn),
            "gsq" => Ok(Method::Gsq),
            "gptq" => Ok(Method::Gptq),
            other => Err(format!("unknown method `{other}` (expected rtn, gsq or gptq)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub method: Method,
    pub group_size: usize,
    /// Scaling exponents searched by GSQ.
    pub awq_alpha_grid: Vec<f32>,
    /// GPTQ damping as a fraction of the mean Hessian diagonal.
    pub hessian_damping: f32,
    pub clip_search: bool,
}

impl QuantConfig {
    pub fn new(method: Method, group_size: usize) -> Self {
        Self {
            method,
            group_size,
            awq_alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            hessian_damping: DEFAULT_DAMPING,
            clip_search: false,
        }
    }

    pub fn rtn(group_size: usize) -> Self {
        Self::new(Method::Rtn, group_size)
    }

    pub fn bits(&self) -> u32 {
        BITS
    }

    pub fn validate(&self) -> Result<(), QuantError> {
        if self.group_size == 0 {
            return Err(QuantError::InvalidConfig("group_size must be at least 1".into()));
        }
        if self.method == Method::Gsq {
            if self.awq_alpha_grid.is_empty() {
                return Err(QuantError::InvalidConfig("awq_alpha_grid is empty".into()));
            }
            if let Some(a) = self.awq_alpha_grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
                return Err(QuantError::InvalidConfig(format!("alpha {a} is outside [0, 1]")));
            }
        }
        if self.method == Method::Gptq && !(self.hessian_damping.is_finite() && self.hessian_damping > 0.0) {
            return Err(QuantError::InvalidConfig(format!(
                "hessian_damping must be positive, got {}",
                self.hessian_damping
            )));
        }
        Ok(())
    }
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self::new(Method::Gsq, DEFAULT_GROUP_SIZE)
    }
}
