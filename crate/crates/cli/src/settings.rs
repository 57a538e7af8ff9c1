use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use int4q::quant::{Method, BITS, DEFAULT_ALPHA_GRID, DEFAULT_DAMPING, DEFAULT_GROUP_SIZE};

use crate::UsageError;

/// Keys accepted in a settings file.
pub const CONFIG_KEYS: &[&str] = &[
    "method",
    "group_size",
    "bits",
    "alpha_grid",
    "damping",
    "clip_search",
    "seed",
    "samples",
    "window",
    "eval_tokens",
    "runs",
    "warmup",
    "gen_tokens",
    "prompts",
    "prompt_len",
    "corpus_len",
    "preset",
];

pub const PRESETS: &[&str] = &["group64-seq512"];

/// Parsed `key = value` settings file. `#` starts a comment line.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(UsageError(format!("config line {}: expected key = value", i + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if !CONFIG_KEYS.contains(&k) {
                return Err(UsageError(format!("config line {}: unknown key `{k}`", i + 1)));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(UsageError(format!("config line {}: duplicate key `{k}`", i + 1)));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| UsageError(format!("config key `{key}`: {e}"))))
            .transpose()
    }
}

/// Values set by a preset.
#[derive(Debug, Default, Clone, Copy)]
struct Preset {
    group_size: Option<usize>,
    window: Option<usize>,
}

fn preset(name: &str) -> Result<Preset, UsageError> {
    match name {
        "group64-seq512" => Ok(Preset { group_size: Some(64), window: Some(512) }),
        other => Err(UsageError(format!("unknown preset `{other}` (known: {})", PRESETS.join(", ")))),
    }
}

/// Every tunable value after applying flags > preset > config file > defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub method: Method,
    pub group_size: usize,
    pub bits: u32,
    pub alpha_grid: Vec<f32>,
    pub damping: f32,
    pub clip_search: bool,
    pub seed: u64,
    pub samples: usize,
    pub window: usize,
    pub eval_tokens: usize,
    pub runs: usize,
    pub warmup: usize,
    pub gen_tokens: usize,
    pub prompts: usize,
    pub prompt_len: usize,
    pub corpus_len: usize,
}

/// Explicit command-line values; `None` means not given.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub method: Option<Method>,
    pub group_size: Option<usize>,
    pub bits: Option<u32>,
    pub alpha_grid: Option<String>,
    pub damping: Option<f32>,
    pub clip_search: Option<bool>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub window: Option<usize>,
    pub eval_tokens: Option<usize>,
    pub runs: Option<usize>,
    pub warmup: Option<usize>,
    pub gen_tokens: Option<usize>,
    pub prompts: Option<usize>,
    pub prompt_len: Option<usize>,
    pub corpus_len: Option<usize>,
}

pub fn parse_alpha_grid(s: &str) -> Result<Vec<f32>, UsageError> {
    s.split(',')
        .map(|p| p.trim().parse::<f32>().map_err(|e| UsageError(format!("alpha grid value `{}`: {e}", p.trim()))))
        .collect()
}

fn pick<T>(flag: Option<T>, preset: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(preset).or(config).unwrap_or(default)
}

impl Settings {
    pub fn resolve(flags: Overrides, preset_flag: Option<&str>, config: &ConfigFile) -> Result<Self, UsageError> {
        let preset_name = match preset_flag {
            Some(p) => Some(p.to_string()),
            None => config.get::<String>("preset")?,
        };
        let p = preset_name.as_deref().map(preset).transpose()?.unwrap_or_default();
        let method = match flags.method {
            Some(m) => m,
            None => config.get::<Method>("method")?.unwrap_or(Method::Gsq),
        };
        let alpha_grid = match flags.alpha_grid.or(config.get::<String>("alpha_grid")?) {
            Some(s) => parse_alpha_grid(&s)?,
            None => DEFAULT_ALPHA_GRID.to_vec(),
        };
        let s = Settings {
            method,
            group_size: pick(flags.group_size, p.group_size, config.get("group_size")?, DEFAULT_GROUP_SIZE),
            bits: pick(flags.bits, None, config.get("bits")?, BITS),
            alpha_grid,
            damping: pick(flags.damping, None, config.get("damping")?, DEFAULT_DAMPING),
            clip_search: pick(flags.clip_search, None, config.get("clip_search")?, false),
            seed: pick(flags.seed, None, config.get("seed")?, 0),
            samples: pick(flags.samples, None, config.get("samples")?, 256),
            window: pick(flags.window, p.window, config.get("window")?, 512),
            eval_tokens: pick(flags.eval_tokens, None, config.get("eval_tokens")?, 4096),
            runs: pick(flags.runs, None, config.get("runs")?, 5),
            warmup: pick(flags.warmup, None, config.get("warmup")?, 1),
            gen_tokens: pick(flags.gen_tokens, None, config.get("gen_tokens")?, 16),
            prompts: pick(flags.prompts, None, config.get("prompts")?, 4),
            prompt_len: pick(flags.prompt_len, None, config.get("prompt_len")?, 32),
            corpus_len: pick(flags.corpus_len, None, config.get("corpus_len")?, 8192),
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), UsageError> {
        let fail = |m: String| Err(UsageError(m));
        if self.group_size == 0 {
            return fail("group size must be at least 1".into());
        }
        if self.bits != BITS {
            return fail(format!("only {BITS}-bit quantization is supported, got {}", self.bits));
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return fail("alpha grid values must lie in [0, 1]".into());
        }
        if !(self.damping.is_finite() && self.damping > 0.0) {
            return fail(format!("damping must be positive, got {}", self.damping));
        }
        if !(2..=512).contains(&self.window) {
            return fail(format!("window must be in 2..=512, got {}", self.window));
        }
        for (name, v) in [
            ("samples", self.samples),
            ("eval_tokens", self.eval_tokens),
            ("gen_tokens", self.gen_tokens),
            ("prompts", self.prompts),
            ("prompt_len", self.prompt_len),
            ("corpus_len", self.corpus_len),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.runs < int4q::bench::MIN_RUNS {
            return fail(format!("runs must be at least {}, got {}", int4q::bench::MIN_RUNS, self.runs));
        }
        if self.prompt_len + self.gen_tokens > 512 {
            return fail("prompt_len + gen_tokens must not exceed 512".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(flags: Overrides, preset: Option<&str>, config: &str) -> Result<Settings, UsageError> {
        Settings::resolve(flags, preset, &ConfigFile::parse(config).unwrap())
    }

    #[test]
    fn defaults() {
        let s = resolve(Overrides::default(), None, "").unwrap();
        assert_eq!((s.method, s.group_size, s.bits), (Method::Gsq, 16, 4));
    }

    #[test]
    fn precedence_flag_over_preset_over_config() {
        let cfg = "# experiment\ngroup_size = 32\nmethod = gptq\n";
        let s = resolve(Overrides::default(), None, cfg).unwrap();
        assert_eq!((s.method, s.group_size), (Method::Gptq, 32));
        let s = resolve(Overrides::default(), Some("group64-seq512"), cfg).unwrap();
        assert_eq!(s.group_size, 64);
        let flags = Overrides { group_size: Some(8), method: Some(Method::Rtn), ..Overrides::default() };
        let s = resolve(flags, Some("group64-seq512"), cfg).unwrap();
        assert_eq!((s.method, s.group_size), (Method::Rtn, 8));
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let zero = Overrides { group_size: Some(0), ..Overrides::default() };
        assert!(resolve(zero, None, "").is_err());
        assert!(resolve(Overrides::default(), Some("nope"), "").is_err());
        assert!(resolve(Overrides::default(), None, "alpha_grid = 0, 1.5").is_err());
        assert!(resolve(Overrides { runs: Some(2), ..Overrides::default() }, None, "").is_err());
        assert!(resolve(Overrides { bits: Some(8), ..Overrides::default() }, None, "").is_err());
        assert!(resolve(Overrides::default(), None, "group_size = many").is_err());
    }

    #[test]
    fn config_syntax() {
        assert!(ConfigFile::parse("colour = red").is_err());
        assert!(ConfigFile::parse("seed").is_err());
        assert!(ConfigFile::parse("seed = 1\nseed = 2").is_err());
        let c = ConfigFile::parse("  seed=7  \n\n# x = y\n").unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), Some(7));
    }
}
