//! Run configuration: defaults, then a `key=value` file, then flags.

use std::path::Path;

use ntcodec::codec::CodecConfig;
use ntcodec::train::TrainConfig;

use crate::{Failure, RunFlags};

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub codec: CodecConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            codec: CodecConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Failure> {
    value
        .parse()
        .map_err(|_| Failure::usage(format!("config key `{key}`: cannot parse `{value}`")))
}

fn endpoint(key: &str, value: &str) -> Result<f64, Failure> {
    let v: f64 = number(key, value)?;
    if !v.is_finite() || v < 0.0 {
        return Err(Failure::usage(format!("config key `{key}` must be a finite value ≥ 0, got {value}")));
    }
    Ok(v)
}

fn flag(key: &str, value: &str) -> Result<bool, Failure> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Failure::usage(format!("config key `{key}`: expected true or false, got `{value}`"))),
    }
}

impl RunConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Failure> {
        let s = &mut self.train.schedule;
        match key {
            "seed" => self.seed = number(key, value)?,
            "steps" => self.train.steps = number(key, value)?,
            "batch" => self.train.batch = number(key, value)?,
            "crop" => self.train.crop = number(key, value)?,
            "lr_start" => s.lr.start = endpoint(key, value)?,
            "lr_end" => s.lr.end = endpoint(key, value)?,
            "lambda1" => s.lambda1 = endpoint(key, value)?,
            "lambda2" => s.lambda2 = endpoint(key, value)?,
            "lambda3_start" => s.lambda3.start = endpoint(key, value)?,
            "lambda3_end" => s.lambda3.end = endpoint(key, value)?,
            "lambda4_start" => s.lambda4.start = endpoint(key, value)?,
            "lambda4_end" => s.lambda4.end = endpoint(key, value)?,
            "beta_start" => s.beta.start = endpoint(key, value)?,
            "beta_end" => s.beta.end = endpoint(key, value)?,
            "attention" => self.codec.flags.use_attention = flag(key, value)?,
            "importance" => self.codec.flags.use_importance = flag(key, value)?,
            "scales" => self.codec.msprob.scales = number(key, value)?,
            "mixtures" => self.codec.msprob.mixtures = number(key, value)?,
            _ => return Err(Failure::usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), Failure> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Failure::usage(format!("config line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn resolve(flags: &RunFlags) -> Result<Self, Failure> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &flags.config {
            cfg.apply_file(path)?;
        }
        if let Some(v) = flags.seed {
            cfg.seed = v;
        }
        if let Some(v) = flags.steps {
            cfg.train.steps = v;
        }
        if let Some(v) = flags.batch {
            cfg.train.batch = v;
        }
        if let Some(v) = flags.crop {
            cfg.train.crop = v;
        }
        if let Some(v) = flags.scales {
            cfg.codec.msprob.scales = v;
        }
        if let Some(v) = flags.mixtures {
            cfg.codec.msprob.mixtures = v;
        }
        if flags.no_attention {
            cfg.codec.flags.use_attention = false;
        }
        if flags.no_importance {
            cfg.codec.flags.use_importance = false;
        }
        cfg.train.seed = cfg.seed;
        cfg.codec.validate().map_err(|e| Failure::usage(e.to_string()))?;
        cfg.train.schedule.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(cfg)
    }

    fn apply_file(&mut self, path: &Path) -> Result<(), Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
            .map_err(|f| Failure::usage(format!("{}: {}", path.display(), f.message)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_overrides_defaults() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nsteps = 5\n\nlr_end=0.01\nimportance=false\n").unwrap();
        assert_eq!(c.train.steps, 5);
        assert_eq!(c.train.schedule.lr.end, 0.01);
        assert!(!c.codec.flags.use_importance);
    }

    #[test]
    fn rejects_bad_lines() {
        let mut c = RunConfig::default();
        assert_eq!(c.apply_text("steps").unwrap_err().code, 1);
        assert_eq!(c.apply_text("colour=red").unwrap_err().code, 1);
        assert_eq!(c.apply_text("beta_end=-1").unwrap_err().code, 1);
        assert_eq!(c.apply_text("attention=maybe").unwrap_err().code, 1);
    }

    #[test]
    fn flags_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "steps=9\nseed=4\n").unwrap();
        let flags = RunFlags {
            config: Some(path),
            steps: Some(2),
            no_attention: true,
            ..Default::default()
        };
        let c = RunConfig::resolve(&flags).unwrap();
        assert_eq!((c.train.steps, c.seed, c.train.seed), (2, 4, 4));
        assert!(!c.codec.flags.use_attention);
    }
}
