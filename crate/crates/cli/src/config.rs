//! Flat `key=value` run configuration.
//!
//! Values are layered: built-in defaults, then an optional config file, then
//! `--set key=value` overrides, then dedicated flags. Unknown keys are
//! rejected at every layer.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Every recognised key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("out", "out"),
    ("checkpoint", ""),
    ("data.kind", "gp-texture"),
    ("data.resolution", "16"),
    ("data.count", "256"),
    ("data.test_count", "64"),
    ("data.seed", "1"),
    ("model.layers_per_scale", "2"),
    ("model.width_factor", "0.25"),
    ("model.blocks_per_scale", "3"),
    ("model.init", "zero-heads"),
    ("train.epochs", "20"),
    ("train.batch_size", "16"),
    ("train.learning_rate", "0.0003"),
    ("train.clip_norm", "1.0"),
    ("infer.mode", "hybrid"),
    ("infer.N", "25"),
    ("infer.step_size", "0.001"),
    ("infer.beta", "1.0"),
    ("infer.loss", "l1"),
    ("infer.images", "4"),
    ("infer.input", ""),
    ("bench.resolution", "32"),
    ("bench.depths", "6,12,18,24,30"),
    ("bench.N", "25"),
    ("bench.warmup", "2"),
    ("bench.repetitions", "5"),
    ("bench.width_factor", "0.25"),
    ("inverse.task", "deblur"),
    ("inverse.cutoff", "8"),
    ("inverse.sigma", "1.0"),
    ("inverse.N", "25"),
    ("inverse.images", "64"),
    ("decompose.input", ""),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            values: DEFAULTS
                .iter()
                .map(|&(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown config key {key:?}"))),
        }
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, line: &str) -> Result<(), CliError> {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected key=value, got {line:?}")))?;
        self.set(k.trim(), v)
    }

    /// Applies every assignment in a config text; blank lines and `#`
    /// comments are skipped.
    pub fn merge_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line)
                .map_err(|e| CliError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.merge_text(&text)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("{key} is not a config key"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| CliError::Config(format!("invalid value {v:?} for {key}")))
    }

    /// A comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        self.raw(key)
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("invalid list entry {p:?} for {key}")))
            })
            .collect()
    }

    /// The effective configuration as config-file text.
    pub fn lock_text(&self) -> String {
        let mut s = format!("# iahvae {}\n", self.command);
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_unique() {
        let keys: std::collections::BTreeSet<_> = DEFAULTS.iter().map(|d| d.0).collect();
        assert_eq!(keys.len(), DEFAULTS.len());
    }

    #[test]
    fn text_with_comments_and_overrides() {
        let mut c = RunConfig::new("train");
        c.merge_text("# header\ntrain.epochs = 3  # short run\n\nseed=9\n")
            .unwrap();
        assert_eq!(c.get::<usize>("train.epochs").unwrap(), 3);
        assert_eq!(c.get::<u64>("seed").unwrap(), 9);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut c = RunConfig::new("train");
        assert!(matches!(
            c.assign("train.epoch=3"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(c.merge_text("nonsense"), Err(CliError::Config(_))));
    }

    #[test]
    fn bad_value_is_a_config_error() {
        let mut c = RunConfig::new("train");
        c.assign("train.epochs=many").unwrap();
        assert!(matches!(
            c.get::<usize>("train.epochs"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn lock_round_trips() {
        let mut c = RunConfig::new("bench");
        c.assign("bench.depths=6,12").unwrap();
        let mut d = RunConfig::new("bench");
        d.merge_text(&c.lock_text()).unwrap();
        assert_eq!(c, d);
        assert_eq!(d.list::<usize>("bench.depths").unwrap(), vec![6, 12]);
    }
}
