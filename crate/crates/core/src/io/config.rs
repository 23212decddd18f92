//! Run configuration files.
//!
//! A config is a small INI-style document: `[section]` headers and
//! `key = value` lines. The section and key vocabulary is closed (see
//! `SCHEMA`); anything else is rejected so a typo cannot silently turn
//! into a default. Every run writes its resolved config next to its
//! outputs, and that file parses back bit-for-bit.
//!
//! Lines whose first non-blank character is `#` are comments. Values
//! run to the end of the line, so paths with spaces need no quoting.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// The only random generator this tool ships. The name is recorded in
/// every resolved config so old runs stay reproducible if that ever
/// changes.
pub const RNG_NAME: &str = "splitmix64";

const SCHEMA: &[(&str, &[&str])] = &[
    ("run", &["command", "rng", "seed"]),
    (
        "gen-dvf",
        &[
            "category", "stage", "class", "dims", "spacing", "origin", "seed", "mask", "out",
            "jac-hist",
        ],
    ),
    (
        "make-pairs",
        &["input", "stage", "seed", "sigma-n", "mask", "out-dir"],
    ),
    (
        "deform",
        &["input", "field", "sponge", "noise-sigma", "noise-seed", "out"],
    ),
    ("compose", &["first", "second", "out"]),
    (
        "register",
        &["fixed", "moving", "stages", "predictor", "out-dir"],
    ),
    (
        "evaluate",
        &[
            "field",
            "landmarks",
            "landmarks-fixed",
            "landmarks-moving",
            "mask",
            "index-coords",
            "out",
        ],
    ),
    ("loss", &["truth", "pred", "gamma", "grad-out"]),
];

fn allowed_keys(section: &str) -> Option<&'static [&'static str]> {
    SCHEMA.iter().find(|(s, _)| *s == section).map(|(_, k)| *k)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResolvedConfig {
    sections: Vec<(String, Vec<(String, String)>)>,
}

impl ResolvedConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts a config whose `[run]` section records the subcommand and
    /// generator name.
    pub fn for_command(command: &str) -> Self {
        let mut c = Self::new();
        c.set("run", "command", command);
        c.set("run", "rng", RNG_NAME);
        c
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        debug_assert!(
            allowed_keys(section).is_some_and(|ks| ks.contains(&key)),
            "key {key} is not in the schema for [{section}]"
        );
        let sec = match self.sections.iter_mut().find(|(s, _)| s == section) {
            Some((_, pairs)) => pairs,
            None => {
                self.sections.push((section.to_string(), Vec::new()));
                &mut self.sections.last_mut().unwrap().1
            }
        };
        let value = value.to_string();
        match sec.iter_mut().find(|(k, _)| k == key) {
            Some((_, v)) => *v = value,
            None => sec.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|(s, _)| s == section)
            .and_then(|(_, pairs)| pairs.iter().find(|(k, _)| k == key))
            .map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, (section, pairs)) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("[{section}]\n"));
            for (k, v) in pairs {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_text()).map_err(|e| super::io_at(path.as_ref(), e))?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        let mut current: Option<String> = None;
        let mut offset = 0usize;
        for raw_line in text.split('\n') {
            let line_offset = offset;
            offset += raw_line.len() + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                offset: line_offset,
                msg,
            };
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return Err(err("unterminated section header".to_string()));
                };
                let name = name.trim();
                if allowed_keys(name).is_none() {
                    return Err(err(format!("unknown section [{name}]")));
                }
                if cfg.sections.iter().any(|(s, _)| s == name) {
                    return Err(err(format!("duplicate section [{name}]")));
                }
                cfg.sections.push((name.to_string(), Vec::new()));
                current = Some(name.to_string());
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(err("expected 'key = value'".to_string()));
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            let Some(section) = current.as_deref() else {
                return Err(err(format!("key {key} appears before any [section]")));
            };
            if !allowed_keys(section).unwrap().contains(&key) {
                return Err(err(format!("unknown key {key} in [{section}]")));
            }
            let pairs = &mut cfg.sections.last_mut().unwrap().1;
            if pairs.iter().any(|(k, _)| k == key) {
                return Err(err(format!("duplicate key {key} in [{section}]")));
            }
            if section == "run" && key == "rng" && value != RNG_NAME {
                return Err(err(format!(
                    "unsupported rng '{value}', this build only provides {RNG_NAME}"
                )));
            }
            pairs.push((key.to_string(), value.to_string()));
        }
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path.as_ref()).map_err(|e| super::io_at(path.as_ref(), e))?)
    }
}
