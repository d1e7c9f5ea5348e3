//! Flat `key = value` run manifests.
//!
//! Keys are the long flag names of the command that produced the run, so a
//! manifest turns back into an argument list with one `--key=value` per
//! line. Absent optional flags are simply left out.

use std::fmt::Display;
use std::path::Path;

use cpl_core::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            command: command.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn set_path(&mut self, key: &str, path: &Path) {
        // absolute so a replay from another directory reads the same files
        let abs = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
        self.set(key, abs.display());
    }

    pub fn set_opt<T: Display>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn set_opt_path(&mut self, key: &str, path: Option<&Path>) {
        if let Some(p) = path {
            self.set_path(key, p);
        }
    }

    /// Comma-joined list; an empty list is left out.
    pub fn set_list<T: Display>(&mut self, key: &str, values: &[T]) {
        if !values.is_empty() {
            let joined: Vec<String> = values.iter().map(ToString::to_string).collect();
            self.set(key, joined.join(","));
        }
    }

    #[cfg(test)]
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# cpl run manifest\ncommand = {}\n", self.command);
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut command = None;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k == "command" {
                command = Some(v.to_string());
            } else {
                entries.push((k.to_string(), v.to_string()));
            }
        }
        let command = command.ok_or_else(|| Error::Parse {
            line: 0,
            message: "manifest has no `command` entry".into(),
        })?;
        Ok(Manifest { command, entries })
    }

    /// Argument list for re-running the recorded command, with `out`
    /// optionally redirected.
    pub fn to_args(&self, out: Option<&Path>) -> Vec<String> {
        let mut args = vec!["cpl".to_string(), self.command.clone()];
        for (k, v) in &self.entries {
            let v = match (k.as_str(), out) {
                ("out", Some(o)) => o.display().to_string(),
                _ => v.clone(),
            };
            args.push(format!("--{k}={v}"));
        }
        args
    }
}
