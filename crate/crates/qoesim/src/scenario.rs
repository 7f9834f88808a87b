//! Scenario files: TOML parsing, shipped presets, command-line overrides and
//! the effective-config echo.

use std::fs;
use std::path::{Path, PathBuf};

use qoesim_core::config::{Architecture, ScenarioConfig, ScenarioSpec};
use qoesim_core::traces::VariantLadder;
use sha2::{Digest, Sha256};

use crate::{trace_io, Error, Result};

/// Presets compiled into the binary, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("mad-cif", include_str!("../presets/mad-cif.toml")),
    ("grandma-qcif", include_str!("../presets/grandma-qcif.toml")),
    ("desk-grandma", include_str!("../presets/desk-grandma.toml")),
];

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Settings given on the command line that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub architecture: Option<Architecture>,
    pub seeds: Option<Vec<u64>>,
    pub duration_s: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, spec: &mut ScenarioSpec) {
        if let Some(arch) = self.architecture {
            if spec.architecture != Some(arch) {
                spec.architecture = Some(arch);
                // let the arrival policy follow the new architecture
                if let Some(arr) = spec.arrivals.as_mut() {
                    arr.policy = None;
                }
            }
        }
        if let Some(seeds) = &self.seeds {
            spec.seeds = Some(seeds.clone());
        }
        if let Some(d) = self.duration_s {
            spec.duration_s = Some(d);
        }
    }
}

/// A resolved scenario plus whatever it needs from disk.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub origin: String,
    pub config: ScenarioConfig,
    /// Imported ladder when the scenario names a trace manifest.
    pub ladder: Option<VariantLadder>,
}

impl Scenario {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Scenario> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, &path.display().to_string(), base, overrides)
    }

    pub fn preset(name: &str, overrides: &Overrides) -> Result<Scenario> {
        let text = preset_source(name).ok_or_else(|| {
            let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::Other(format!(
                "unknown preset {name:?}; known: {}",
                known.join(", ")
            ))
        })?;
        Self::from_toml(text, &format!("preset:{name}"), Path::new("."), overrides)
    }

    /// Parses and resolves `text`. A trace manifest path is taken relative to
    /// `base_dir`.
    pub fn from_toml(
        text: &str,
        origin: &str,
        base_dir: &Path,
        overrides: &Overrides,
    ) -> Result<Scenario> {
        let mut spec = parse_spec(text, origin)?;
        overrides.apply(&mut spec);
        let mut config = spec.resolve().map_err(Error::Config)?;
        let ladder = match &config.trace_manifest {
            Some(rel) => {
                let path = base_dir.join(rel);
                let ladder = trace_io::read_ladder(&path, &config.content)?;
                config.trace_manifest = Some(path.display().to_string());
                config.content = ladder.content.clone();
                Some(ladder)
            }
            None => None,
        };
        Ok(Scenario {
            origin: origin.to_string(),
            config,
            ladder,
        })
    }

    pub fn seeds(&self) -> &[u64] {
        &self.config.seeds
    }
}

pub fn parse_spec(text: &str, origin: &str) -> Result<ScenarioSpec> {
    toml::from_str(text).map_err(|e| Error::Parse {
        path: PathBuf::from(origin),
        message: e.to_string(),
    })
}

/// The fully resolved config as TOML, seeds in ascending order.
pub fn effective_toml(cfg: &ScenarioConfig) -> String {
    let mut spec = cfg.to_spec();
    if let Some(seeds) = spec.seeds.as_mut() {
        seeds.sort_unstable();
    }
    toml::to_string(&spec).expect("resolved config serializes")
}

/// SHA-256 of the effective config, hex encoded.
pub fn config_hash(cfg: &ScenarioConfig) -> String {
    hex::encode(Sha256::digest(effective_toml(cfg).as_bytes()))
}

/// Reads a seed list: integers separated by whitespace or commas, `#` starts
/// a comment.
pub fn read_seed_file(path: &Path) -> Result<Vec<u64>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    parse_seeds(&text).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })
}

pub fn parse_seeds(text: &str) -> std::result::Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()) {
            if tok.is_empty() {
                continue;
            }
            out.push(tok.parse().map_err(|_| format!("bad seed {tok:?}"))?);
        }
    }
    if out.is_empty() {
        return Err("no seeds".into());
    }
    Ok(out)
}
