//! Preset catalogue: DRAM timings, embedding stores, platforms and models,
//! read from TOML.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dram::{ControllerConfig, DramChannel, DramGeometry, DramTiming};
use crate::error::{Error, Result};
use crate::system::{ChannelConfig, EmbeddingStore, Interconnect, ModelSpec, PlatformConfig};
use crate::vpu::engine_preset;

/// Environment variable naming a config file to merge over the built-ins.
pub const CONFIG_ENV: &str = "HBSIM_CONFIG";

pub const BUILTIN_TOML: &str = include_str!("../presets/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawChannel {
    name: String,
    timing: String,
    capacity_gib: f64,
    ports: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawPlatform {
    cores: usize,
    engine: String,
    clock_mhz: f64,
    urams: usize,
    embedding_store: String,
    btt: u64,
    inference_drop: f64,
    reserved_mib_per_gib: f64,
    channels: Vec<RawChannel>,
    #[serde(default)]
    interconnect: Interconnect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Presets {
    #[serde(default)]
    controller: ControllerConfig,
    #[serde(default)]
    dram: BTreeMap<String, DramTiming>,
    #[serde(default)]
    stores: BTreeMap<String, EmbeddingStore>,
    #[serde(default)]
    platforms: BTreeMap<String, RawPlatform>,
    #[serde(default)]
    models: BTreeMap<String, ModelSpec>,
}

/// Recursively overlays `top` on `base`: tables merge key by key, any other
/// value replaces.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Table keys double as names; fill them in so the tables need not repeat
/// them.
fn with_names(mut value: toml::Value) -> toml::Value {
    for section in ["stores", "models"] {
        if let Some(toml::Value::Table(entries)) = value.get_mut(section) {
            for (name, entry) in entries.iter_mut() {
                if let toml::Value::Table(t) = entry {
                    t.entry("name").or_insert_with(|| toml::Value::String(name.clone()));
                }
            }
        }
    }
    value
}

fn unknown(kind: &'static str, name: &str, known: impl Iterator<Item = impl AsRef<str>>) -> Error {
    Error::UnknownPreset {
        kind,
        name: name.to_owned(),
        known: known.map(|k| k.as_ref().to_owned()).collect::<Vec<_>>().join(", "),
    }
}

impl Presets {
    pub fn builtin() -> Result<Self> {
        Self::from_toml_layers(&[BUILTIN_TOML])
    }

    /// Parses the built-ins with `overlay` merged on top.
    pub fn with_overlay(overlay: &str) -> Result<Self> {
        Self::from_toml_layers(&[BUILTIN_TOML, overlay])
    }

    fn from_toml_layers(layers: &[&str]) -> Result<Self> {
        let mut value = toml::Value::Table(Default::default());
        for text in layers {
            merge(&mut value, toml::from_str(text)?);
        }
        let presets: Self = with_names(value).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        presets.validate()?;
        Ok(presets)
    }

    /// Built-ins merged with the file at `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::with_overlay(&text)
    }

    /// Built-ins, merged with the file named by `HBSIM_CONFIG` if set.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(CONFIG_ENV) {
            Some(path) => Self::load(Path::new(&path)),
            None => Self::builtin(),
        }
    }

    /// Resolves every platform and model so a bad reference fails at load
    /// time rather than on first use.
    fn validate(&self) -> Result<()> {
        for name in self.platforms.keys() {
            self.platform(name)?;
        }
        for m in self.models.values() {
            m.validate()?;
        }
        Ok(())
    }

    pub fn model(&self, name: &str) -> Result<ModelSpec> {
        self.models
            .get(name)
            .cloned()
            .ok_or_else(|| unknown("model", name, self.models.keys()))
    }

    pub fn timing(&self, name: &str) -> Result<DramTiming> {
        self.dram
            .get(name)
            .cloned()
            .ok_or_else(|| unknown("dram timing", name, self.dram.keys()))
    }

    pub fn store(&self, name: &str) -> Result<EmbeddingStore> {
        self.stores
            .get(name)
            .cloned()
            .ok_or_else(|| unknown("embedding store", name, self.stores.keys()))
    }

    pub fn platform(&self, name: &str) -> Result<PlatformConfig> {
        let raw = self
            .platforms
            .get(name)
            .ok_or_else(|| unknown("platform", name, self.platforms.keys()))?;
        let channels = raw
            .channels
            .iter()
            .map(|c| {
                Ok(ChannelConfig {
                    name: c.name.clone(),
                    dram: DramChannel {
                        geometry: DramGeometry::default(),
                        timing: self.timing(&c.timing)?,
                        controller: self.controller.clone(),
                    },
                    capacity_gib: c.capacity_gib,
                    ports: c.ports,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let platform = PlatformConfig {
            name: name.to_owned(),
            channels,
            cores: raw.cores,
            engine_preset: raw.engine.clone(),
            engine: engine_preset(&raw.engine)?,
            clock_mhz: raw.clock_mhz,
            urams: raw.urams,
            embedding_store: self.store(&raw.embedding_store)?,
            btt: raw.btt,
            inference_drop: raw.inference_drop,
            reserved_mib_per_gib: raw.reserved_mib_per_gib,
            interconnect: raw.interconnect,
        };
        platform.validate()?;
        Ok(platform)
    }

    pub fn model_names(&self) -> Vec<&str> {
        self.models.keys().map(String::as_str).collect()
    }

    pub fn platform_names(&self) -> Vec<&str> {
        self.platforms.keys().map(String::as_str).collect()
    }

    pub fn store_names(&self) -> Vec<&str> {
        self.stores.keys().map(String::as_str).collect()
    }
}
