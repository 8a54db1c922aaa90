//! Protocol modification toggles and the shipped presets.
//!
//! `md1`..`md5` are the Dolev-layer optimizations (direct delivery from the
//! creator, empty-path relay after delivery, skipping neighbors that
//! delivered, ignoring paths through such neighbors, stopping relays after
//! delivery). `mbd1`..`mbd12` are the cross-layer ones; see the README for a
//! one-line description of each.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ModificationConfig {
    pub md1: bool,
    pub md2: bool,
    pub md3: bool,
    pub md4: bool,
    pub md5: bool,
    pub mbd1: bool,
    pub mbd2: bool,
    pub mbd3: bool,
    pub mbd4: bool,
    pub mbd5: bool,
    pub mbd6: bool,
    pub mbd7: bool,
    pub mbd8: bool,
    pub mbd9: bool,
    pub mbd10: bool,
    pub mbd11: bool,
    pub mbd12: bool,
    /// Width of local payload IDs on the wire (1..=32).
    pub local_id_bits: u8,
}

impl Default for ModificationConfig {
    fn default() -> Self {
        Self {
            md1: false,
            md2: false,
            md3: false,
            md4: false,
            md5: false,
            mbd1: false,
            mbd2: false,
            mbd3: false,
            mbd4: false,
            mbd5: false,
            mbd6: false,
            mbd7: false,
            mbd8: false,
            mbd9: false,
            mbd10: false,
            mbd11: false,
            mbd12: false,
            local_id_bits: 16,
        }
    }
}

/// Names accepted by [`ModificationConfig::set`], in canonical order.
pub const TOGGLE_NAMES: [&str; 17] = [
    "md1", "md2", "md3", "md4", "md5", "mbd1", "mbd2", "mbd3", "mbd4", "mbd5", "mbd6", "mbd7",
    "mbd8", "mbd9", "mbd10", "mbd11", "mbd12",
];

impl ModificationConfig {
    /// Everything off: the plain Bracha-Dolev combination.
    pub fn bd() -> Self {
        Self::default()
    }

    fn slot(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "md1" => &mut self.md1,
            "md2" => &mut self.md2,
            "md3" => &mut self.md3,
            "md4" => &mut self.md4,
            "md5" => &mut self.md5,
            "mbd1" => &mut self.mbd1,
            "mbd2" => &mut self.mbd2,
            "mbd3" => &mut self.mbd3,
            "mbd4" => &mut self.mbd4,
            "mbd5" => &mut self.mbd5,
            "mbd6" => &mut self.mbd6,
            "mbd7" => &mut self.mbd7,
            "mbd8" => &mut self.mbd8,
            "mbd9" => &mut self.mbd9,
            "mbd10" => &mut self.mbd10,
            "mbd11" => &mut self.mbd11,
            "mbd12" => &mut self.mbd12,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, on: bool) -> Result<(), ConfigError> {
        let key = name.trim().to_ascii_lowercase().replace(['.', '_', '-'], "");
        match self.slot(&key) {
            Some(slot) => {
                *slot = on;
                Ok(())
            }
            None => Err(ConfigError::UnknownModification(name.to_string())),
        }
    }

    pub fn with(mut self, name: &str) -> Result<Self, ConfigError> {
        self.set(name, true)?;
        Ok(self)
    }

    pub fn is_enabled(&self, name: &str) -> bool {
        let mut copy = *self;
        copy.slot(name).map(|s| *s).unwrap_or(false)
    }

    pub fn enabled(&self) -> Vec<&'static str> {
        TOGGLE_NAMES
            .iter()
            .copied()
            .filter(|n| self.is_enabled(n))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=32).contains(&self.local_id_bits) {
            return Err(ConfigError::Invalid {
                field: "local_id_bits".into(),
                reason: format!("{} is outside 1..=32", self.local_id_bits),
            });
        }
        Ok(())
    }

    /// Looks up one of the shipped presets (`bd`, `bdopt`, `lat`, `bdw`, `latbdw`).
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
        Ok(PresetFile::parse(text)?.config)
    }
}

impl fmt::Display for ModificationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on = self.enabled();
        if on.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&on.join("+"))
        }
    }
}

impl FromStr for ModificationConfig {
    type Err = ConfigError;

    /// Accepts a preset name, or `preset+toggle+toggle`, or a bare `+`-list of toggles.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('+').map(str::trim).filter(|p| !p.is_empty());
        let mut cfg = ModificationConfig::default();
        if let Some(first) = parts.next() {
            match ModificationConfig::preset(first) {
                Ok(p) => cfg = p,
                Err(_) => cfg.set(first, true)?,
            }
        }
        for p in parts {
            cfg.set(p, true)?;
        }
        Ok(cfg)
    }
}

/// The preset files shipped under `presets/`.
pub const PRESETS: [(&str, &str); 5] = [
    ("bd", include_str!("../../../presets/bd.toml")),
    ("bdopt", include_str!("../../../presets/bdopt.toml")),
    ("lat", include_str!("../../../presets/lat.toml")),
    ("bdw", include_str!("../../../presets/bdw.toml")),
    ("latbdw", include_str!("../../../presets/latbdw.toml")),
];

#[derive(Debug, Deserialize)]
struct RawPreset {
    name: String,
    #[serde(default)]
    enabled: Vec<String>,
    #[serde(default)]
    local_id_bits: Option<u8>,
}

/// A parsed preset file.
#[derive(Clone, Debug)]
pub struct PresetFile {
    pub name: String,
    pub config: ModificationConfig,
}

impl PresetFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: RawPreset = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut config = ModificationConfig::default();
        for name in &raw.enabled {
            config.set(name, true)?;
        }
        if let Some(bits) = raw.local_id_bits {
            config.local_id_bits = bits;
        }
        config.validate()?;
        Ok(Self {
            name: raw.name,
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_load() {
        let bd = ModificationConfig::preset("bd").unwrap();
        assert_eq!(bd, ModificationConfig::default());
        let bdopt = ModificationConfig::preset("bdopt").unwrap();
        assert_eq!(bdopt.enabled(), vec!["md1", "md2", "md3", "md4", "md5"]);
        for (name, _) in PRESETS {
            let cfg = ModificationConfig::preset(name).unwrap();
            if name != "bd" {
                // every optimized preset builds on bdopt
                for md in ["md1", "md2", "md3", "md4", "md5"] {
                    assert!(cfg.is_enabled(md), "{name} lacks {md}");
                }
            }
        }
        assert!(ModificationConfig::preset("nope").is_err());
    }

    #[test]
    fn parse_expressions() {
        let c: ModificationConfig = "bdopt+mbd1".parse().unwrap();
        assert!(c.mbd1 && c.md3 && !c.mbd2);
        let c: ModificationConfig = "MBD.11+md1".parse().unwrap();
        assert!(c.mbd11 && c.md1 && !c.md2);
        assert!("bdopt+mbd13".parse::<ModificationConfig>().is_err());
        assert_eq!(c.to_string(), "md1+mbd11");
    }
}
