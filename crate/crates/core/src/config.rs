//! The JSON document driving a whole pipeline run.
//!
//! Every section is optional and falls back to its module's defaults. Unknown keys
//! are rejected at every level. `globalSeed` is the seed of the dataset split and the
//! default seed of each section that has one; a `seed` key written inside a section
//! takes precedence for that section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::aae::AaeConfig;
use crate::cnn::CnnConfig;
use crate::dsp::DspConfig;
use crate::synth::SynthConfig;
use crate::topomap::TopomapConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct PipelineConfig {
    pub global_seed: u64,
    pub synth: SynthConfig,
    pub dsp: DspConfig,
    pub topomap: TopomapConfig,
    pub cnn: CnnConfig,
    pub aae: AaeConfig,
}

/// Sections carrying their own `seed` field.
const SEEDED_SECTIONS: [&str; 3] = ["synth", "cnn", "aae"];

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut doc: Value =
            serde_json::from_str(text).map_err(|e| Error::format(format!("config: {e}")))?;
        let root = doc
            .as_object_mut()
            .ok_or_else(|| Error::format("config must be a JSON object"))?;
        let global = match root.get("globalSeed") {
            None => Value::from(0u64),
            Some(v) if v.is_u64() => v.clone(),
            Some(v) => {
                return Err(Error::format(format!(
                    "config: globalSeed must be a non-negative integer, got {v}"
                )))
            }
        };
        for name in SEEDED_SECTIONS {
            let section = root
                .entry(name)
                .or_insert_with(|| Value::Object(Default::default()));
            if let Some(obj) = section.as_object_mut() {
                obj.entry("seed").or_insert_with(|| global.clone());
            }
        }
        let cfg: PipelineConfig =
            serde_json::from_value(doc).map_err(|e| Error::format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.topomap.validate()?;
        self.cnn.validate()?;
        self.aae.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn global_seed_fills_sections_without_their_own() {
        let cfg =
            PipelineConfig::from_json(r#"{"globalSeed": 9, "cnn": {"seed": 4, "epochs": 2}}"#)
                .unwrap();
        assert_eq!(cfg.global_seed, 9);
        assert_eq!(cfg.synth.seed, 9);
        assert_eq!(cfg.aae.seed, 9);
        assert_eq!((cfg.cnn.seed, cfg.cnn.epochs), (4, 2));
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        assert!(PipelineConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"cnn": {"bogus": 1}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"synth": {"timeline": {"bogus": 1}}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"globalSeed": -1}"#).is_err());
        assert!(PipelineConfig::from_json("[]").is_err());
    }

    #[test]
    fn invalid_values_are_domain_errors() {
        let err = PipelineConfig::from_json(r#"{"aae": {"labeledFraction": 0}}"#).unwrap_err();
        assert_eq!(err.code(), "domain");
    }

    #[test]
    fn serialized_config_reads_back() {
        let mut cfg = PipelineConfig {
            global_seed: 3,
            ..PipelineConfig::default()
        };
        cfg.cnn.epochs = 7;
        cfg.synth.n_subjects = 2;
        assert_eq!(PipelineConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
