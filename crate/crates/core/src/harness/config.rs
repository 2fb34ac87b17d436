use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::metrics::Loss;
use crate::nn::{Architecture, InitScheme};

/// One training setup plus grid dimensions and seeds. Keys mirror the
/// hyperparameter table columns: `architecture`, `loss`, `dataset`,
/// `encoder`, `batch_size`, `learning_rate`, `gd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment_id: u32,
    pub architecture: Architecture,
    pub loss: Loss,
    #[serde(default)]
    pub dataset: String,
    /// First hidden layer multiplier `n1` (width `n1 * E`); basic only.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "ser_encoder",
        deserialize_with = "de_encoder"
    )]
    pub encoder: Option<usize>,
    /// Number of endmembers; taken from the ground truth when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endmembers: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Gaussian dropout rate; original only.
    #[serde(default)]
    pub gd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    pub init: InitScheme,
    #[serde(rename = "N")]
    pub inits: usize,
    #[serde(rename = "k")]
    pub runs: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Global min-max scaling of the pixels before training.
    #[serde(default)]
    pub scaling: bool,
}

impl ExperimentConfig {
    pub const DEFAULT_EPOCHS_ORIGINAL: usize = 100;
    pub const DEFAULT_EPOCHS_BASIC: usize = 400;

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.architecture {
            Architecture::Original => Self::DEFAULT_EPOCHS_ORIGINAL,
            Architecture::Basic => Self::DEFAULT_EPOCHS_BASIC,
        })
    }

    pub fn n1(&self) -> usize {
        self.encoder.unwrap_or(1)
    }

    pub fn gd_rate(&self) -> f64 {
        match self.architecture {
            Architecture::Original => self.gd,
            Architecture::Basic => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.inits < 1 || self.runs < 1 {
            return fail("N and k must be >= 1");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1");
        }
        if self.architecture == Architecture::Original && self.batch_size < 2 {
            return fail("batch_size must be >= 2 for the original architecture (batch norm)");
        }
        if self.epochs() < 1 {
            return fail("epochs must be >= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.gd) {
            return fail("gd must lie in [0, 1)");
        }
        if self.architecture == Architecture::Basic && self.encoder.is_none() {
            return fail("the basic architecture needs an encoder width, e.g. encoder = \"10E\"");
        }
        if matches!(self.endmembers, Some(e) if e < 2) {
            return fail("endmembers must be >= 2");
        }
        if self.encoder == Some(0) {
            return fail("encoder multiplier must be >= 1");
        }
        Ok(())
    }

    /// The ten reference setups (ids 1-10), with the given initializer and
    /// grid size. `dataset` is `"samson"` or `"jasper"`.
    pub fn table1(id: u32, init: InitScheme, inits: usize, runs: usize) -> Option<Self> {
        use Architecture::{Basic, Original};
        use Loss::{Mse, Sad};
        let (architecture, loss, dataset, encoder, batch_size, learning_rate, gd) = match id {
            1 => (Original, Mse, "samson", None, 100, 0.01, 0.0),
            2 => (Original, Sad, "samson", None, 100, 0.01, 0.0),
            3 => (Original, Sad, "samson", None, 20, 0.01, 0.1),
            4 => (Basic, Mse, "samson", Some(10), 4, 0.0001, 0.0),
            5 => (Basic, Sad, "samson", Some(20), 4, 0.0001, 0.0),
            6 => (Original, Mse, "jasper", None, 100, 0.01, 0.0),
            7 => (Original, Sad, "jasper", None, 100, 0.01, 0.0),
            8 => (Original, Mse, "jasper", None, 5, 0.01, 0.1),
            9 => (Original, Sad, "jasper", None, 5, 0.01, 0.1),
            10 => (Basic, Mse, "jasper", Some(10), 20, 0.001, 0.0),
            _ => return None,
        };
        Some(Self {
            experiment_id: id,
            architecture,
            loss,
            dataset: dataset.to_string(),
            encoder,
            endmembers: Some(if dataset == "samson" { 3 } else { 4 }),
            batch_size,
            learning_rate,
            gd,
            epochs: None,
            init,
            inits,
            runs,
            master_seed: 0,
            scaling: false,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `text`, applies `key=value` overrides, then validates. Values
    /// are read as TOML literals, falling back to plain strings.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let key = key.trim();
            let raw = raw.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.to_string(), value);
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn ser_encoder<S: Serializer>(v: &Option<usize>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(n) => s.serialize_str(&format!("{n}E")),
        None => s.serialize_none(),
    }
}

fn de_encoder<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(usize),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Int(n) => Ok(Some(n)),
        Raw::Text(s) => {
            let t = s.trim();
            let digits = t.strip_suffix(['E', 'e']).unwrap_or(t);
            digits
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| serde::de::Error::custom(format!("bad encoder width {s:?}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
        experiment_id = 4
        architecture = "basic"
        loss = "MSE"
        dataset = "samson"
        endmembers = 3
        encoder = "10E"
        batch_size = 4
        learning_rate = 0.0001
        init = "KHU"
        N = 50
        k = 50
        master_seed = 1
    "#;

    #[test]
    fn parses_table_style_config() {
        let cfg = ExperimentConfig::from_toml(BASIC).unwrap();
        assert_eq!(cfg.encoder, Some(10));
        assert_eq!(cfg.epochs(), 400);
        assert_eq!(cfg, ExperimentConfig::from_toml(&cfg.to_toml()).unwrap());
        let preset = ExperimentConfig::table1(4, InitScheme::HeUniform, 50, 50).unwrap();
        assert_eq!(
            ExperimentConfig {
                master_seed: 1,
                ..preset
            },
            cfg
        );
    }

    #[test]
    fn overrides_apply_and_validate() {
        let cfg = ExperimentConfig::from_toml_with_overrides(
            BASIC,
            &[
                "N=2".into(),
                "init=XGN".into(),
                "epochs=3".into(),
                "encoder=20".into(),
            ],
        )
        .unwrap();
        assert_eq!(
            (cfg.inits, cfg.init, cfg.epochs(), cfg.n1()),
            (2, InitScheme::GlorotNormal, 3, 20)
        );
        assert!(ExperimentConfig::from_toml_with_overrides(BASIC, &["bogus=1".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides(BASIC, &["k=0".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides(BASIC, &["N".into()]).is_err());
    }

    #[test]
    fn original_needs_batch_of_two() {
        let mut cfg = ExperimentConfig::table1(3, InitScheme::GlorotUniform, 2, 2).unwrap();
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn presets_cover_ten_rows() {
        for id in 1..=10 {
            let c = ExperimentConfig::table1(id, InitScheme::HeNormal, 1, 1).unwrap();
            c.validate().unwrap();
        }
        assert!(ExperimentConfig::table1(11, InitScheme::HeNormal, 1, 1).is_none());
        let c = ExperimentConfig::table1(3, InitScheme::HeNormal, 1, 1).unwrap();
        assert_eq!((c.batch_size, c.learning_rate, c.gd), (20, 0.01, 0.1));
    }
}
