//! Run configuration: a TOML file with `[data]`, `[model]`, `[train]` and
//! `[eval]` tables, layered over a size profile. Command-line flags are
//! applied last and win over the file.

use std::fs;
use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use xmreid::data::DataConfig;
use xmreid::eval::EvalConfig;
use xmreid::model::ModelConfig;
use xmreid::trainer::TrainConfig;
use xmreid::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 96x48 images, four stages of two residual units.
    #[default]
    Full,
    /// 48x24 images, narrow single-unit stages.
    Compact,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (data, model) = match profile {
            Profile::Full => (DataConfig::default(), ModelConfig::default()),
            Profile::Compact => (DataConfig::compact(), ModelConfig::compact()),
        };
        Self {
            profile,
            data,
            model,
            ..Self::default()
        }
    }

    /// Profile defaults, overlaid with `file` if given. `profile` on the
    /// command line beats the file's `profile` key.
    pub fn load(file: Option<&Path>, profile: Option<Profile>) -> Result<Self> {
        let table = match file {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let from_file = match table.get("profile") {
            Some(v) => Some(
                v.clone()
                    .try_into::<Profile>()
                    .map_err(|e| Error::Config(format!("profile: {e}")))?,
            ),
            None => None,
        };
        let profile = profile.or(from_file).unwrap_or_default();
        let mut base = toml::Table::try_from(Self::for_profile(profile))
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, table);
        base.insert("profile".into(), toml::Value::try_from(profile).expect("enum serializes"));
        let cfg: Self = toml::Value::Table(base).try_into()?;
        Ok(cfg)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_profile_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "profile = \"compact\"\n[model]\nn_parts = 2\n[train]\nepochs_per_side = 3\n").unwrap();
        let c = RunConfig::load(Some(&p), None).unwrap();
        assert_eq!(c.profile, Profile::Compact);
        assert_eq!(c.model.n_parts, 2);
        assert_eq!(c.model.stage_channels, ModelConfig::compact().stage_channels);
        assert_eq!(c.data.height, 48);
        assert_eq!(c.train.epochs_per_side, 3);

        let c = RunConfig::load(Some(&p), Some(Profile::Full)).unwrap();
        assert_eq!(c.data.height, 96);
        assert_eq!(c.model.n_parts, 2);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "[train]\nepochs = 3\n").unwrap();
        assert!(matches!(RunConfig::load(Some(&p), None), Err(Error::Config(_))));
    }
}
