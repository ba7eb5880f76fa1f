//! Fit configuration file: flat TOML key-value pairs, every key optional.

use gdn_core::{FitConfig, GdnError, InitMode, Tying};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitFile {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub final_lr_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// full | column-tied-alpha | diagonal-gamma | radial | lp-radial |
    /// subspaces | classic-dn
    pub tying: String,
    /// Exponent for `lp-radial`.
    pub p: f64,
    /// Block size for `subspaces`; contiguous coordinates are grouped.
    pub subspace_size: usize,
    /// standard | zca | identity
    pub init: String,
    /// More than one fits a cascade; later stages start at the identity.
    pub stages: usize,
}

impl Default for FitFile {
    fn default() -> Self {
        let d = FitConfig::default();
        FitFile {
            batch_size: d.batch_size,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            final_lr_fraction: d.final_lr_fraction,
            adam_beta1: d.adam_beta1,
            adam_beta2: d.adam_beta2,
            adam_eps: d.adam_eps,
            seed: d.seed,
            tying: "full".into(),
            p: 2.0,
            subspace_size: 2,
            init: "standard".into(),
            stages: 1,
        }
    }
}

pub fn parse_tying(
    name: &str,
    dim: usize,
    p: f64,
    subspace_size: usize,
) -> Result<Tying, GdnError> {
    Ok(match name {
        "full" => Tying::Full,
        "column-tied-alpha" => Tying::ColumnTiedAlpha,
        "diagonal-gamma" | "ica-mg" => Tying::DiagonalGamma,
        "radial" | "rg" => Tying::Radial,
        "lp-radial" => Tying::LpRadial { p },
        "classic-dn" => Tying::ClassicDn,
        "subspaces" => {
            if subspace_size == 0 || !dim.is_multiple_of(subspace_size) {
                return Err(GdnError::InvalidArgument(format!(
                    "subspace_size {subspace_size} does not divide dimension {dim}"
                )));
            }
            Tying::Subspaces {
                partition: (0..dim / subspace_size)
                    .map(|k| (k * subspace_size..(k + 1) * subspace_size).collect())
                    .collect(),
            }
        }
        other => {
            return Err(GdnError::InvalidArgument(format!(
                "unknown tying '{other}'"
            )))
        }
    })
}

pub fn parse_init(name: &str) -> Result<InitMode, GdnError> {
    match name {
        "standard" => Ok(InitMode::Standard),
        "zca" => Ok(InitMode::Zca),
        "identity" => Ok(InitMode::Identity),
        other => Err(GdnError::InvalidArgument(format!("unknown init '{other}'"))),
    }
}

impl FitFile {
    pub fn parse(text: &str) -> Result<Self, GdnError> {
        toml::from_str(text)
            .map_err(|e| GdnError::InvalidArgument(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain fields serialize")
    }

    /// Optimizer settings for a `dim`-dimensional data set.
    pub fn resolve(&self, dim: usize) -> Result<FitConfig, GdnError> {
        if self.stages == 0 {
            return Err(GdnError::InvalidArgument(
                "stages must be at least 1".into(),
            ));
        }
        let config = FitConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            final_lr_fraction: self.final_lr_fraction,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            seed: self.seed,
            tying: parse_tying(&self.tying, dim, self.p, self.subspace_size)?,
            init: parse_init(&self.init)?,
        };
        config.validate(dim)?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_the_library_defaults() {
        let f = FitFile::parse("").unwrap();
        assert_eq!(f.resolve(4).unwrap(), FitConfig::default());
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let f = FitFile::parse("epochs = 3\ntying = \"subspaces\"\nsubspace_size = 2\n").unwrap();
        assert_eq!(FitFile::parse(&f.to_toml()).unwrap(), f);
        match f.resolve(6).unwrap().tying {
            Tying::Subspaces { partition } => assert_eq!(partition.len(), 3),
            t => panic!("{t:?}"),
        }
        assert!(f.resolve(5).is_err());
    }

    #[test]
    fn unknown_keys_and_names_are_rejected() {
        assert!(FitFile::parse("epoch = 3").is_err());
        let f = FitFile::parse("tying = \"bogus\"").unwrap();
        assert!(f.resolve(2).is_err());
    }
}
