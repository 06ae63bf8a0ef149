//! Switches that remove or replace individual model components.

use std::fmt;

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationConfig {
    /// Drop behavior and time embeddings; feed item plus positional embeddings.
    pub context_embedding_off: bool,
    /// Skip the self-attention encoder.
    pub sequence_encoder_off: bool,
    /// One shared transformation instead of per-behavior channel mixtures.
    pub multi_channel_off: bool,
    /// Skip global user aggregation and sub-user refinement.
    pub global_context_off: bool,
    /// Concatenate behavior embeddings and project instead of attending.
    pub concat_aggregation: bool,
    /// Weight behaviors by their interaction frequency instead of attending.
    pub frequency_aggregation: bool,
}

/// How per-behavior embeddings are fused into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    Attention,
    Concat,
    Frequency,
}

impl AblationConfig {
    pub const FLAGS: [&'static str; 6] = ["ce", "sd", "mcp", "lbd", "cta", "fba"];

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.concat_aggregation && self.frequency_aggregation {
            return Err(ConfigError::Invalid(
                "concat and frequency aggregation are mutually exclusive".into(),
            ));
        }
        Ok(())
    }

    pub fn fusion(&self) -> Fusion {
        if self.concat_aggregation {
            Fusion::Concat
        } else if self.frequency_aggregation {
            Fusion::Frequency
        } else {
            Fusion::Attention
        }
    }

    /// Turn on the variant named by a short flag (`ce`, `sd`, `mcp`, `lbd`, `cta`, `fba`).
    pub fn enable(&mut self, flag: &str) -> Result<(), ConfigError> {
        match flag.to_ascii_lowercase().as_str() {
            "ce" => self.context_embedding_off = true,
            "sd" => self.sequence_encoder_off = true,
            "mcp" => self.multi_channel_off = true,
            "lbd" => self.global_context_off = true,
            "cta" => self.concat_aggregation = true,
            "fba" => self.frequency_aggregation = true,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown ablation `{other}`; expected one of {:?}",
                    Self::FLAGS
                )))
            }
        }
        self.validate()
    }

    pub fn from_flags<'a>(flags: impl IntoIterator<Item = &'a str>) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for f in flags {
            cfg.enable(f)?;
        }
        Ok(cfg)
    }
}

impl fmt::Display for AblationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on = [
            self.context_embedding_off,
            self.sequence_encoder_off,
            self.multi_channel_off,
            self.global_context_off,
            self.concat_aggregation,
            self.frequency_aggregation,
        ];
        let names: Vec<&str> = Self::FLAGS
            .iter()
            .zip(on)
            .filter(|(_, b)| *b)
            .map(|(n, _)| *n)
            .collect();
        if names.is_empty() {
            write!(f, "full")
        } else {
            write!(f, "{}", names.join("+"))
        }
    }
}
