//! Naming and constructing models from configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::models::{DiscreteKind, Gmm, Gsc, LinearDiscrete, MaxCauses, Pmm};
use crate::truncation::TruncationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bsc,
    Tsc,
    Dsc,
    Gsc,
    Mca,
    Mmca,
    Gmm,
    Pmm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::Bsc,
        ModelKind::Tsc,
        ModelKind::Dsc,
        ModelKind::Gsc,
        ModelKind::Mca,
        ModelKind::Mmca,
        ModelKind::Gmm,
        ModelKind::Pmm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Bsc => "bsc",
            ModelKind::Tsc => "tsc",
            ModelKind::Dsc => "dsc",
            ModelKind::Gsc => "gsc",
            ModelKind::Mca => "mca",
            ModelKind::Mmca => "mmca",
            ModelKind::Gmm => "gmm",
            ModelKind::Pmm => "pmm",
        }
    }

    /// Whether the model enumerates truncated state sets.
    pub fn is_truncated(self) -> bool {
        !matches!(self, ModelKind::Gmm | ModelKind::Pmm)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown model `{s}`")))
    }
}

/// Everything needed to rebuild a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub latents: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hprime: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<usize>,
    /// DSC alphabet, including 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    /// DSC: tie `p(φ) = p(−φ)`.
    #[serde(default)]
    pub symmetric: bool,
}

/// Receives the concrete model built from a [`ModelSpec`].
pub trait ModelVisitor {
    type Output;

    fn visit<M: Model>(self, model: M) -> Self::Output;
}

impl ModelSpec {
    pub fn new(kind: ModelKind, latents: usize) -> Self {
        Self {
            kind,
            latents,
            hprime: None,
            gamma: None,
            values: None,
            symmetric: false,
        }
    }

    pub fn with_truncation(mut self, hprime: usize, gamma: usize) -> Self {
        self.hprime = Some(hprime);
        self.gamma = Some(gamma);
        self
    }

    pub fn with_values(mut self, values: Vec<f64>, symmetric: bool) -> Self {
        self.values = Some(values);
        self.symmetric = symmetric;
        self
    }

    pub fn truncation(&self) -> Result<TruncationConfig> {
        let hprime = self
            .hprime
            .ok_or_else(|| Error::config(format!("--hprime is required for model {}", self.kind)))?;
        let gamma = self
            .gamma
            .ok_or_else(|| Error::config(format!("--gamma is required for model {}", self.kind)))?;
        TruncationConfig::new(self.latents, hprime, gamma)
    }

    /// Validates the description without building the model.
    pub fn validate(&self) -> Result<()> {
        self.build(Validate)
    }

    pub fn build<V: ModelVisitor>(&self, visitor: V) -> Result<V::Output> {
        if self.kind != ModelKind::Dsc && self.values.is_some() {
            return Err(Error::config(format!("--values only applies to dsc, not {}", self.kind)));
        }
        Ok(match self.kind {
            ModelKind::Bsc => visitor.visit(LinearDiscrete::bsc(self.truncation()?)?),
            ModelKind::Tsc => visitor.visit(LinearDiscrete::tsc(self.truncation()?)?),
            ModelKind::Dsc => {
                let alphabet = self
                    .values
                    .clone()
                    .ok_or_else(|| Error::config("model dsc requires --values"))?;
                let kind = DiscreteKind::Discrete {
                    alphabet,
                    symmetric: self.symmetric,
                };
                visitor.visit(LinearDiscrete::new(kind, self.truncation()?)?)
            }
            ModelKind::Gsc => visitor.visit(Gsc::new(self.truncation()?)?),
            ModelKind::Mca => visitor.visit(MaxCauses::mca(self.truncation()?)?),
            ModelKind::Mmca => visitor.visit(MaxCauses::mmca(self.truncation()?)?),
            ModelKind::Gmm => visitor.visit(Gmm::new(self.latents)?),
            ModelKind::Pmm => visitor.visit(Pmm::new(self.latents)?),
        })
    }
}

struct Validate;

impl ModelVisitor for Validate {
    type Output = ();

    fn visit<M: Model>(self, _: M) {}
}
