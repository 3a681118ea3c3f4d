use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The five experiment recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    /// Grokking on modular addition.
    Q1E1,
    /// Loss-drop transitions in toy models of superposition.
    Q1E2,
    /// LLC versus polynomial degree.
    Q2E1,
    /// LLC versus rank of a factored linear map.
    Q2E2,
    /// LLC versus bottleneck data rank of a ReLU autoencoder.
    Q2E3,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::Q1E1,
        ExperimentId::Q1E2,
        ExperimentId::Q2E1,
        ExperimentId::Q2E2,
        ExperimentId::Q2E3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Q1E1 => "Q1E1",
            ExperimentId::Q1E2 => "Q1E2",
            ExperimentId::Q2E1 => "Q2E1",
            ExperimentId::Q2E2 => "Q2E2",
            ExperimentId::Q2E3 => "Q2E3",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownExperiment(s.to_string()))
    }
}
