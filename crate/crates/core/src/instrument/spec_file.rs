//! JSON instrument description.
//!
//! ```json
//! { "dim": 2,
//!   "alphabet": ["0", "1"],
//!   "kraus": [ [ [[[1,0],[0,0]], [[0,0],[0.8,0]]] ],
//!              [ [[[0,0],[0.6,0]], [[0,0],[0,0]]] ] ],
//!   "model": { "name": "amplitude-damping", "params": { "gamma": 0.36 } } }
//! ```
//!
//! `kraus[a]` lists the operators of outcome `a`; each operator is a list of
//! rows and each entry an `[re, im]` pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument::KrausInstrument;
use crate::linalg::{ComplexMatrix, C64};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelReference {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InstrumentSpec {
    pub dim: usize,
    pub alphabet: Vec<String>,
    pub kraus: Vec<Vec<Vec<Vec<[f64; 2]>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelReference>,
}

impl InstrumentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("instrument spec: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instrument spec serializes")
    }

    pub fn from_instrument(inst: &KrausInstrument) -> Self {
        let d = inst.dim();
        let kraus = (0..inst.n_outcomes())
            .map(|a| {
                inst.kraus(a).iter().map(|m| (0..d).map(|i| (0..d).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()).collect()
            })
            .collect();
        Self { dim: d, alphabet: inst.alphabet().to_vec(), kraus, model: None }
    }

    pub fn build(&self) -> Result<KrausInstrument> {
        let mut lists = Vec::with_capacity(self.kraus.len());
        for outcome in &self.kraus {
            let mut ops = Vec::with_capacity(outcome.len());
            for rows in outcome {
                let rows: Vec<Vec<C64>> = rows.iter().map(|r| r.iter().map(|&[re, im]| C64::new(re, im)).collect()).collect();
                if rows.len() != self.dim {
                    return Err(Error::Structure(format!("operator has {} rows, expected {}", rows.len(), self.dim)));
                }
                ops.push(ComplexMatrix::from_rows(&rows)?);
            }
            lists.push(ops);
        }
        KrausInstrument::new(self.dim, self.alphabet.clone(), lists)
    }
}
