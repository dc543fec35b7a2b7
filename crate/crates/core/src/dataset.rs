use serde::{Deserialize, Serialize};

use crate::error::{AosError, Result};

/// Measured inputs with all M outputs per measurement.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    /// `outputs[i][m]` is output `m` of measurement `i`.
    pub outputs: Vec<Vec<f64>>,
    pub n_outputs: usize,
}

impl Dataset {
    pub fn new(n_outputs: usize) -> Self {
        Dataset {
            inputs: Vec::new(),
            outputs: Vec::new(),
            n_outputs,
        }
    }

    pub fn push(&mut self, input: Vec<f64>, output: Vec<f64>) -> Result<()> {
        if output.len() != self.n_outputs {
            return Err(AosError::Contract(format!(
                "measurement has {} outputs, dataset expects {}",
                output.len(),
                self.n_outputs
            )));
        }
        if let Some(first) = self.inputs.first() {
            if first.len() != input.len() {
                return Err(AosError::Contract("input dimension changed".into()));
            }
        }
        self.inputs.push(input);
        self.outputs.push(output);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Column `m` of the outputs.
    pub fn targets(&self, m: usize) -> Vec<f64> {
        self.outputs.iter().map(|o| o[m]).collect()
    }
}
