//! JSON checkpoints shared by teachers and students: an architecture
//! descriptor plus flattened parameter arrays with their shapes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::numkit::{Matrix, ParamTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: String,
    pub arch: serde_json::Value,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(model: &str, arch: serde_json::Value) -> Self {
        Self {
            model: model.to_string(),
            arch,
            params: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: &Matrix) {
        self.params.push(NamedTensor {
            name: name.into(),
            rows: value.rows(),
            cols: value.cols(),
            data: value.data().to_vec(),
        });
    }

    /// Copies the stored tensor `name` into `param`, rejecting shape mismatches.
    pub fn restore(&self, name: &str, param: &mut ParamTensor) -> Result<()> {
        let t = self
            .params
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if (t.rows, t.cols) != param.shape() || t.data.len() != t.rows * t.cols {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: stored shape ({}, {}) with {} values, model expects {:?}",
                t.rows,
                t.cols,
                t.data.len(),
                param.shape()
            )));
        }
        *param = ParamTensor::new(Matrix::from_vec(t.rows, t.cols, t.data.clone())?);
        Ok(())
    }

    pub fn expect_model(&self, model: &str) -> Result<()> {
        if self.model != model {
            return Err(Error::Checkpoint(format!(
                "expected a {model} checkpoint, found {}",
                self.model
            )));
        }
        Ok(())
    }

    pub fn arch<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        serde_json::from_value(self.arch.clone())
            .map_err(|e| Error::Checkpoint(format!("bad architecture descriptor: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("plain data serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
