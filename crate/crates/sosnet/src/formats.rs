//! JSON and JSONL file formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sosnet_core::linalg::Matrix;
use sosnet_core::models::{ModelConfig, ModelInput};
use sosnet_core::nn::Params;
use sosnet_core::polycore::{BinaryForm, InhomogPoly, SymMatrix};

/// `{"degree": d, "coeffs": [c0, …, cd]}`, coefficient `i` on `x^i y^(d-i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormJson {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

impl From<&BinaryForm> for FormJson {
    fn from(p: &BinaryForm) -> Self {
        Self { degree: p.degree(), coeffs: p.coeffs().to_vec() }
    }
}

impl FormJson {
    pub fn to_form(&self) -> Result<BinaryForm> {
        if self.coeffs.len() != self.degree + 1 {
            bail!("degree {} needs {} coefficients, got {}", self.degree, self.degree + 1, self.coeffs.len());
        }
        Ok(BinaryForm::new(self.coeffs.clone())?)
    }
}

/// Record input: a single form, or the homogeneous components of degree `0..=d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputJson {
    Form(FormJson),
    Components { components: Vec<FormJson> },
}

impl From<&ModelInput> for InputJson {
    fn from(x: &ModelInput) -> Self {
        match x {
            ModelInput::Form(p) => Self::Form(p.into()),
            ModelInput::Inhomog(q) => Self::Components { components: q.components().iter().map(FormJson::from).collect() },
        }
    }
}

impl InputJson {
    pub fn to_input(&self) -> Result<ModelInput> {
        Ok(match self {
            Self::Form(f) => ModelInput::Form(f.to_form()?),
            Self::Components { components } => ModelInput::Inhomog(InhomogPoly::new(
                components.iter().map(FormJson::to_form).collect::<Result<Vec<_>>>()?,
            )?),
        })
    }
}

/// Gram-matrix label as rows, or a scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelJson {
    Matrix(Vec<Vec<f64>>),
    Scalar(f64),
}

pub fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn rows_to_sym(rows: &[Vec<f64>]) -> Result<SymMatrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        bail!("matrix is not square");
    }
    Ok(SymMatrix::from_matrix(Matrix::from_vec(n, n, rows.concat()))?)
}

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordJson {
    pub input: InputJson,
    pub label: LabelJson,
    pub meta: Value,
}

/// Solver output: `Q` row-major with its dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateJson {
    pub dim: usize,
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    pub psd_margin: f64,
    pub coeff_residual: f64,
    pub iterations: usize,
    pub wall_time_ms: f64,
}

impl CertificateJson {
    pub fn to_sym(&self) -> Result<SymMatrix> {
        if self.q.len() != self.dim * self.dim {
            bail!("Q has {} entries, expected {}", self.q.len(), self.dim * self.dim);
        }
        Ok(SymMatrix::from_matrix(Matrix::from_vec(self.dim, self.dim, self.q.clone()))?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    pub activation: String,
    pub init: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorJson {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Header plus parameter tensors in declaration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointJson {
    pub header: CheckpointHeader,
    pub params: Vec<TensorJson>,
}

impl CheckpointJson {
    pub fn new(config: ModelConfig, seed: u64, epoch: usize, params: &Params) -> Self {
        let tensors = params
            .ids()
            .map(|id| {
                let (r, c) = params.shape(id);
                TensorJson { name: params.name(id).to_string(), shape: [r, c], data: params.get(id).to_vec() }
            })
            .collect();
        Self {
            header: CheckpointHeader {
                kind: config.kind().to_string(),
                config,
                seed,
                epoch,
                activation: "relu".into(),
                init: "normal(0, 2/fan_in), zero bias".into(),
            },
            params: tensors,
        }
    }

    /// Copies stored tensors into `params`, checking names and shapes.
    pub fn load_into(&self, params: &mut Params) -> Result<()> {
        let ids: Vec<_> = params.ids().collect();
        if ids.len() != self.params.len() {
            bail!("checkpoint has {} tensors, model has {}", self.params.len(), ids.len());
        }
        for (id, t) in ids.into_iter().zip(&self.params) {
            let (r, c) = params.shape(id);
            if params.name(id) != t.name || [r, c] != t.shape || t.data.len() != r * c {
                bail!("tensor {} does not match model tensor {}", t.name, params.name(id));
            }
            params.get_mut(id).copy_from_slice(&t.data);
        }
        Ok(())
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<RecordJson>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[RecordJson]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn form_round_trip() {
        let p = BinaryForm::new(vec![1.0, 0.0, 2.0]).unwrap();
        let s = serde_json::to_string(&FormJson::from(&p)).unwrap();
        assert_eq!(s, r#"{"degree":2,"coeffs":[1.0,0.0,2.0]}"#);
        let back: FormJson = serde_json::from_str(&s).unwrap();
        assert_eq!(back.to_form().unwrap(), p);
        let bad = FormJson { degree: 3, coeffs: vec![1.0] };
        assert!(bad.to_form().is_err());
    }

    #[test]
    fn record_inputs_and_labels_are_untagged() {
        let r: RecordJson = serde_json::from_str(
            r#"{"input":{"components":[{"degree":0,"coeffs":[1.0]},{"degree":1,"coeffs":[0.0,2.0]}]},"label":-0.5,"meta":{}}"#,
        )
        .unwrap();
        assert_eq!(r.label, LabelJson::Scalar(-0.5));
        let ModelInput::Inhomog(q) = r.input.to_input().unwrap() else { panic!() };
        assert_eq!(q.degree(), 1);
        let r: RecordJson =
            serde_json::from_str(r#"{"input":{"degree":2,"coeffs":[1,0,1]},"label":[[1,0],[0,1]],"meta":{"dist":"x"}}"#).unwrap();
        assert!(matches!(r.input, InputJson::Form(_)));
        assert_eq!(rows_to_sym(match &r.label {
            LabelJson::Matrix(m) => m,
            _ => panic!(),
        })
        .unwrap()
        .dim(), 2);
    }
}
