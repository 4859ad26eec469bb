//! Self-describing JSON snapshots of generated instances.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ConeLayout, ProblemData, ProblemInstance, ProblemSpec, GENERATOR_NAME};
use crate::error::{Error, Result};
use crate::space::Vector;

pub const FORMAT_NAME: &str = "supermann-instance";
pub const FORMAT_VERSION: u32 = 1;

/// Matrices with more entries than this are stored as nonzero triplets.
pub const TRIPLET_THRESHOLD: usize = 1_000_000;

/// A matrix (or a vector, as a single column) in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "storage", rename_all = "snake_case")]
pub enum MatrixBlob {
    Dense {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
    Triplets {
        rows: usize,
        cols: usize,
        entries: Vec<(usize, usize, f64)>,
    },
}

impl MatrixBlob {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        if rows * cols > TRIPLET_THRESHOLD {
            let mut entries = Vec::new();
            for i in 0..rows {
                for j in 0..cols {
                    if m[(i, j)] != 0.0 {
                        entries.push((i, j, m[(i, j)]));
                    }
                }
            }
            MatrixBlob::Triplets { rows, cols, entries }
        } else {
            let data = (0..rows).flat_map(|i| (0..cols).map(move |j| m[(i, j)])).collect();
            MatrixBlob::Dense { rows, cols, data }
        }
    }

    pub fn from_vector(v: &Vector) -> Self {
        Self::from_matrix(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self {
            MatrixBlob::Dense { rows, cols, data } => {
                if data.len() != rows * cols {
                    return Err(Error::Format(format!(
                        "dense blob has {} values for a {rows}x{cols} matrix",
                        data.len()
                    )));
                }
                Ok(DMatrix::from_row_slice(*rows, *cols, data))
            }
            MatrixBlob::Triplets { rows, cols, entries } => {
                let mut m = DMatrix::zeros(*rows, *cols);
                for &(i, j, v) in entries {
                    if i >= *rows || j >= *cols {
                        return Err(Error::Format(format!("triplet ({i}, {j}) outside {rows}x{cols}")));
                    }
                    m[(i, j)] = v;
                }
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub format: String,
    pub version: u32,
    pub problem: ProblemSpec,
    pub generator: String,
    pub seed: Option<u64>,
    pub dims: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cone_layout: Option<ConeLayout>,
    pub x0: Vec<f64>,
    pub data: BTreeMap<String, MatrixBlob>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn problem_blobs(inst: &ProblemInstance) -> BTreeMap<String, MatrixBlob> {
    let mut data = BTreeMap::new();
    match &inst.data {
        ProblemData::Sets { .. } => {}
        ProblemData::Lasso(l) => {
            data.insert("A".into(), MatrixBlob::from_matrix(&l.a));
            data.insert("b".into(), MatrixBlob::from_vector(&l.b));
        }
        ProblemData::Cone(c) => {
            data.insert("A".into(), MatrixBlob::from_matrix(&c.a));
            data.insert("b".into(), MatrixBlob::from_vector(&c.b));
            data.insert("c".into(), MatrixBlob::from_vector(&c.c));
        }
        ProblemData::Control(c) => {
            let (a, b) = c.dynamics();
            data.insert("A".into(), MatrixBlob::from_matrix(a));
            data.insert("B".into(), MatrixBlob::from_matrix(b));
            data.insert("x0".into(), MatrixBlob::from_vector(c.initial_state()));
            let q = c.state_weights().rows(0, c.n_x()).into_owned();
            data.insert("q".into(), MatrixBlob::from_vector(&q));
        }
    }
    data
}

pub fn export_instance(inst: &ProblemInstance) -> InstanceFile {
    let mut dims = BTreeMap::from([("operator".to_string(), inst.operator.dim())]);
    let mut cone_layout = None;
    match &inst.data {
        ProblemData::Sets { .. } => {}
        ProblemData::Lasso(l) => {
            dims.insert("m".into(), l.a.nrows());
            dims.insert("n".into(), l.a.ncols());
        }
        ProblemData::Cone(c) => {
            dims.insert("m".into(), c.m());
            dims.insert("n".into(), c.n());
            cone_layout = Some(c.layout.clone());
        }
        ProblemData::Control(c) => {
            dims.insert("n_x".into(), c.n_x());
            dims.insert("n_u".into(), c.n_u());
            dims.insert("horizon".into(), c.horizon());
        }
    }
    InstanceFile {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        problem: inst.spec.clone(),
        generator: GENERATOR_NAME.into(),
        seed: inst.spec.seed(),
        dims,
        cone_layout,
        x0: inst.x0.as_slice().to_vec(),
        data: problem_blobs(inst),
        metadata: inst.metadata.clone(),
    }
}

/// Rebuilds the instance from its recorded parameters and checks that the
/// regenerated data is bit-identical to the stored data.
pub fn import_instance(file: &InstanceFile) -> Result<ProblemInstance> {
    if file.format != FORMAT_NAME {
        return Err(Error::Format(format!("unknown format {:?}", file.format)));
    }
    if file.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {}", file.version)));
    }
    if file.generator != GENERATOR_NAME {
        return Err(Error::Format(format!("instance was generated with {}", file.generator)));
    }
    let inst = file.problem.build()?;
    let regenerated = problem_blobs(&inst);
    if regenerated.keys().ne(file.data.keys()) {
        return Err(Error::Format("stored data blocks do not match the problem".into()));
    }
    for (name, blob) in &file.data {
        if blob.to_matrix()? != regenerated[name].to_matrix()? {
            return Err(Error::Format(format!(
                "stored block {name} differs from the regenerated instance"
            )));
        }
    }
    if inst.x0.as_slice() != file.x0.as_slice() {
        return Err(Error::Format(
            "stored starting point differs from the regenerated instance".into(),
        ));
    }
    Ok(inst)
}
