//! JSON instance files.
//!
//! ```json
//! {
//!   "n": 2,
//!   "m": 1,
//!   "objective": { "Q": [[1, 1, 1.0], [1, 2, 0.5]], "q": [0.0, 0.0] },
//!   "constraints": [
//!     { "Q": [[1, 1, 1.0], [2, 2, 1.0]], "q": [0.0, 0.0], "b": 1.0, "sense": "le" }
//!   ]
//! }
//! ```
//!
//! Matrices are `[i, j, v]` triplets with 1-based indices. Writers emit the
//! upper triangle (`i ≤ j`); readers also accept `i > j` and mirror it, but a
//! position given twice is an error. `q` may be omitted for zero vectors and
//! `m` may be omitted.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{QcqpConstraint, QcqpInstance, QuadraticForm, Sense};
use crate::symlin::SymMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormFile {
    #[serde(rename = "Q")]
    pub quad: Vec<(usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFile {
    #[serde(rename = "Q")]
    pub quad: Vec<(usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    pub b: f64,
    pub sense: SenseFile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SenseFile {
    Le,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    pub objective: FormFile,
    #[serde(default)]
    pub constraints: Vec<ConstraintFile>,
}

fn matrix_from_triplets(n: usize, triplets: &[(usize, usize, f64)], what: &str) -> Result<SymMatrix> {
    let mut m = SymMatrix::zeros(n);
    let mut seen = std::collections::BTreeSet::new();
    for &(i, j, v) in triplets {
        if i == 0 || j == 0 || i > n || j > n {
            return Err(Error::Format(format!("{what}: index ({i}, {j}) outside 1..={n}")));
        }
        if !v.is_finite() {
            return Err(Error::Format(format!("{what}: non-finite value at ({i}, {j})")));
        }
        let key = (i.min(j), i.max(j));
        if !seen.insert(key) {
            return Err(Error::Format(format!("{what}: entry ({}, {}) given twice", key.0, key.1)));
        }
        m.set(key.0 - 1, key.1 - 1, v);
    }
    Ok(m)
}

fn triplets_from_matrix(m: &SymMatrix) -> Vec<(usize, usize, f64)> {
    let n = m.dim();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            let v = m.get(i, j);
            if v != 0.0 {
                out.push((i + 1, j + 1, v));
            }
        }
    }
    out
}

fn form(n: usize, quad: &[(usize, usize, f64)], q: &Option<Vec<f64>>, what: &str) -> Result<QuadraticForm> {
    let mat = matrix_from_triplets(n, quad, what)?;
    let lin = match q {
        None => DVector::zeros(n),
        Some(v) if v.len() == n => DVector::from_column_slice(v),
        Some(v) => return Err(Error::Format(format!("{what}: q has length {}, expected {n}", v.len()))),
    };
    QuadraticForm::new(mat, lin)
}

fn linear_part(f: &QuadraticForm) -> Option<Vec<f64>> {
    f.has_linear_term().then(|| f.lin.iter().copied().collect())
}

impl InstanceFile {
    pub fn to_instance(&self) -> Result<QcqpInstance> {
        if let Some(m) = self.m {
            if m != self.constraints.len() {
                return Err(Error::Format(format!("m = {m} but {} constraints given", self.constraints.len())));
            }
        }
        if self.n == 0 {
            return Err(Error::Format("n must be positive".into()));
        }
        let objective = form(self.n, &self.objective.quad, &self.objective.q, "objective")?;
        let constraints = self
            .constraints
            .iter()
            .enumerate()
            .map(|(p, c)| {
                let f = form(self.n, &c.quad, &c.q, &format!("constraint {}", p + 1))?;
                Ok(match c.sense {
                    SenseFile::Le => QcqpConstraint::le(f, c.b),
                    SenseFile::Eq => QcqpConstraint::eq(f, c.b),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        QcqpInstance::new(objective, constraints)
    }

    pub fn from_instance(inst: &QcqpInstance) -> Self {
        InstanceFile {
            n: inst.n(),
            m: Some(inst.m()),
            objective: FormFile {
                quad: triplets_from_matrix(&inst.objective().quad),
                q: linear_part(inst.objective()),
            },
            constraints: inst
                .constraints()
                .iter()
                .map(|c| ConstraintFile {
                    quad: triplets_from_matrix(&c.form.quad),
                    q: linear_part(&c.form),
                    b: c.rhs,
                    sense: match c.sense {
                        Sense::Le => SenseFile::Le,
                        Sense::Eq => SenseFile::Eq,
                    },
                })
                .collect(),
        }
    }
}

pub fn parse_instance(text: &str) -> Result<QcqpInstance> {
    let file: InstanceFile = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    file.to_instance()
}

pub fn instance_to_json(inst: &QcqpInstance) -> String {
    serde_json::to_string_pretty(&InstanceFile::from_instance(inst)).expect("instance files always serialize")
}

pub fn read_instance(path: &Path) -> Result<QcqpInstance> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    parse_instance(&text)
}

pub fn write_instance(path: &Path, inst: &QcqpInstance) -> Result<()> {
    std::fs::write(path, instance_to_json(inst) + "\n").map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devtools::generate::{random_forest_qcqp, random_trs, Shape};

    #[test]
    fn parses_documented_example() {
        let text = r#"{
          "n": 2, "m": 1,
          "objective": { "Q": [[1, 1, 1.0], [1, 2, 0.5]], "q": [0.0, 2.0] },
          "constraints": [ { "Q": [[1, 1, 1.0], [2, 2, 1.0]], "b": 1.0, "sense": "le" } ]
        }"#;
        let inst = parse_instance(text).unwrap();
        assert_eq!(inst.n(), 2);
        assert_eq!(inst.objective().quad.get(1, 0), 0.5);
        assert_eq!(inst.objective().lin[1], 2.0);
        assert_eq!(inst.constraints()[0].sense, Sense::Le);
    }

    #[test]
    fn lower_triangle_is_mirrored_and_duplicates_rejected() {
        let text = r#"{"n": 2, "objective": {"Q": [[2, 1, 3.0]]}}"#;
        assert_eq!(parse_instance(text).unwrap().objective().quad.get(0, 1), 3.0);
        let text = r#"{"n": 2, "objective": {"Q": [[2, 1, 3.0], [1, 2, 3.0]]}}"#;
        assert!(matches!(parse_instance(text), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            r#"{"n": 2, "objective": {"Q": [[0, 1, 1.0]]}}"#,
            r#"{"n": 2, "objective": {"Q": [[1, 3, 1.0]]}}"#,
            r#"{"n": 2, "objective": {"Q": [], "q": [1.0]}}"#,
            r#"{"n": 2, "m": 1, "objective": {"Q": []}}"#,
            r#"{"n": 2, "objective": {"Q": []}, "constraints": [{"Q": [], "b": 1, "sense": "ge"}]}"#,
            "not json",
        ] {
            assert!(matches!(parse_instance(text), Err(Error::Format(_))), "{text}");
        }
    }

    #[test]
    fn round_trip() {
        for inst in [
            random_forest_qcqp(5, 2, Shape::RandomTree, false, 3).unwrap(),
            random_trs(3, 4).unwrap(),
        ] {
            let back = parse_instance(&instance_to_json(&inst)).unwrap();
            assert_eq!(back, inst);
        }
    }
}
