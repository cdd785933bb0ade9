//! Model-zoo CSV files (`name,alpha_ms,beta_ms,slo_ms`).
//!
//! Two measured zoos ship with the crate: one profiled on a 1080Ti and one
//! on an A100.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::ids::ModelId;
use crate::profile::{LatencyProfile, ModelSpec, ProfileError};
use crate::time::Dur;

pub const ZOO_1080TI_CSV: &str = include_str!("../data/zoo_1080ti.csv");
pub const ZOO_A100_CSV: &str = include_str!("../data/zoo_a100.csv");

#[derive(Debug, Error)]
pub enum ZooError {
    #[error("{source_name}: line {line}: {message}")]
    Malformed {
        source_name: String,
        line: u64,
        message: String,
    },
    #[error("{source_name}: line {line}: {source}")]
    Profile {
        source_name: String,
        line: u64,
        source: ProfileError,
    },
    #[error("unknown zoo `{0}` (expected `1080ti`, `a100`, or a CSV path)")]
    UnknownZoo(String),
    #[error("model `{name}` not found in zoo `{zoo}`")]
    UnknownModel { zoo: String, name: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One zoo row, in milliseconds.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ZooEntry {
    pub name: String,
    pub alpha_ms: f64,
    pub beta_ms: f64,
    pub slo_ms: f64,
}

impl ZooEntry {
    pub fn profile(&self) -> Result<LatencyProfile, ProfileError> {
        LatencyProfile::linear_ms(self.alpha_ms, self.beta_ms)
    }

    pub fn to_spec(&self, id: ModelId) -> Result<ModelSpec, ProfileError> {
        Ok(ModelSpec::new(
            id,
            self.name.clone(),
            self.profile()?,
            Dur::from_ms(self.slo_ms),
        ))
    }
}

pub fn parse_zoo(source_name: &str, text: &str) -> Result<Vec<ZooEntry>, ZooError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| ZooError::Malformed {
        source_name: source_name.to_string(),
        line: 1,
        message: e.to_string(),
    })?;
    let expected = ["name", "alpha_ms", "beta_ms", "slo_ms"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(ZooError::Malformed {
            source_name: source_name.to_string(),
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in reader.deserialize::<ZooEntry>() {
        let entry = record.map_err(|e| ZooError::Malformed {
            source_name: source_name.to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = out.len() as u64 + 2;
        entry.profile().map_err(|source| ZooError::Profile {
            source_name: source_name.to_string(),
            line,
            source,
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Resolves `1080ti`, `a100`, or a filesystem path to zoo entries.
pub fn load_zoo(name_or_path: &str) -> Result<Vec<ZooEntry>, ZooError> {
    match name_or_path.to_ascii_lowercase().as_str() {
        "1080ti" => parse_zoo("1080ti", ZOO_1080TI_CSV),
        "a100" => parse_zoo("a100", ZOO_A100_CSV),
        _ => {
            let path = Path::new(name_or_path);
            if !path.exists() {
                return Err(ZooError::UnknownZoo(name_or_path.to_string()));
            }
            let text = std::fs::read_to_string(path).map_err(|source| ZooError::Io {
                path: name_or_path.to_string(),
                source,
            })?;
            parse_zoo(name_or_path, &text)
        }
    }
}

pub fn find<'a>(zoo: &'a [ZooEntry], zoo_name: &str, model: &str) -> Result<&'a ZooEntry, ZooError> {
    zoo.iter()
        .find(|e| e.name.eq_ignore_ascii_case(model))
        .ok_or_else(|| ZooError::UnknownModel {
            zoo: zoo_name.to_string(),
            name: model.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_zoos_parse_with_expected_sizes() {
        let gtx = load_zoo("1080ti").unwrap();
        let a100 = load_zoo("a100").unwrap();
        assert_eq!(gtx.len(), 35);
        assert_eq!(a100.len(), 37);
        let dn = find(&a100, "a100", "DenseNet121").unwrap();
        assert_eq!((dn.alpha_ms, dn.beta_ms, dn.slo_ms), (0.054, 10.546, 21.0));
        let irv2 = find(&a100, "a100", "InceptionResNetV2").unwrap();
        assert_eq!(irv2.beta_ms, 15.27);
    }

    #[test]
    fn every_bundled_model_admits_batch_of_one() {
        for zoo in ["1080ti", "a100"] {
            for (i, e) in load_zoo(zoo).unwrap().iter().enumerate() {
                let spec = e.to_spec(ModelId(i as u32)).unwrap();
                assert!(spec.is_feasible(), "{zoo}/{}", e.name);
            }
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "name,alpha_ms,beta_ms,slo_ms\na,1,2,3\nb,x,2,3\n";
        match parse_zoo("t", text) {
            Err(ZooError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "name,alpha_ms,beta_ms,slo_ms\na,1,0,3\n";
        assert!(matches!(parse_zoo("t", text), Err(ZooError::Profile { line: 2, .. })));
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(matches!(
            parse_zoo("t", "model,a,b,c\n"),
            Err(ZooError::Malformed { line: 1, .. })
        ));
    }
}
