//! JSON file schemas and loaders.
//!
//! Instance files:
//! ```json
//! {
//!   "S": ["s0", "s1"],
//!   "Y": ["y0", "y1"],
//!   "U_size": 2,
//!   "p_SY": [[0.4, 0.1], [0.1, 0.4]],
//!   "distortions": [{"matrix": [[0, 1], [1, 0]], "delta": 0.25}],
//!   "mode": "from_y"
//! }
//! ```
//!
//! Mechanism files carry a channel: `{"input": [...], "output": [...],
//! "rows": [[...]]}`. Adjacency files are a JSON array of neighboring label
//! pairs: `[["s0", "s1"], ...]`.

use std::path::Path;

use serde::Deserialize;

use privmap::{
    AdjacencyRelation, Alphabet, Channel, Coupling, DistortionConstraint, JointPmf, MappingMode,
    ProblemInstance,
};

use crate::CliError;

#[derive(Deserialize)]
pub struct InstanceFile {
    #[serde(rename = "S")]
    pub s: Vec<String>,
    #[serde(rename = "Y")]
    pub y: Vec<String>,
    #[serde(rename = "U_size")]
    pub u_size: usize,
    #[serde(rename = "p_SY")]
    pub p_sy: Vec<Vec<f64>>,
    #[serde(default)]
    pub distortions: Vec<DistortionFile>,
    #[serde(default)]
    pub mode: Option<String>,
}

#[derive(Deserialize)]
pub struct DistortionFile {
    pub matrix: Vec<Vec<f64>>,
    pub delta: f64,
}

#[derive(Deserialize)]
pub struct MechanismFile {
    pub input: Vec<String>,
    pub output: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("malformed JSON in {}: {e}", path.display())))
}

pub fn load_instance(path: &Path) -> Result<ProblemInstance, CliError> {
    let file: InstanceFile = read_json(path)?;
    let s = Alphabet::new(file.s)?;
    let y = Alphabet::new(file.y)?;
    let joint = JointPmf::new(s, y, file.p_sy)?;
    let distortions = file
        .distortions
        .into_iter()
        .map(|d| DistortionConstraint::new(d.matrix, d.delta))
        .collect::<Result<Vec<_>, _>>()?;
    let mode = match file.mode.as_deref() {
        None | Some("from_y") => MappingMode::FromY,
        Some("direct") => MappingMode::Direct,
        Some(other) => {
            return Err(CliError::Invalid(format!(
                "unknown mode `{other}`; expected \"from_y\" or \"direct\""
            )))
        }
    };
    Ok(ProblemInstance::new(
        Coupling::Joint(joint),
        file.u_size,
        distortions,
        mode,
    )?)
}

pub fn load_mechanism(path: &Path) -> Result<Channel, CliError> {
    let file: MechanismFile = read_json(path)?;
    let input = Alphabet::new(file.input)?;
    let output = Alphabet::new(file.output)?;
    Ok(Channel::new(input, output, file.rows)?)
}

pub fn load_adjacency(spec: &str, input: &Alphabet) -> Result<AdjacencyRelation, CliError> {
    if spec == "unit-step" {
        return Ok(AdjacencyRelation::OrderedUnitStep);
    }
    let pairs: Vec<Vec<String>> = read_json(Path::new(spec))?;
    let mut resolved = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        if pair.len() != 2 {
            return Err(CliError::Invalid(format!(
                "adjacency pairs must have exactly two labels, got {pair:?}"
            )));
        }
        let a = input.index_of(&pair[0]).ok_or_else(|| {
            CliError::Invalid(format!("unknown symbol `{}` in adjacency file", pair[0]))
        })?;
        let b = input.index_of(&pair[1]).ok_or_else(|| {
            CliError::Invalid(format!("unknown symbol `{}` in adjacency file", pair[1]))
        })?;
        resolved.push((a, b));
    }
    Ok(AdjacencyRelation::ExplicitPairs(resolved))
}
