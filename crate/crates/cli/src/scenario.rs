use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use robustkf::{KlScale, StateSpaceModel, SymMatrix, Tolerance};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawTolerance {
    Value(f64),
    Keyword(String),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarlo {
    #[serde(rename = "N")]
    pub trajectories: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c_matrix: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
    #[serde(rename = "P0")]
    p0: Option<Vec<Vec<f64>>>,
    c: RawTolerance,
    kl_scale: Option<String>,
    #[serde(rename = "T")]
    horizon: Option<usize>,
    rho_grid: Option<usize>,
    mc: Option<MonteCarlo>,
    outputs: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToleranceSpec {
    Fixed(f64),
    Auto,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: StateSpaceModel,
    pub tolerance: ToleranceSpec,
    pub scale: KlScale,
    pub horizon: usize,
    pub rho_grid: usize,
    pub mc: Option<MonteCarlo>,
    pub outputs: Option<PathBuf>,
    /// Hex SHA-256 of the scenario file bytes.
    pub hash: String,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(CliError::input(format!("scenario: {name} must be a non-empty array of rows")));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(CliError::input(format!(
            "scenario: {name} row {i} has {} entries, expected {ncols}",
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::input(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::parse(&bytes, &path.display().to_string())
    }

    pub fn parse(bytes: &[u8], origin: &str) -> Result<Self, CliError> {
        let hash = hex::encode(Sha256::digest(bytes));
        let raw: RawScenario = serde_json::from_slice(bytes)
            .map_err(|e| CliError::input(format!("{origin}:{}:{}: {e}", e.line(), e.column())))?;

        let a = matrix("A", &raw.a)?;
        let n = a.nrows();
        let p0 = match &raw.p0 {
            Some(rows) => matrix("P0", rows)?,
            None => DMatrix::identity(n, n),
        };
        let p0 = SymMatrix::new(p0).map_err(|e| CliError::input(format!("scenario: P0: {e}")))?;
        let model =
            StateSpaceModel::new(a, matrix("B", &raw.b)?, matrix("C", &raw.c_matrix)?, matrix("D", &raw.d)?, p0)
                .map_err(|e| CliError::input(format!("scenario: model: {e}")))?;

        let scale = match raw.kl_scale.as_deref() {
            None | Some("standard") => KlScale::Standard,
            Some("doubled") => KlScale::Doubled,
            Some(other) => {
                return Err(CliError::input(format!(
                    "scenario: kl_scale must be \"standard\" or \"doubled\", got {other:?}"
                )))
            }
        };
        let tolerance = match raw.c {
            RawTolerance::Value(c) => {
                Tolerance::with_scale(c, scale).map_err(|e| CliError::input(format!("scenario: c: {e}")))?;
                ToleranceSpec::Fixed(c)
            }
            RawTolerance::Keyword(k) if k == "auto" => ToleranceSpec::Auto,
            RawTolerance::Keyword(k) => {
                return Err(CliError::input(format!("scenario: c must be a number or \"auto\", got {k:?}")))
            }
        };
        let horizon = raw.horizon.unwrap_or(robustkf::performance::DEFAULT_HORIZON);
        if horizon == 0 {
            return Err(CliError::input("scenario: T must be at least 1"));
        }
        let rho_grid = raw.rho_grid.unwrap_or(robustkf::least_favorable::DEFAULT_RHO_GRID);
        if rho_grid == 0 {
            return Err(CliError::input("scenario: rho_grid must be at least 1"));
        }
        if let Some(mc) = raw.mc {
            if mc.trajectories < 2 {
                return Err(CliError::input("scenario: mc.N must be at least 2"));
            }
        }
        Ok(Scenario { model, tolerance, scale, horizon, rho_grid, mc: raw.mc, outputs: raw.outputs, hash })
    }
}
