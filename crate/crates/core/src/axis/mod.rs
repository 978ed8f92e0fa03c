//! Concept axis (two-class discriminant) and attribute bases (deflation PCA),
//! fitted per stage.

mod lda;
mod pca;
mod scatter;

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use lda::{rayleigh_ratio, solve_concept_axis, solve_concept_axis_with, AxisSolver, ConceptAxis};
pub use pca::{attribute_bases, AttributeBasisSet};
pub(crate) use pca::merged_centered;
pub use scatter::{scatter_matrices, ScatterPair};

pub use crate::linalg::project_scalar;

use crate::error::{Error, Result};
use crate::features::{ConceptSpec, FeatureSet};

/// Relative ridge factor: `ridge = factor * trace(S_w) / D`.
pub const DEFAULT_RIDGE_FACTOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct StageAxis {
    pub axis: ConceptAxis,
    pub bases: AttributeBasisSet,
    pub mu_p: DVector<f64>,
    pub mu_n: DVector<f64>,
}

impl StageAxis {
    pub fn stage(&self) -> u32 {
        self.axis.stage
    }

    /// Coordinate distance between the class means along the axis.
    pub fn axis_gap(&self) -> f64 {
        self.axis.b_c.dot(&(&self.mu_p - &self.mu_n))
    }
}

/// Axis and bases for every stage `1..=T`.
#[derive(Clone, Debug)]
pub struct ConceptAxisModel {
    pub spec: ConceptSpec,
    pub k: usize,
    pub ridge_factor: f64,
    pub stages: Vec<StageAxis>,
}

impl ConceptAxisModel {
    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn t_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, stage: u32) -> Result<&StageAxis> {
        let idx = (stage as usize)
            .checked_sub(1)
            .filter(|&i| i < self.stages.len())
            .ok_or_else(|| {
                Error::Config(format!(
                    "stage {stage} outside [1, {}]",
                    self.stages.len()
                ))
            })?;
        Ok(&self.stages[idx])
    }
}

/// Fits one stage from its positive and negative feature sets.
pub fn fit_stage(
    pos: &FeatureSet,
    neg: &FeatureSet,
    k: usize,
    ridge_factor: f64,
    solver: AxisSolver,
) -> Result<StageAxis> {
    if pos.stage != neg.stage {
        return Err(Error::Shape(format!(
            "stage mismatch: positive {} vs negative {}",
            pos.stage, neg.stage
        )));
    }
    let sp = scatter_matrices(pos, neg)?;
    let ridge = sp.default_ridge(ridge_factor);
    let axis = solve_concept_axis_with(&sp, ridge, solver, pos.stage)?;
    let bases = attribute_bases(pos, neg, &axis.b_c, k)?;
    Ok(StageAxis {
        axis,
        bases,
        mu_p: sp.mu_p,
        mu_n: sp.mu_n,
    })
}

/// Fits every stage; `pairs[i]` must hold stage `i + 1`. Stages are fitted
/// concurrently and assembled in stage order.
pub fn fit_axis_model(
    spec: &ConceptSpec,
    pairs: &[(FeatureSet, FeatureSet)],
    k: usize,
    ridge_factor: f64,
) -> Result<ConceptAxisModel> {
    if pairs.is_empty() {
        return Err(Error::Config("no stages to fit".into()));
    }
    for (i, (pos, _)) in pairs.iter().enumerate() {
        if pos.stage as usize != i + 1 {
            return Err(Error::Config(format!(
                "feature pair {i} holds stage {}, expected {}",
                pos.stage,
                i + 1
            )));
        }
        if pos.dim != spec.dim {
            return Err(Error::Shape(format!("features dim {} != spec dim {}", pos.dim, spec.dim)));
        }
    }
    let stages = std::thread::scope(|scope| {
        let handles: Vec<_> = pairs
            .iter()
            .map(|(pos, neg)| {
                scope.spawn(move || fit_stage(pos, neg, k, ridge_factor, AxisSolver::ClosedForm))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("stage fit panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(ConceptAxisModel {
        spec: spec.clone(),
        k,
        ridge_factor,
        stages,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageFile {
    stage: u32,
    b_c: Vec<f64>,
    rayleigh: f64,
    mu_p: Vec<f64>,
    mu_n: Vec<f64>,
    bases: Vec<Vec<f64>>,
    explained_variance: Vec<f64>,
    ridge_used: f64,
    #[serde(default)]
    degenerate: bool,
    #[serde(default)]
    rank_deficient: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    spec: ConceptSpec,
    stages: Vec<StageFile>,
    #[serde(rename = "K")]
    k: usize,
    ridge: f64,
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn dvec(v: Vec<f64>, dim: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != dim {
        return Err(Error::format(0, format!("{what} has length {} (dim {dim})", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::format(0, format!("{what} has non-finite entries")));
    }
    Ok(DVector::from_vec(v))
}

impl ConceptAxisModel {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            spec: self.spec.clone(),
            k: self.k,
            ridge: self.ridge_factor,
            stages: self
                .stages
                .iter()
                .map(|s| StageFile {
                    stage: s.axis.stage,
                    b_c: vec_of(&s.axis.b_c),
                    rayleigh: s.axis.rayleigh_value,
                    mu_p: vec_of(&s.mu_p),
                    mu_n: vec_of(&s.mu_n),
                    bases: s.bases.bases.iter().map(vec_of).collect(),
                    explained_variance: s.bases.explained_variance.clone(),
                    ridge_used: s.axis.ridge_used,
                    degenerate: s.axis.degenerate,
                    rank_deficient: s.bases.rank_deficient,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| {
            Error::format(0, format!("axis model: {e} (line {}, column {})", e.line(), e.column()))
        })?;
        file.spec.validate()?;
        let d = file.spec.dim;
        let mut stages = Vec::with_capacity(file.stages.len());
        for (i, s) in file.stages.into_iter().enumerate() {
            if s.stage as usize != i + 1 {
                return Err(Error::format(0, format!("stage {} out of order", s.stage)));
            }
            let b_c = dvec(s.b_c, d, "b_c")?;
            if (b_c.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::format(0, format!("stage {} b_c is not unit norm", s.stage)));
            }
            let bases = s
                .bases
                .into_iter()
                .map(|b| dvec(b, d, "basis"))
                .collect::<Result<Vec<_>>>()?;
            if bases.len() != s.explained_variance.len() {
                return Err(Error::format(0, "bases and explained_variance lengths differ"));
            }
            stages.push(StageAxis {
                axis: ConceptAxis {
                    b_c,
                    rayleigh_value: s.rayleigh,
                    stage: s.stage,
                    ridge_used: s.ridge_used,
                    degenerate: s.degenerate,
                },
                bases: AttributeBasisSet {
                    bases,
                    explained_variance: s.explained_variance,
                    stage: s.stage,
                    rank_deficient: s.rank_deficient,
                },
                mu_p: dvec(s.mu_p, d, "mu_p")?,
                mu_n: dvec(s.mu_n, d, "mu_n")?,
            });
        }
        if stages.is_empty() {
            return Err(Error::format(0, "axis model has no stages"));
        }
        Ok(Self {
            spec: file.spec,
            k: file.k,
            ridge_factor: file.ridge,
            stages,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{synth_concept_sampler, Side};

    fn model(stages: u32) -> ConceptAxisModel {
        let spec = ConceptSpec::synthetic(8, 2).unwrap();
        let pairs: Vec<_> = (1..=stages)
            .map(|t| {
                (
                    synth_concept_sampler(&spec, t, Side::Positive, 6, 10).unwrap(),
                    synth_concept_sampler(&spec, t, Side::Negative, 6, 11).unwrap(),
                )
            })
            .collect();
        fit_axis_model(&spec, &pairs, 3, DEFAULT_RIDGE_FACTOR).unwrap()
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = model(3);
        let back = ConceptAxisModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.stages.len(), 3);
        for (a, b) in m.stages.iter().zip(&back.stages) {
            assert_eq!(a.axis.b_c, b.axis.b_c);
            assert_eq!(a.bases.bases, b.bases.bases);
            assert_eq!(a.mu_p, b.mu_p);
        }
    }

    #[test]
    fn corrupted_file_is_format_error() {
        let m = model(1);
        let text = m.to_json().unwrap();
        let broken = &text[..text.len() / 2];
        assert!(matches!(ConceptAxisModel::from_json(broken), Err(Error::Format { .. })));
    }

    #[test]
    fn stage_lookup_bounds() {
        let m = model(2);
        assert!(m.stage(1).is_ok());
        assert!(m.stage(0).is_err());
        assert!(m.stage(3).is_err());
    }
}
