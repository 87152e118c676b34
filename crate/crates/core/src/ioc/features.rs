//! Feature bases `h(x)` for linear-in-parameters stage costs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Feature {
    /// `(x - o)^T (x - o)`.
    QuadraticToPoint {
        point: Vec<f64>,
    },
    /// Gaussian density `N(x; center, covariance)`.
    GaussianBump {
        center: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
    /// `|x_coord - target|`.
    AbsoluteDeviation {
        coord: usize,
        target: f64,
    },
    /// `(x_coord - target)^2`.
    SquaredDeviation {
        coord: usize,
        target: f64,
    },
    /// `(cos x_coord - cos angle)^2`.
    CosineGap {
        coord: usize,
        angle: f64,
    },
    Constant {
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedFeature {
    pub name: String,
    #[serde(flatten)]
    pub feature: Feature,
}

/// A feature with everything needed for fast evaluation precomputed.
#[derive(Clone, Debug)]
enum Compiled {
    Quadratic(Vec<f64>),
    Bump { center: Vec<f64>, precision: DMatrix<f64>, scale: f64 },
    Abs(usize, f64),
    Sq(usize, f64),
    Cos(usize, f64),
    Constant(f64),
}

#[derive(Clone, Debug)]
pub struct FeatureBasis {
    features: Vec<NamedFeature>,
    compiled: Vec<Compiled>,
    dims: usize,
}

impl FeatureBasis {
    /// Checks every feature against the state dimension `dims`.
    pub fn new(features: Vec<NamedFeature>, dims: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Invalid("feature basis needs at least one feature".into()));
        }
        let compiled = features
            .iter()
            .map(|nf| compile(&nf.feature, dims).map_err(|e| Error::Invalid(format!("feature '{}': {e}", nf.name))))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureBasis { features, compiled, dims })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn features(&self) -> &[NamedFeature] {
        &self.features
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) {
        for (slot, c) in out.iter_mut().zip(&self.compiled) {
            *slot = match c {
                Compiled::Quadratic(o) => x.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum(),
                Compiled::Bump { center, precision, scale } => {
                    let d = DVector::from_iterator(x.len(), x.iter().zip(center).map(|(a, b)| a - b));
                    scale * (-0.5 * d.dot(&(precision * &d))).exp()
                }
                Compiled::Abs(i, t) => (x[*i] - t).abs(),
                Compiled::Sq(i, t) => (x[*i] - t).powi(2),
                Compiled::Cos(i, a) => (x[*i].cos() - a.cos()).powi(2),
                Compiled::Constant(v) => *v,
            };
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.evaluate_into(x, &mut out);
        out
    }

    /// Feature values at every cell center of `grid`.
    pub fn on_grid(&self, grid: &GridSpace) -> Result<FeatureTable> {
        if grid.dims() != self.dims {
            return Err(Error::Structure(format!("basis is {}-dimensional, grid is {}-dimensional", self.dims, grid.dims())));
        }
        let f = self.len();
        let mut values = vec![0.0; grid.len() * f];
        let mut x = vec![0.0; self.dims];
        for (cell, row) in values.chunks_mut(f).enumerate() {
            grid.center_into(cell, &mut x);
            self.evaluate_into(&x, row);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("feature values must be finite on the grid".into()));
        }
        Ok(FeatureTable { features: f, values })
    }
}

fn compile(feature: &Feature, dims: usize) -> std::result::Result<Compiled, String> {
    let coord_ok = |i: usize| if i < dims { Ok(()) } else { Err(format!("coordinate {i} out of range for dimension {dims}")) };
    let len_ok = |v: &[f64]| if v.len() == dims { Ok(()) } else { Err(format!("expected {dims} coordinates, got {}", v.len())) };
    Ok(match feature {
        Feature::QuadraticToPoint { point } => {
            len_ok(point)?;
            Compiled::Quadratic(point.clone())
        }
        Feature::GaussianBump { center, covariance } => {
            len_ok(center)?;
            if covariance.len() != dims || covariance.iter().any(|r| r.len() != dims) {
                return Err(format!("covariance must be {dims}x{dims}"));
            }
            let cov = DMatrix::from_fn(dims, dims, |i, j| covariance[i][j]);
            if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax() {
                return Err("covariance must be symmetric".into());
            }
            let chol = cov.clone().cholesky().ok_or("covariance must be positive definite")?;
            let det = chol.determinant();
            let precision = chol.inverse();
            let scale = 1.0 / ((2.0 * std::f64::consts::PI).powi(dims as i32) * det).sqrt();
            Compiled::Bump { center: center.clone(), precision, scale }
        }
        Feature::AbsoluteDeviation { coord, target } => {
            coord_ok(*coord)?;
            Compiled::Abs(*coord, *target)
        }
        Feature::SquaredDeviation { coord, target } => {
            coord_ok(*coord)?;
            Compiled::Sq(*coord, *target)
        }
        Feature::CosineGap { coord, angle } => {
            coord_ok(*coord)?;
            Compiled::Cos(*coord, *angle)
        }
        Feature::Constant { value } => Compiled::Constant(*value),
    })
}

/// Cell-by-feature values, row-major by cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    features: usize,
    values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(features: usize, values: Vec<f64>) -> Result<Self> {
        if features == 0 || !values.len().is_multiple_of(features) {
            return Err(Error::Structure("feature table size is not a multiple of the feature count".into()));
        }
        Ok(FeatureTable { features, values })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn cells(&self) -> usize {
        self.values.len() / self.features
    }

    pub fn cell(&self, x: usize) -> &[f64] {
        &self.values[x * self.features..(x + 1) * self.features]
    }

    /// Column `i` as a per-cell table.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.chunks(self.features).map(|r| r[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(feature: Feature) -> NamedFeature {
        NamedFeature { name: "f".into(), feature }
    }

    #[test]
    fn evaluates_each_family() {
        let basis = FeatureBasis::new(
            vec![
                named(Feature::QuadraticToPoint { point: vec![1.0, 0.0] }),
                named(Feature::GaussianBump { center: vec![0.0, 0.0], covariance: vec![vec![0.5, 0.0], vec![0.0, 2.0]] }),
                named(Feature::AbsoluteDeviation { coord: 1, target: 1.0 }),
                named(Feature::CosineGap { coord: 0, angle: 0.0 }),
                named(Feature::Constant { value: 1.0 }),
            ],
            2,
        )
        .unwrap();
        let h = basis.evaluate(&[0.0, 0.0]);
        assert_eq!(h[0], 1.0);
        assert!((h[1] - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert_eq!(h[2], 1.0);
        assert_eq!(h[3], 0.0);
        assert_eq!(h[4], 1.0);
        let far = basis.evaluate(&[6.0 * 0.5f64.sqrt(), 0.0]);
        assert!(far[1] <= 1e-8);
    }

    #[test]
    fn rejects_bad_features() {
        assert!(FeatureBasis::new(vec![], 1).is_err());
        assert!(FeatureBasis::new(vec![named(Feature::AbsoluteDeviation { coord: 2, target: 0.0 })], 2).is_err());
        let bad_cov = Feature::GaussianBump { center: vec![0.0], covariance: vec![vec![-1.0]] };
        assert!(FeatureBasis::new(vec![named(bad_cov)], 1).is_err());
    }

    #[test]
    fn toml_round_trip() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct File {
            feature: Vec<NamedFeature>,
        }
        let f = File {
            feature: vec![
                NamedFeature { name: "theta".into(), feature: Feature::AbsoluteDeviation { coord: 0, target: 0.0 } },
                NamedFeature {
                    name: "bump".into(),
                    feature: Feature::GaussianBump { center: vec![0.1, 0.2], covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]] },
                },
            ],
        };
        let text = toml::to_string(&f).unwrap();
        assert_eq!(toml::from_str::<File>(&text).unwrap(), f);
    }
}
