//! Per-edge virtual couplings: spring potentials and damper matrices.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Separations closer than this to the barrier pole are treated as out of
/// domain; the potential is evaluated only strictly inside it.
pub const DOMAIN_GUARD: f64 = 1e-9;

/// Default gap between the feasible radius handed to initial conditions and
/// the critical distance.
pub const FEASIBLE_MARGIN: f64 = 1e-6;

/// Evaluation failures local to one spring.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpringError {
    #[error("coincident endpoints with rest length {rest_length} > 0; direction undefined")]
    Singular { rest_length: f64 },
    #[error("separation {distance} at or beyond the critical distance {critical}")]
    BeyondCritical { distance: f64, critical: f64 },
}

/// Scalar spring laws as functions of the separation s = ||z||.
#[derive(Debug, Clone, PartialEq)]
pub enum SpringLaw {
    /// Quadratic potential 0.5 * stiffness * (s - rest)^2, defined everywhere.
    Constant { stiffness: f64 },
    /// Piecewise law that diverges at the critical distance:
    /// stiffness * (s - rest)^2 at or below rest, and
    /// barrier_scale / (critical - s) * (s - rest)^2 above it.
    /// C^1 at the seam: both pieces and their slopes vanish at s = rest.
    Barrier { stiffness: f64, barrier_scale: f64 },
}

/// One virtual spring: law, rest length, critical distance, and the radius
/// initial conditions are admitted under.
#[derive(Debug, Clone, PartialEq)]
pub struct SpringModel {
    pub law: SpringLaw,
    pub rest_length: f64,
    pub critical_distance: f64,
    pub feasible_radius: f64,
}

impl SpringModel {
    pub fn constant(stiffness: f64, rest_length: f64) -> Self {
        SpringModel {
            law: SpringLaw::Constant { stiffness },
            rest_length,
            critical_distance: f64::INFINITY,
            feasible_radius: f64::INFINITY,
        }
    }

    pub fn barrier(
        stiffness: f64,
        barrier_scale: f64,
        rest_length: f64,
        critical_distance: f64,
    ) -> Self {
        SpringModel {
            law: SpringLaw::Barrier {
                stiffness,
                barrier_scale,
            },
            rest_length,
            critical_distance,
            feasible_radius: critical_distance - FEASIBLE_MARGIN,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, v: f64| -> Result<(), String> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be positive and finite, got {v}"))
            }
        };
        match self.law {
            SpringLaw::Constant { stiffness } => positive("stiffness", stiffness)?,
            SpringLaw::Barrier {
                stiffness,
                barrier_scale,
            } => {
                positive("stiffness", stiffness)?;
                positive("barrier_scale", barrier_scale)?;
                if !self.critical_distance.is_finite() || self.critical_distance <= 0.0 {
                    return Err(format!(
                        "critical_distance must be positive and finite, got {}",
                        self.critical_distance
                    ));
                }
                if self.feasible_radius >= self.critical_distance {
                    return Err(format!(
                        "feasible_radius {} must stay below the critical distance {}",
                        self.feasible_radius, self.critical_distance
                    ));
                }
            }
        }
        if !self.rest_length.is_finite() || self.rest_length < 0.0 {
            return Err(format!(
                "rest_length must be nonnegative and finite, got {}",
                self.rest_length
            ));
        }
        if self.rest_length > self.critical_distance {
            return Err(format!(
                "rest_length {} exceeds critical_distance {}",
                self.rest_length, self.critical_distance
            ));
        }
        if self.feasible_radius <= 0.0 {
            return Err(format!(
                "feasible_radius must be positive, got {}",
                self.feasible_radius
            ));
        }
        Ok(())
    }

    fn check_domain(&self, separation: f64) -> Result<(), SpringError> {
        if matches!(self.law, SpringLaw::Barrier { .. })
            && separation >= self.critical_distance - DOMAIN_GUARD
        {
            return Err(SpringError::BeyondCritical {
                distance: separation,
                critical: self.critical_distance,
            });
        }
        Ok(())
    }

    /// Potential as a function of the separation.
    pub fn potential_at(&self, separation: f64) -> Result<f64, SpringError> {
        self.check_domain(separation)?;
        let d = separation - self.rest_length;
        Ok(match self.law {
            SpringLaw::Constant { stiffness } => 0.5 * stiffness * d * d,
            SpringLaw::Barrier {
                stiffness,
                barrier_scale,
            } => {
                if separation <= self.rest_length {
                    stiffness * d * d
                } else {
                    barrier_scale / (self.critical_distance - separation) * d * d
                }
            }
        })
    }

    /// Slope dh/ds of the potential in the separation.
    pub fn slope_at(&self, separation: f64) -> Result<f64, SpringError> {
        self.check_domain(separation)?;
        let d = separation - self.rest_length;
        Ok(match self.law {
            SpringLaw::Constant { stiffness } => stiffness * d,
            SpringLaw::Barrier {
                stiffness,
                barrier_scale,
            } => {
                if separation <= self.rest_length {
                    2.0 * stiffness * d
                } else {
                    let gap = self.critical_distance - separation;
                    barrier_scale * (2.0 * d * gap + d * d) / (gap * gap)
                }
            }
        })
    }

    /// Radial coefficient c(s) with gradient c(s) * z, i.e. (dh/ds) / s.
    /// At rest length zero the limit at the origin is taken, so the gradient
    /// extends continuously there; with a positive rest length the direction
    /// is undefined at the origin and that is an error.
    pub fn gradient_coefficient(&self, separation: f64) -> Result<f64, SpringError> {
        self.check_domain(separation)?;
        if separation == 0.0 {
            if self.rest_length > 0.0 {
                return Err(SpringError::Singular {
                    rest_length: self.rest_length,
                });
            }
            // limit of (dh/ds)/s as s -> 0 with rest 0
            return Ok(match self.law {
                SpringLaw::Constant { stiffness } => stiffness,
                SpringLaw::Barrier { stiffness, .. } => 2.0 * stiffness,
            });
        }
        Ok(self.slope_at(separation)? / separation)
    }

    /// Potential evaluated on a relative-distance vector.
    pub fn potential(&self, z: &DVector<f64>) -> Result<f64, SpringError> {
        self.potential_at(z.norm())
    }

    /// Gradient of the potential in z.
    pub fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>, SpringError> {
        let coef = self.gradient_coefficient(z.norm())?;
        Ok(z * coef)
    }
}

/// Per-edge damper, symmetric positive definite in the ambient dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum Damping {
    /// Isotropic damper d * I.
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

impl Damping {
    pub fn validate(&self, dimension: usize) -> Result<(), String> {
        match self {
            Damping::Scalar(d) => {
                if d.is_finite() && *d > 0.0 {
                    Ok(())
                } else {
                    Err(format!("damping must be positive and finite, got {d}"))
                }
            }
            Damping::Matrix(m) => {
                if m.nrows() != dimension || m.ncols() != dimension {
                    return Err(format!(
                        "damping matrix must be {dimension}x{dimension}, got {}x{}",
                        m.nrows(),
                        m.ncols()
                    ));
                }
                for i in 0..dimension {
                    for j in 0..i {
                        let asym = (m[(i, j)] - m[(j, i)]).abs();
                        if asym > 1e-12 * m[(i, j)].abs().max(1.0) {
                            return Err(format!(
                                "damping matrix not symmetric at ({i},{j}): {} vs {}",
                                m[(i, j)],
                                m[(j, i)]
                            ));
                        }
                    }
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err("damping matrix has non-finite entries".into());
                }
                let eigen = m.clone().symmetric_eigen();
                let min = eigen.eigenvalues.min();
                if min <= 0.0 {
                    return Err(format!(
                        "damping matrix not positive definite (smallest eigenvalue {min})"
                    ));
                }
                Ok(())
            }
        }
    }

    /// Materialize as a dense dimension x dimension matrix.
    pub fn matrix(&self, dimension: usize) -> DMatrix<f64> {
        match self {
            Damping::Scalar(d) => DMatrix::identity(dimension, dimension) * *d,
            Damping::Matrix(m) => m.clone(),
        }
    }

    /// out += D * w, slicewise so the hot path never allocates.
    pub(crate) fn accumulate(&self, w: &[f64], out: &mut [f64]) {
        match self {
            Damping::Scalar(d) => {
                for (o, wi) in out.iter_mut().zip(w) {
                    *o += d * wi;
                }
            }
            Damping::Matrix(m) => {
                let n = w.len();
                for r in 0..n {
                    let mut acc = 0.0;
                    for c in 0..n {
                        acc += m[(r, c)] * w[c];
                    }
                    out[r] += acc;
                }
            }
        }
    }
}

/// Spring plus damper attached to one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub spring: SpringModel,
    pub damping: Damping,
}

impl Coupling {
    pub fn validate(&self, dimension: usize) -> Result<(), String> {
        self.spring.validate()?;
        self.damping.validate(dimension)
    }

    /// Force transmitted through the edge: spring gradient plus damped
    /// relative velocity, f = grad h(z) + D w.
    pub fn edge_force(
        &self,
        z: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>, SpringError> {
        let mut f = self.spring.gradient(z)?;
        self.damping.accumulate(w.as_slice(), f.as_mut_slice());
        Ok(f)
    }
}
