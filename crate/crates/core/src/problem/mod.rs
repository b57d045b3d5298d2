//! Initial value problems `u̇ = f(u, t)`: the Lorenz system, its linearized
//! dual, and the generic interface the time stepper works against.

mod dual;
mod lorenz;

pub use dual::DualSystem;
pub use lorenz::{
    averaged_state, dual_rhs, fixed_points, lipschitz_estimate, lorenz_jacobian, lorenz_rhs,
    LipschitzError, Lorenz, LorenzParams, DEFAULT_LIPSCHITZ_SAMPLE_DT,
};

use thiserror::Error;

use crate::precision::{BigMat, BigScalar, BigVec, PrecisionContext, PrecisionError};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown problem {0:?} (available: lorenz)")]
    Unknown(String),
    #[error("unknown parameter {name:?} for problem {problem:?}")]
    UnknownParameter { problem: String, name: String },
    #[error(transparent)]
    Precision(#[from] PrecisionError),
}

/// Name and parameter values, carried into trajectory headers.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemMeta {
    pub name: String,
    pub params: Vec<(String, BigScalar)>,
}

/// A system `u̇ = f(u, t)` with an exact Jacobian.
///
/// The derivative hooks `jacobian_tangent` and `jacobian_second_tangent` are
/// optional; they are only needed for higher-order dual derivatives in the
/// stability factor `S_G`.
pub trait OdeSystem: Sync {
    fn dim(&self) -> usize;

    fn rhs(&self, u: &[BigScalar], t: &BigScalar) -> BigVec;

    /// `∂f/∂u` at `(u, t)`.
    fn jacobian(&self, u: &[BigScalar], t: &BigScalar) -> BigMat;

    /// Directional derivative of the Jacobian, `DJ(u)[du]`.
    fn jacobian_tangent(&self, _u: &[BigScalar], _du: &[BigScalar], _t: &BigScalar) -> Option<BigMat> {
        None
    }

    /// Second directional derivative of the Jacobian, `D²J(u)[du, du]`.
    fn jacobian_second_tangent(
        &self,
        _u: &[BigScalar],
        _du: &[BigScalar],
        _t: &BigScalar,
    ) -> Option<BigMat> {
        None
    }

    fn meta(&self) -> ProblemMeta;
}

/// Scalar linear test problem `u̇ = a u`.
#[derive(Clone, Debug)]
pub struct LinearScalar {
    pub a: BigScalar,
}

impl OdeSystem for LinearScalar {
    fn dim(&self) -> usize {
        1
    }

    fn rhs(&self, u: &[BigScalar], _t: &BigScalar) -> BigVec {
        BigVec::from(vec![&self.a * &u[0]])
    }

    fn jacobian(&self, _u: &[BigScalar], _t: &BigScalar) -> BigMat {
        BigMat::from_rows(vec![vec![self.a.clone()]])
    }

    fn jacobian_tangent(&self, _u: &[BigScalar], _du: &[BigScalar], _t: &BigScalar) -> Option<BigMat> {
        Some(BigMat::zeros(&self.a.context(), 1, 1))
    }

    fn jacobian_second_tangent(
        &self,
        _u: &[BigScalar],
        _du: &[BigScalar],
        _t: &BigScalar,
    ) -> Option<BigMat> {
        Some(BigMat::zeros(&self.a.context(), 1, 1))
    }

    fn meta(&self) -> ProblemMeta {
        ProblemMeta { name: "linear".into(), params: vec![("a".into(), self.a.clone())] }
    }
}

/// Builds a problem by name with decimal parameter overrides.
pub fn by_name(
    name: &str,
    ctx: &PrecisionContext,
    overrides: &[(String, String)],
) -> Result<Lorenz, ProblemError> {
    match name {
        "lorenz" => {
            let mut p = LorenzParams::classic(ctx);
            for (k, v) in overrides {
                let value = ctx.parse(v)?;
                match k.as_str() {
                    "sigma" => p.sigma = value,
                    "b" => p.b = value,
                    "r" => p.r = value,
                    _ => {
                        return Err(ProblemError::UnknownParameter {
                            problem: name.into(),
                            name: k.clone(),
                        })
                    }
                }
            }
            Ok(Lorenz::new(p))
        }
        other => Err(ProblemError::Unknown(other.to_string())),
    }
}
