use super::{OdeSystem, ProblemMeta};
use crate::precision::{BigMat, BigScalar, BigVec};

/// The linearized dual of `primal` around a reference state, run forward in
/// `s = T − t`: `dz/ds = J(ū(T − s))ᵀ z`.
///
/// `ubar` maps the original time `t` to the linearization state.
pub struct DualSystem<'a, S: OdeSystem, F> {
    primal: &'a S,
    ubar: F,
    t_final: BigScalar,
}

impl<'a, S, F> DualSystem<'a, S, F>
where
    S: OdeSystem,
    F: Fn(&BigScalar) -> BigVec + Sync,
{
    pub fn new(primal: &'a S, t_final: BigScalar, ubar: F) -> Self {
        DualSystem { primal, ubar, t_final }
    }

    pub fn t_final(&self) -> &BigScalar {
        &self.t_final
    }

    fn state(&self, s: &BigScalar) -> (BigVec, BigScalar) {
        let t = &self.t_final - s;
        ((self.ubar)(&t), t)
    }
}

impl<'a, S, F> OdeSystem for DualSystem<'a, S, F>
where
    S: OdeSystem,
    F: Fn(&BigScalar) -> BigVec + Sync,
{
    fn dim(&self) -> usize {
        self.primal.dim()
    }

    fn rhs(&self, z: &[BigScalar], s: &BigScalar) -> BigVec {
        let (u, t) = self.state(s);
        self.primal.jacobian(&u, &t).tr_mul_vec(z)
    }

    fn jacobian(&self, _z: &[BigScalar], s: &BigScalar) -> BigMat {
        let (u, t) = self.state(s);
        self.primal.jacobian(&u, &t).transpose()
    }

    fn meta(&self) -> ProblemMeta {
        let m = self.primal.meta();
        ProblemMeta { name: format!("{}-dual", m.name), params: m.params }
    }
}
