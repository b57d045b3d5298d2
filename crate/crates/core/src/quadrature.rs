//! Gauss quadrature rules and Lagrange nodal bases on `[0, 1]`, computed at
//! any working precision and memoized per (family, size, precision).

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use thiserror::Error;

use crate::precision::{BigMat, BigScalar, BigVec, PrecisionContext};

/// Largest supported rule size.
pub const MAX_POINTS: usize = 512;

const MAX_NEWTON: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Legendre,
    Lobatto,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Legendre => "gauss-legendre",
            Family::Lobatto => "gauss-lobatto",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("{family} rule with {n} points is outside the supported range [{min}, {max}]")]
    Size { family: Family, n: usize, min: usize, max: usize },
    #[error("{family} rule with {n} points: Newton iteration for root {root} did not converge")]
    NoConvergence { family: Family, n: usize, root: usize },
    #[error("nodes must be distinct, nonempty and increasing")]
    BadNodes,
}

/// Points and weights on `[0, 1]`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub family: Family,
    pub points: Vec<BigScalar>,
    pub weights: Vec<BigScalar>,
    pub exactness_degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `Σ w_i f(x_i)`.
    pub fn integrate(&self, mut f: impl FnMut(&BigScalar) -> BigScalar) -> BigScalar {
        let mut acc = self.points[0].context().zero();
        for (x, w) in self.points.iter().zip(&self.weights) {
            acc += w * &f(x);
        }
        acc
    }
}

type Key = (Family, usize, u32);

fn rule_cache() -> &'static RwLock<HashMap<Key, Arc<QuadratureRule>>> {
    static CACHE: OnceLock<RwLock<HashMap<Key, Arc<QuadratureRule>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn basis_cache() -> &'static RwLock<HashMap<(usize, u32), Arc<NodalBasis>>> {
    static CACHE: OnceLock<RwLock<HashMap<(usize, u32), Arc<NodalBasis>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn cached(family: Family, n: usize, ctx: &PrecisionContext) -> Result<Arc<QuadratureRule>, QuadratureError> {
    let key = (family, n, ctx.bits());
    if let Some(r) = rule_cache().read().unwrap().get(&key) {
        return Ok(r.clone());
    }
    let rule = Arc::new(match family {
        Family::Legendre => build_legendre(n, ctx)?,
        Family::Lobatto => build_lobatto(n, ctx)?,
    });
    Ok(rule_cache().write().unwrap().entry(key).or_insert(rule).clone())
}

/// `n`-point Gauss–Legendre rule, exact for degree `2n − 1`.
pub fn gauss_legendre(n: usize, ctx: &PrecisionContext) -> Result<Arc<QuadratureRule>, QuadratureError> {
    if !(1..=MAX_POINTS).contains(&n) {
        return Err(QuadratureError::Size { family: Family::Legendre, n, min: 1, max: MAX_POINTS });
    }
    cached(Family::Legendre, n, ctx)
}

/// `n`-point Gauss–Lobatto rule including both endpoints, exact for degree `2n − 3`.
pub fn gauss_lobatto(n: usize, ctx: &PrecisionContext) -> Result<Arc<QuadratureRule>, QuadratureError> {
    if !(2..=MAX_POINTS).contains(&n) {
        return Err(QuadratureError::Size { family: Family::Lobatto, n, min: 2, max: MAX_POINTS });
    }
    cached(Family::Lobatto, n, ctx)
}

/// `(P_n(x), P_{n−1}(x))` by the three-term recurrence.
fn legendre_pair(n: usize, x: &BigScalar) -> (BigScalar, BigScalar) {
    let ctx = x.context();
    let mut p0 = ctx.one();
    if n == 0 {
        return (p0, ctx.zero());
    }
    let mut p1 = x.clone();
    for k in 1..n as i64 {
        // (k+1) P_{k+1} = (2k+1) x P_k − k P_{k−1}
        let p2 = (&(x * &p1).mul_i64(2 * k + 1) - &p0.mul_i64(k)).div_i64(k + 1);
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

/// `P_n'(x)` from `(1 − x²) P_n' = n (P_{n−1} − x P_n)`.
fn legendre_deriv(n: usize, x: &BigScalar, pn: &BigScalar, pn1: &BigScalar) -> BigScalar {
    let one = x.context().one();
    (pn1 - &(x * pn)).mul_i64(n as i64) / (&one - &(x * x))
}

fn newton_root(
    family: Family,
    n: usize,
    root: usize,
    guess: f64,
    ctx: &PrecisionContext,
    step: impl Fn(&BigScalar) -> BigScalar,
) -> Result<BigScalar, QuadratureError> {
    // Converge in double first, then polish at full precision.
    let lo = PrecisionContext::new(17).expect("17 digits is valid");
    let mut x = lo.from_f64(guess);
    for _ in 0..MAX_NEWTON {
        let dx = step(&x);
        x = &x - &dx;
        if dx.abs().to_f64() < 1e-15 {
            break;
        }
    }
    let mut x = ctx.convert(&x);
    let tol = ctx.eps().mul_i64(4);
    let mut small = 0;
    for _ in 0..MAX_NEWTON {
        let dx = step(&x);
        x = &x - &dx;
        if !x.is_finite() {
            break;
        }
        // Quadratic convergence: once |dx| is at the roundoff level one more
        // step cannot improve x.
        if dx.abs() <= tol {
            small += 1;
            if small == 2 {
                return Ok(x);
            }
        }
    }
    Err(QuadratureError::NoConvergence { family, n, root })
}

/// Roots on `(−1, 1)` in increasing order, found for `x ≥ 0` and mirrored.
fn symmetric_roots(
    family: Family,
    n_roots: usize,
    n: usize,
    ctx: &PrecisionContext,
    guess: impl Fn(usize) -> f64,
    step: impl Fn(&BigScalar) -> BigScalar,
) -> Result<Vec<BigScalar>, QuadratureError> {
    let half = n_roots / 2;
    let mut upper = Vec::with_capacity(half + 1);
    // guess(i) decreases in i; roots i = 0..half are the positive ones.
    for i in 0..half {
        upper.push(newton_root(family, n, i, guess(i), ctx, &step)?);
    }
    let mut roots: Vec<BigScalar> = upper.iter().map(|r| -r).collect();
    if n_roots % 2 == 1 {
        roots.push(ctx.zero());
    }
    roots.extend(upper.into_iter().rev());
    for w in roots.windows(2) {
        if w[0] >= w[1] {
            let root = roots.iter().position(|r| r == &w[1]).unwrap_or(0);
            return Err(QuadratureError::NoConvergence { family, n, root });
        }
    }
    Ok(roots)
}

fn build_legendre(n: usize, ctx: &PrecisionContext) -> Result<QuadratureRule, QuadratureError> {
    let pi = std::f64::consts::PI;
    let roots = symmetric_roots(
        Family::Legendre,
        n,
        n,
        ctx,
        |i| (pi * (i as f64 + 0.75) / (n as f64 + 0.5)).cos(),
        |x| {
            let (p, p1) = legendre_pair(n, x);
            &p / &legendre_deriv(n, x, &p, &p1)
        },
    )?;
    let one = ctx.one();
    let mut points = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for x in &roots {
        let (p, p1) = legendre_pair(n, x);
        let d = legendre_deriv(n, x, &p, &p1);
        // w = 2 / ((1 − x²) P'²), halved for [0, 1]
        weights.push(&one / &(&(&one - &(x * x)) * &(&d * &d)));
        points.push((&one + x).div_i64(2));
    }
    Ok(QuadratureRule { family: Family::Legendre, points, weights, exactness_degree: 2 * n - 1 })
}

fn build_lobatto(n: usize, ctx: &PrecisionContext) -> Result<QuadratureRule, QuadratureError> {
    let m = n - 1;
    let pi = std::f64::consts::PI;
    let mf = m as i64;
    // Interior nodes are the roots of P_m'. Newton on P_m' uses
    // (1 − x²) P_m'' = 2x P_m' − m(m+1) P_m.
    let interior = symmetric_roots(
        Family::Lobatto,
        n - 2,
        n,
        ctx,
        |i| (pi * (i as f64 + 1.0) / m as f64).cos(),
        |x| {
            let one = x.context().one();
            let (p, p1) = legendre_pair(m, x);
            let d1 = legendre_deriv(m, x, &p, &p1);
            let d2 = (&(x * &d1).mul_i64(2) - &p.mul_i64(mf * (mf + 1))) / (&one - &(x * x));
            &d1 / &d2
        },
    )?;
    let one = ctx.one();
    let edge = one.div_i64(mf * (mf + 1));
    let mut points = vec![ctx.zero()];
    let mut weights = vec![edge.clone()];
    for x in &interior {
        let (p, _) = legendre_pair(m, x);
        // w = 2 / (n(n−1) P_m²), halved
        weights.push(&one / &(&p * &p).mul_i64(mf * (mf + 1)));
        points.push((&one + x).div_i64(2));
    }
    points.push(one);
    weights.push(edge);
    Ok(QuadratureRule { family: Family::Lobatto, points, weights, exactness_degree: 2 * n - 3 })
}

/// Lagrange basis on distinct nodes, evaluated in barycentric form.
#[derive(Clone, Debug)]
pub struct NodalBasis {
    nodes: Vec<BigScalar>,
    bary: Vec<BigScalar>,
    diff: BigMat,
}

impl NodalBasis {
    pub fn from_nodes(nodes: Vec<BigScalar>) -> Result<Self, QuadratureError> {
        if nodes.is_empty() || nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QuadratureError::BadNodes);
        }
        let ctx = nodes[0].context();
        let n = nodes.len();
        let bary: Vec<BigScalar> = (0..n)
            .map(|j| {
                let mut prod = ctx.one();
                for k in 0..n {
                    if k != j {
                        prod *= &nodes[j] - &nodes[k];
                    }
                }
                ctx.one() / prod
            })
            .collect();
        let mut diff = BigMat::zeros(&ctx, n, n);
        for i in 0..n {
            let mut diag = ctx.zero();
            for j in 0..n {
                if i != j {
                    let d = &(&bary[j] / &bary[i]) / &(&nodes[i] - &nodes[j]);
                    diag -= &d;
                    diff[(i, j)] = d;
                }
            }
            diff[(i, i)] = diag;
        }
        Ok(NodalBasis { nodes, bary, diff })
    }

    /// Degree-`q` basis on the `(q+1)`-point Gauss–Lobatto nodes (memoized).
    pub fn lobatto(q: usize, ctx: &PrecisionContext) -> Result<Arc<NodalBasis>, QuadratureError> {
        let key = (q, ctx.bits());
        if let Some(b) = basis_cache().read().unwrap().get(&key) {
            return Ok(b.clone());
        }
        let rule = gauss_lobatto(q + 1, ctx)?;
        let basis = Arc::new(NodalBasis::from_nodes(rule.points.clone())?);
        Ok(basis_cache().write().unwrap().entry(key).or_insert(basis).clone())
    }

    pub fn nodes(&self) -> &[BigScalar] {
        &self.nodes
    }

    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn context(&self) -> PrecisionContext {
        self.nodes[0].context()
    }

    pub fn differentiation_matrix(&self) -> &BigMat {
        &self.diff
    }

    /// Cardinal function values `ℓ_j(t)`; exactly `δ_ij` at node `i`.
    pub fn cardinals(&self, t: &BigScalar) -> Vec<BigScalar> {
        let ctx = self.context();
        if let Some(i) = self.nodes.iter().position(|x| x == t) {
            return (0..self.nodes.len()).map(|j| if j == i { ctx.one() } else { ctx.zero() }).collect();
        }
        let terms: Vec<BigScalar> =
            self.nodes.iter().zip(&self.bary).map(|(x, w)| w / &(t - x)).collect();
        let mut denom = ctx.zero();
        for c in &terms {
            denom += c;
        }
        terms.into_iter().map(|c| c / &denom).collect()
    }

    /// Applies the differentiation matrix to node-major values
    /// (`values[i * dim + c]`).
    pub fn differentiate(&self, values: &[BigScalar], dim: usize) -> Vec<BigScalar> {
        let n = self.nodes.len();
        let ctx = self.context();
        let mut out = vec![ctx.zero(); n * dim];
        for i in 0..n {
            for j in 0..n {
                let d = &self.diff[(i, j)];
                if d.is_zero() {
                    continue;
                }
                for c in 0..dim {
                    out[i * dim + c].add_mul(d, &values[j * dim + c]);
                }
            }
        }
        out
    }
}

/// Evaluates the interpolant through node-major `values` at `t ∈ [0, 1]`.
pub fn lagrange_eval(basis: &NodalBasis, values: &[BigScalar], dim: usize, t: &BigScalar) -> BigVec {
    let n = basis.nodes.len();
    debug_assert_eq!(values.len(), n * dim);
    if let Some(i) = basis.nodes.iter().position(|x| x == t) {
        return values[i * dim..(i + 1) * dim].iter().cloned().collect();
    }
    let l = basis.cardinals(t);
    let mut out = BigVec::zeros(&basis.context(), dim);
    for (j, lj) in l.iter().enumerate() {
        for c in 0..dim {
            out[c].add_mul(lj, &values[j * dim + c]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(d: u32) -> PrecisionContext {
        PrecisionContext::new(d).unwrap()
    }

    fn close(a: &BigScalar, b: &BigScalar, tol: &BigScalar) -> bool {
        (a - b).abs() <= *tol
    }

    #[test]
    fn small_closed_forms() {
        let c = ctx(40);
        let tol = c.pow10(-38);
        let g1 = gauss_legendre(1, &c).unwrap();
        assert!(close(&g1.points[0], &c.ratio(1, 2), &tol));
        assert!(close(&g1.weights[0], &c.one(), &tol));

        let g2 = gauss_legendre(2, &c).unwrap();
        let s3 = c.from_i64(3).sqrt();
        assert!(close(&g2.points[0], &(c.from_i64(3) - &s3).div_i64(6), &tol));
        assert!(close(&g2.points[1], &(c.from_i64(3) + &s3).div_i64(6), &tol));
        assert!(close(&g2.weights[0], &c.ratio(1, 2), &tol));

        let l2 = gauss_lobatto(2, &c).unwrap();
        assert!(l2.points[0].is_zero() && l2.points[1] == c.one());
        assert_eq!(l2.weights[0], c.ratio(1, 2));

        let l3 = gauss_lobatto(3, &c).unwrap();
        assert_eq!(l3.points[1], c.ratio(1, 2));
        assert!(close(&l3.weights[0], &c.ratio(1, 6), &tol));
        assert!(close(&l3.weights[1], &c.ratio(2, 3), &tol));
    }

    #[test]
    fn five_point_rule_integrates_t9() {
        let c = ctx(50);
        let g = gauss_legendre(5, &c).unwrap();
        let v = g.integrate(|t| t.powi(9));
        assert!(close(&v, &c.ratio(1, 10), &c.pow10(-48)));
    }

    #[test]
    fn lobatto_four_against_bisection() {
        // Interior nodes of the 4-point rule are the roots of P3'(x) = (15x² − 3)/2,
        // bracketed on (0, 1) and refined by bisection in f64.
        let f = |x: f64| 15.0 * x * x - 3.0;
        let (mut a, mut b) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(a) * f(m) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        let root = 0.5 * (a + b);
        let c = ctx(30);
        let l4 = gauss_lobatto(4, &c).unwrap();
        assert!((l4.points[2].to_f64() - (1.0 + root) / 2.0).abs() < 1e-15);
        assert!((l4.points[1].to_f64() - (1.0 - root) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn exactness_and_symmetry() {
        for d in [32u32, 64, 420] {
            let c = ctx(d);
            let tol = c.pow10(-(d as i64) + 3);
            for n in [1usize, 2, 3, 6, 11] {
                for (rule, deg) in [
                    (gauss_legendre(n, &c).unwrap(), 2 * n - 1),
                    (gauss_lobatto(n + 1, &c).unwrap(), 2 * n - 1),
                ] {
                    assert_eq!(rule.exactness_degree, deg);
                    for k in 0..=deg {
                        let v = rule.integrate(|t| t.powi(k as i64));
                        assert!(close(&v, &c.ratio(1, k as i64 + 1), &tol), "{:?} n={n} k={k} d={d}", rule.family);
                    }
                    let m = rule.len();
                    for i in 0..m {
                        let s = &rule.points[i] + &rule.points[m - 1 - i];
                        assert!(close(&s, &c.one(), &tol));
                        assert!(close(&rule.weights[i], &rule.weights[m - 1 - i], &tol));
                    }
                }
            }
        }
    }

    #[test]
    fn large_rules_converge() {
        let c = ctx(64);
        let g = gauss_legendre(120, &c).unwrap();
        let l = gauss_lobatto(121, &c).unwrap();
        let tol = c.pow10(-60);
        let sum = |w: &[BigScalar]| w.iter().fold(c.zero(), |a, b| a + b);
        assert!(close(&sum(&g.weights), &c.one(), &tol));
        assert!(close(&sum(&l.weights), &c.one(), &tol));
        assert!(close(&l.integrate(|t| t.powi(200)), &c.ratio(1, 201), &tol));
    }

    #[test]
    fn size_limits() {
        let c = ctx(20);
        assert!(matches!(gauss_legendre(0, &c), Err(QuadratureError::Size { .. })));
        assert!(matches!(gauss_lobatto(1, &c), Err(QuadratureError::Size { .. })));
        assert!(matches!(gauss_legendre(MAX_POINTS + 1, &c), Err(QuadratureError::Size { .. })));
    }

    #[test]
    fn cache_returns_shared_rule() {
        let c = ctx(33);
        let a = gauss_legendre(7, &c).unwrap();
        let b = gauss_legendre(7, &c).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let other = gauss_legendre(7, &ctx(34)).unwrap();
        assert!(!Arc::ptr_eq(&a, &other));
    }

    #[test]
    fn cardinal_property_and_constants() {
        let c = ctx(40);
        let b = NodalBasis::lobatto(6, &c).unwrap();
        for (i, x) in b.nodes().iter().enumerate() {
            let l = b.cardinals(x);
            for (j, v) in l.iter().enumerate() {
                assert_eq!(*v, if i == j { c.one() } else { c.zero() });
            }
        }
        let vals = vec![c.parse("2.5").unwrap(); 7];
        let t = c.parse("0.3141").unwrap();
        assert!(close(&lagrange_eval(&b, &vals, 1, &t)[0], &vals[0], &c.pow10(-38)));
        let d = b.differentiate(&vals, 1);
        assert!(d.iter().all(|v| v.abs() < c.pow10(-36)));
    }

    #[test]
    fn linear_two_node_basis() {
        let c = ctx(30);
        let b = NodalBasis::lobatto(1, &c).unwrap();
        let vals = vec![c.zero(), c.one()];
        let t = c.parse("0.3").unwrap();
        assert!(close(&lagrange_eval(&b, &vals, 1, &t)[0], &t, &c.pow10(-29)));
        let d = b.differentiation_matrix();
        assert_eq!(d[(0, 0)], -c.one());
        assert_eq!(d[(0, 1)], c.one());
        assert_eq!(d[(1, 0)], -c.one());
        assert_eq!(d[(1, 1)], c.one());
    }

    #[test]
    fn reproduces_random_degree_seven_polynomial() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let c = ctx(50);
        let coef: Vec<BigScalar> = (0..8).map(|_| c.from_f64(rng.gen_range(-1.0..1.0))).collect();
        let horner = |t: &BigScalar| coef.iter().rev().fold(c.zero(), |acc, a| &(&acc * t) + a);
        let b = NodalBasis::lobatto(7, &c).unwrap();
        let vals: Vec<BigScalar> = b.nodes().iter().map(|x| horner(x)).collect();
        for _ in 0..20 {
            let t = c.from_f64(rng.gen_range(0.0..1.0));
            let got = &lagrange_eval(&b, &vals, 1, &t)[0];
            assert!(close(got, &horner(&t), &c.pow10(-47)));
        }
    }

    #[test]
    fn derivative_of_t_to_the_q() {
        let c = ctx(40);
        let q = 5;
        let b = NodalBasis::lobatto(q, &c).unwrap();
        let vals: Vec<BigScalar> = b.nodes().iter().map(|x| x.powi(q as i64)).collect();
        let d = b.differentiate(&vals, 1);
        for (x, v) in b.nodes().iter().zip(&d) {
            assert!(close(v, &x.powi(q as i64 - 1).mul_i64(q as i64), &c.pow10(-36)));
        }
    }

    #[test]
    fn vector_valued_node_major_layout() {
        let c = ctx(30);
        let b = NodalBasis::lobatto(2, &c).unwrap();
        // component 0: t, component 1: t²
        let vals: Vec<BigScalar> = b.nodes().iter().flat_map(|x| [x.clone(), x * x]).collect();
        let t = c.parse("0.7").unwrap();
        let v = lagrange_eval(&b, &vals, 2, &t);
        assert!(close(&v[0], &t, &c.pow10(-28)));
        assert!(close(&v[1], &(&t * &t), &c.pow10(-28)));
    }
}
