//! One-parameter matrix flows and the transformations applied to them.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::CMatrix;

pub type MatrixFn = Arc<dyn Fn(f64) -> CMatrix + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Real,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Hermitean,
    General,
}

/// A dimension-`n` matrix-valued function of one real parameter.
///
/// Flows are immutable once built and cheap to clone; the evaluators are
/// shared behind `Arc` so a flow can be evaluated from many workers at once.
#[derive(Clone)]
pub struct MatrixFlow {
    n: usize,
    field: Field,
    structure: Structure,
    name: String,
    params: BTreeMap<String, f64>,
    eval: MatrixFn,
    deval: Option<MatrixFn>,
}

impl fmt::Debug for MatrixFlow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixFlow")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("field", &self.field)
            .field("structure", &self.structure)
            .field("params", &self.params)
            .field("analytic_derivative", &self.deval.is_some())
            .finish()
    }
}

impl MatrixFlow {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        field: Field,
        structure: Structure,
        eval: impl Fn(f64) -> CMatrix + Send + Sync + 'static,
        deval: Option<MatrixFn>,
    ) -> Self {
        MatrixFlow {
            n,
            field,
            structure,
            name: name.into(),
            params: BTreeMap::new(),
            eval: Arc::new(eval),
            deval,
        }
    }

    /// Constant flow `A(t) = m`.
    pub fn constant(name: impl Into<String>, m: CMatrix) -> Self {
        let n = m.nrows();
        let field = field_of(&m);
        let structure = if is_hermitean(&m, 0.0) {
            Structure::Hermitean
        } else {
            Structure::General
        };
        let zero = CMatrix::zeros(n, n);
        MatrixFlow::new(
            name,
            n,
            field,
            structure,
            move |_| m.clone(),
            Some(Arc::new(move |_| zero.clone())),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn is_hermitean(&self) -> bool {
        self.structure == Structure::Hermitean
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn has_analytic_derivative(&self) -> bool {
        self.deval.is_some()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_param(mut self, key: impl Into<String>, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    /// `A(t)`. Hermitean-tagged flows are symmetrized so the result is exactly
    /// hermitean even after rounding in similarity transforms.
    pub fn evaluate(&self, t: f64) -> Result<CMatrix> {
        if !t.is_finite() {
            return Err(Error::NonFiniteTime(t));
        }
        let m = (self.eval)(t);
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFiniteMatrix);
        }
        Ok(self.tidy(m))
    }

    /// `dA/dt` at `t`, analytic when available, otherwise a central
    /// difference with `h = 1e-6 * max(1, |t|)`.
    pub fn derivative(&self, t: f64) -> Result<CMatrix> {
        if !t.is_finite() {
            return Err(Error::NonFiniteTime(t));
        }
        let d = match &self.deval {
            Some(d) => d(t),
            None => {
                let h = 1e-6 * t.abs().max(1.0);
                ((self.eval)(t + h) - (self.eval)(t - h)) / Complex64::new(2.0 * h, 0.0)
            }
        };
        if d.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFiniteMatrix);
        }
        Ok(self.tidy(d))
    }

    fn tidy(&self, mut m: CMatrix) -> CMatrix {
        if self.structure == Structure::Hermitean {
            m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        }
        if self.field == Field::Real {
            m.iter_mut().for_each(|z| z.im = 0.0);
        }
        m
    }

    /// The flow `S⁻¹ A(t) S` (`S* A(t) S` for unitary and orthogonal `S`).
    pub fn conjugate(&self, s: &Similarity) -> Result<MatrixFlow> {
        if s.n() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: s.n(),
            });
        }
        let left = Arc::new(s.inverse.clone());
        let right = Arc::new(s.matrix.clone());
        let structure = match (self.structure, s.kind) {
            (Structure::Hermitean, SimilarityKind::Unitary | SimilarityKind::Orthogonal) => {
                Structure::Hermitean
            }
            _ => Structure::General,
        };
        let field = if self.field == Field::Real && s.is_real() {
            Field::Real
        } else {
            Field::Complex
        };
        let eval = {
            let f = self.eval.clone();
            let (l, r) = (left.clone(), right.clone());
            move |t| &*l * f(t) * &*r
        };
        let deval: MatrixFn = match &self.deval {
            Some(d) => {
                let d = d.clone();
                Arc::new(move |t| &*left * d(t) * &*right)
            }
            None => {
                let me = self.clone();
                Arc::new(move |t| &*left * me.derivative(t).expect("finite t") * &*right)
            }
        };
        let mut out = MatrixFlow::new(
            format!("{}~{}", self.name, s.kind.tag()),
            self.n,
            field,
            structure,
            eval,
            Some(deval),
        );
        out.params = self.params.clone();
        Ok(out)
    }

    /// Block-diagonal concatenation of `flows` in order.
    pub fn block_join(flows: &[MatrixFlow]) -> Result<MatrixFlow> {
        match flows {
            [] => return Err(Error::EmptyBlockJoin),
            [f] => return Ok(f.clone()),
            _ => {}
        }
        let n: usize = flows.iter().map(|f| f.n).sum();
        let field = if flows.iter().all(|f| f.field == Field::Real) {
            Field::Real
        } else {
            Field::Complex
        };
        let structure = if flows.iter().all(|f| f.is_hermitean()) {
            Structure::Hermitean
        } else {
            Structure::General
        };
        let parts: Arc<Vec<MatrixFlow>> = Arc::new(flows.to_vec());
        let eval = {
            let parts = parts.clone();
            move |t| assemble(n, &parts, |f| (f.eval)(t))
        };
        let deval: MatrixFn =
            Arc::new(move |t| assemble(n, &parts, |f| f.derivative(t).expect("finite t")));
        let name = flows
            .iter()
            .map(|f| f.name.as_str())
            .collect::<Vec<_>>()
            .join("+");
        Ok(MatrixFlow::new(
            format!("blkdiag({name})"),
            n,
            field,
            structure,
            eval,
            Some(deval),
        ))
    }

    /// `A(t) + A(t)*`, tagged hermitean.
    pub fn hermitize(&self) -> MatrixFlow {
        let f = self.eval.clone();
        let me = self.clone();
        let mut out = MatrixFlow::new(
            format!("herm({})", self.name),
            self.n,
            self.field,
            Structure::Hermitean,
            move |t| {
                let m = f(t);
                &m + m.adjoint()
            },
            Some(Arc::new(move |t| {
                let d = me.derivative(t).expect("finite t");
                &d + d.adjoint()
            })),
        );
        out.params = self.params.clone();
        out
    }

    /// Subtracts `delta * I` on the principal submatrix `indices` (1-based,
    /// inclusive).
    pub fn scalar_shift(
        &self,
        indices: RangeInclusive<usize>,
        delta: Complex64,
    ) -> Result<MatrixFlow> {
        let (lo, hi) = (*indices.start(), *indices.end());
        if lo < 1 || hi > self.n || lo > hi {
            return Err(Error::IndexRange { lo, hi, n: self.n });
        }
        let f = self.eval.clone();
        let field = if self.field == Field::Real && delta.im == 0.0 {
            Field::Real
        } else {
            Field::Complex
        };
        let structure = if self.is_hermitean() && delta.im == 0.0 {
            Structure::Hermitean
        } else {
            Structure::General
        };
        let me = self.clone();
        let mut out = MatrixFlow::new(
            format!("{}-shift", self.name),
            self.n,
            field,
            structure,
            move |t| {
                let mut m = f(t);
                for k in (lo - 1)..hi {
                    m[(k, k)] -= delta;
                }
                m
            },
            Some(Arc::new(move |t| me.derivative(t).expect("finite t"))),
        );
        out.params = self.params.clone();
        Ok(out)
    }
}

fn assemble(n: usize, parts: &[MatrixFlow], get: impl Fn(&MatrixFlow) -> CMatrix) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    let mut off = 0;
    for p in parts {
        let b = get(p);
        m.view_mut((off, off), (p.n, p.n)).copy_from(&b);
        off += p.n;
    }
    m
}

pub(crate) fn field_of(m: &CMatrix) -> Field {
    if m.iter().all(|z| z.im == 0.0) {
        Field::Real
    } else {
        Field::Complex
    }
}

/// Max-entry test for `m = m*`.
pub fn is_hermitean(m: &CMatrix, tol: f64) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (i..n).all(|j| (m[(i, j)] - m[(j, i)].conj()).norm() <= tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityKind {
    Unitary,
    Orthogonal,
    GeneralInvertible,
}

impl SimilarityKind {
    fn tag(self) -> &'static str {
        match self {
            SimilarityKind::Unitary => "U",
            SimilarityKind::Orthogonal => "Q",
            SimilarityKind::GeneralInvertible => "S",
        }
    }
}

/// A constant similarity `S` together with the inverse used to apply it.
#[derive(Debug, Clone)]
pub struct Similarity {
    matrix: CMatrix,
    inverse: CMatrix,
    kind: SimilarityKind,
}

impl Similarity {
    pub fn identity(n: usize) -> Self {
        Similarity {
            matrix: CMatrix::identity(n, n),
            inverse: CMatrix::identity(n, n),
            kind: SimilarityKind::Orthogonal,
        }
    }

    /// Wraps a unitary (or real orthogonal) matrix; rejects it if `U U*`
    /// differs from `I` by more than `1e-13` in any entry.
    pub fn unitary(u: CMatrix) -> Result<Self> {
        let n = u.nrows();
        if u.ncols() != n {
            return Err(Error::Dimension {
                expected: n,
                got: u.ncols(),
            });
        }
        let dev = (&u * u.adjoint() - CMatrix::identity(n, n))
            .iter()
            .fold(0.0_f64, |m, z| m.max(z.norm()));
        if dev > 1e-13 {
            return Err(Error::InvalidParameter(format!(
                "matrix is not unitary (max |UU* - I| = {dev:e})"
            )));
        }
        let kind = if field_of(&u) == Field::Real {
            SimilarityKind::Orthogonal
        } else {
            SimilarityKind::Unitary
        };
        Ok(Similarity {
            inverse: u.adjoint(),
            matrix: u,
            kind,
        })
    }

    /// Any invertible matrix. Fails when the 1-norm condition estimate is
    /// infinite or above `1e14`.
    pub fn general(s: CMatrix) -> Result<Self> {
        let n = s.nrows();
        if s.ncols() != n {
            return Err(Error::Dimension {
                expected: n,
                got: s.ncols(),
            });
        }
        let Some(inv) = s.clone().try_inverse() else {
            return Err(Error::SingularSimilarity(f64::INFINITY));
        };
        let cond = linalg::norm_1(&s) * linalg::norm_1(&inv);
        if !cond.is_finite() || cond > 1e14 {
            return Err(Error::SingularSimilarity(cond));
        }
        Ok(Similarity {
            matrix: s,
            inverse: inv,
            kind: SimilarityKind::GeneralInvertible,
        })
    }

    /// Seeded Haar-like random unitary from the QR factors of a complex
    /// Gaussian matrix.
    pub fn random_unitary(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            )
        });
        Self::orthonormalize(g, SimilarityKind::Unitary)
    }

    /// Seeded random real orthogonal matrix.
    pub fn random_orthogonal(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(StandardNormal.sample(&mut rng), 0.0)
        });
        Self::orthonormalize(g, SimilarityKind::Orthogonal)
    }

    fn orthonormalize(g: CMatrix, kind: SimilarityKind) -> Self {
        let n = g.nrows();
        let qr = g.qr();
        let r = qr.r();
        let mut q = qr.q();
        for j in 0..n {
            let d = r[(j, j)];
            let phase = if d.norm() > 0.0 {
                d / d.norm()
            } else {
                Complex64::new(1.0, 0.0)
            };
            let mut col = q.column_mut(j);
            col *= phase;
        }
        if kind == SimilarityKind::Orthogonal {
            q.iter_mut().for_each(|z| z.im = 0.0);
        }
        Similarity {
            inverse: q.adjoint(),
            matrix: q,
            kind,
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn inverse(&self) -> &CMatrix {
        &self.inverse
    }

    fn is_real(&self) -> bool {
        field_of(&self.matrix) == Field::Real && field_of(&self.inverse) == Field::Real
    }
}
