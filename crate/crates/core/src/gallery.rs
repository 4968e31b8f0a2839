//! Named test flows with closed-form entries and analytic derivatives.
//!
//! Every flow can be obscured by a seeded random unitary (complex) or
//! orthogonal (real) similarity, which hides its block-diagonal origin while
//! leaving the eigencurves untouched.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Field, MatrixFlow, Similarity, Structure};
use crate::linalg;
use crate::CMatrix;

/// Seed used for flows that are always obscured when no seed is given.
pub const DEFAULT_OBSCURE_SEED: u64 = 2020;

pub const NAMES: &[&str] = &[
    "stackexchange6",
    "diag5",
    "a4",
    "a6",
    "a10",
    "b4",
    "b6",
    "b10",
    "real2x2",
    "hermitean11_analog",
    "random_hermitean",
];

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

const I: Complex64 = Complex64::new(0.0, 1.0);

fn diag_flow(
    name: &str,
    entries: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    derivs: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
) -> MatrixFlow {
    let n = entries(0.0).len();
    MatrixFlow::new(
        name,
        n,
        Field::Real,
        Structure::Hermitean,
        move |t| {
            CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                n,
                entries(t).into_iter().map(re),
            ))
        },
        Some(Arc::new(move |t| {
            CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                n,
                derivs(t).into_iter().map(re),
            ))
        })),
    )
}

/// The real symmetric 6×6 flow from the "tracking eigenvalues through a
/// crossing" discussion; permutation-similar to `1 ⊕ 1 ⊕ 2 ⊕ 2` blocks.
pub fn stackexchange6() -> MatrixFlow {
    let r = 7.0 * 2f64.sqrt();
    let build = move |t: f64, d: bool| {
        let mut m = CMatrix::zeros(6, 6);
        let (c, s) = if d { (0.0, 1.0) } else { (1.0, t) };
        m[(0, 0)] = re(21.0 * s + 0.5 * c);
        m[(1, 1)] = re(7.0 * s + 0.5 * c);
        m[(2, 2)] = re(0.5 * c - 7.0 * s);
        m[(3, 3)] = re(0.5 * c - 21.0 * s);
        m[(4, 4)] = re(14.0 * s - c);
        m[(5, 5)] = re(-14.0 * s - c);
        m[(1, 4)] = re(r * s);
        m[(4, 1)] = re(r * s);
        m[(2, 5)] = re(r * s);
        m[(5, 2)] = re(r * s);
        m
    };
    MatrixFlow::new(
        "stackexchange6",
        6,
        Field::Real,
        Structure::Hermitean,
        move |t| build(t, false),
        Some(Arc::new(move |t| build(t, true))),
    )
}

/// Real diagonal 5×5 seed; its eigencurves cross freely.
pub fn diag5() -> MatrixFlow {
    diag_flow(
        "diag5",
        |t| {
            vec![
                (1.0 - t / 2.0).sin(),
                (t / 3.0).cos() / 2.0,
                t.sin() * (-1.0 - 0.2 * t).cos(),
                (2.0 * t - 0.5).cos(),
                (1.0 + 3.0 * t).cos().powi(2),
            ]
        },
        |t| {
            vec![
                -(1.0 - t / 2.0).cos() / 2.0,
                -(t / 3.0).sin() / 6.0,
                t.cos() * (-1.0 - 0.2 * t).cos() + 0.2 * t.sin() * (-1.0 - 0.2 * t).sin(),
                -2.0 * (2.0 * t - 0.5).sin(),
                -3.0 * (2.0 + 6.0 * t).sin(),
            ]
        },
    )
}

fn tridiagonal(diag: &[Complex64], unit_off: bool) -> CMatrix {
    let n = diag.len();
    let mut m = CMatrix::zeros(n, n);
    for k in 0..n {
        m[(k, k)] = diag[k];
        if unit_off && k + 1 < n {
            m[(k, k + 1)] = re(1.0);
            m[(k + 1, k)] = re(1.0);
        }
    }
    m
}

/// Non-normal complex tridiagonal 4×4 flow.
pub fn a4() -> MatrixFlow {
    MatrixFlow::new(
        "a4",
        4,
        Field::Complex,
        Structure::General,
        |t| {
            tridiagonal(
                &[
                    I * (2.0 - (t - 1.0).exp()) + t / 6.0,
                    re(-2.0) - 2.0 * I * (t - 1.0).sin(),
                    2.0 * I - 2.0 * t,
                    re((t + 2.0).sin()) + I * t,
                ],
                true,
            )
        },
        Some(Arc::new(|t| {
            tridiagonal(
                &[
                    -I * (t - 1.0).exp() + 1.0 / 6.0,
                    -2.0 * I * (t - 1.0).cos(),
                    re(-2.0),
                    re((t + 2.0).cos()) + I,
                ],
                false,
            )
        })),
    )
}

/// Non-normal complex tridiagonal 6×6 flow.
pub fn a6() -> MatrixFlow {
    MatrixFlow::new(
        "a6",
        6,
        Field::Complex,
        Structure::General,
        |t| {
            let z = Complex64::new(-1.0, t / 3.0);
            tridiagonal(
                &[
                    I - 2.0 * (2.0 * t).cos(),
                    re(-2.0) - 2.0 * I * (t - 1.0).sin(),
                    2.0 * I - t,
                    I * t.sin().exp(),
                    re(t / 2.0 + t.sin() * (2.0 * t).cosh() / 100.0),
                    t - I / 8.0 * z.cos(),
                ],
                true,
            )
        },
        Some(Arc::new(|t| {
            let z = Complex64::new(-1.0, t / 3.0);
            tridiagonal(
                &[
                    re(4.0 * (2.0 * t).sin()),
                    -2.0 * I * (t - 1.0).cos(),
                    re(-1.0),
                    I * t.sin().exp() * t.cos(),
                    re(0.5
                        + (t.cos() * (2.0 * t).cosh() + 2.0 * t.sin() * (2.0 * t).sinh()) / 100.0),
                    re(1.0) - z.sin() / 24.0,
                ],
                false,
            )
        })),
    )
}

/// `a6 ⊕ a4`.
pub fn a10() -> MatrixFlow {
    MatrixFlow::block_join(&[a6(), a4()])
        .expect("two blocks")
        .with_name("a10")
}

/// The real non-normal flow `[[1, t], [t², 3]]` whose eigenvalues are
/// `2 ± sqrt(1 + t³)`: a complex conjugate pair for `t < -1`, real after.
pub fn real2x2() -> MatrixFlow {
    MatrixFlow::new(
        "real2x2",
        2,
        Field::Real,
        Structure::General,
        |t| CMatrix::from_row_slice(2, 2, &[re(1.0), re(t), re(t * t), re(3.0)]),
        Some(Arc::new(|t| {
            CMatrix::from_row_slice(2, 2, &[re(0.0), re(1.0), re(2.0 * t), re(0.0)])
        })),
    )
}

// Seed block for the 7 ⊕ 4 hermitean analog. Diagonal entries oscillate so
// that curves of the two blocks cross, while the dense weak coupling turns
// every same-block meeting into an avoided crossing.
const H_FREQ: [f64; 7] = [0.9, 0.55, 1.3, 0.7, 1.1, 0.45, 0.8];
const H_PHASE: [f64; 7] = [0.3, 1.7, 2.9, 4.1, 0.8, 5.2, 3.6];
const H_AMP: [f64; 7] = [2.0, 1.6, 1.8, 1.2, 1.5, 1.9, 1.4];
const H_OFFSET: [f64; 7] = [1.0, 0.5, 0.0, -0.4, -0.8, 0.2, -1.2];
const H_COUPLING: f64 = 0.09;

fn seed7(t: f64, derivative: bool) -> CMatrix {
    let mut m = CMatrix::zeros(7, 7);
    for k in 0..7 {
        let arg = H_FREQ[k] * t + H_PHASE[k];
        m[(k, k)] = if derivative {
            re(0.5 * H_AMP[k] * H_FREQ[k] * arg.cos())
        } else {
            re(0.5 * (H_OFFSET[k] + H_AMP[k] * arg.sin()))
        };
        for l in (k + 1)..7 {
            let (kf, lf) = (k as f64, l as f64);
            let amp_arg = 0.4 * t + kf - lf;
            let amp = 1.0 + 0.3 * amp_arg.cos();
            let freq = 0.25 * (kf + 1.0);
            let phase = (I * (freq * t - lf)).exp();
            m[(k, l)] = if derivative {
                H_COUPLING * phase * (re(-0.12 * amp_arg.sin()) + I * freq * amp)
            } else {
                H_COUPLING * amp * phase
            };
        }
    }
    m
}

fn seed7_joined(t: f64, derivative: bool) -> CMatrix {
    let s = seed7(t, derivative);
    let mut m = CMatrix::zeros(11, 11);
    m.view_mut((0, 0), (7, 7)).copy_from(&s);
    let sub = s.view((1, 1), (4, 4)) * re(2.0);
    m.view_mut((7, 7), (4, 4)).copy_from(&sub);
    m
}

/// Unobscured 11×11 hermitean flow `B(t) = B₂(t) + B₂(t)*` with
/// `B₂ = S ⊕ 2·S[2..5, 2..5]` for a dense complex 7×7 seed `S(t)`.
pub fn hermitean11_base() -> MatrixFlow {
    MatrixFlow::new(
        "hermitean11_base",
        11,
        Field::Complex,
        Structure::General,
        |t| seed7_joined(t, false),
        Some(Arc::new(|t| seed7_joined(t, true))),
    )
    .hermitize()
    .with_name("hermitean11_base")
}

/// `F + tG + sin(t)K` for seeded random hermitean `F`, `G`, `K`.
pub fn random_hermitean(n: usize, seed: u64) -> MatrixFlow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (n as f64).sqrt();
    let mut herm = || {
        let g = DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ) * scale
        });
        (&g + g.adjoint()) * re(0.5)
    };
    let (f, g, k) = (herm(), herm(), herm());
    let (g2, k2) = (g.clone(), k.clone());
    MatrixFlow::new(
        format!("random_hermitean({n})"),
        n,
        Field::Complex,
        Structure::Hermitean,
        move |t| &f + &g * re(t) + &k * re(t.sin()),
        Some(Arc::new(move |t| &g2 + &k2 * re(t.cos()))),
    )
}

/// Named flow plus its construction parameters; enough to rebuild the flow.
///
/// Recognized `params`: `n` (for `random_hermitean`), and a scalar shift
/// `shift_from`, `shift_to`, `shift_re`, `shift_im` applied to the unobscured
/// flow before obscuring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRef {
    pub name: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl FlowRef {
    pub fn new(name: impl Into<String>, seed: Option<u64>) -> Self {
        let mut r = FlowRef {
            name: name.into(),
            seed,
            params: BTreeMap::new(),
        };
        // random_hermitean(8) shorthand
        if let Some(inner) = r
            .name
            .strip_prefix("random_hermitean(")
            .and_then(|s| s.strip_suffix(')'))
        {
            if let Ok(n) = inner.trim().parse::<usize>() {
                r.params.insert("n".into(), n as f64);
                r.name = "random_hermitean".into();
            }
        }
        r
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    /// Adds a scalar shift of `delta·I` on rows/columns `from..=to` of the
    /// unobscured flow.
    pub fn with_shift(self, from: usize, to: usize, delta: Complex64) -> Self {
        self.with_param("shift_from", from as f64)
            .with_param("shift_to", to as f64)
            .with_param("shift_re", delta.re)
            .with_param("shift_im", delta.im)
    }

    fn canonical(&self) -> (&str, bool) {
        match self.name.as_str() {
            "b4" => ("a4", true),
            "b6" => ("a6", true),
            "b10" => ("a10", true),
            "hermitean11_analog" => ("hermitean11_analog", true),
            other => (other, false),
        }
    }

    fn obscure_seed(&self) -> Option<u64> {
        let (_, always) = self.canonical();
        match self.seed {
            Some(s) => Some(s),
            None if always => Some(DEFAULT_OBSCURE_SEED),
            None => None,
        }
    }

    fn dimension_param(&self) -> Result<usize> {
        match self.params.get("n") {
            Some(&n) if n >= 1.0 && n.fract() == 0.0 => Ok(n as usize),
            Some(&n) => Err(Error::InvalidParameter(format!("dimension n = {n}"))),
            None => Err(Error::InvalidParameter(
                "random_hermitean needs parameter n".into(),
            )),
        }
    }

    /// The flow before any obscuring similarity (scalar shift included).
    pub fn base(&self) -> Result<MatrixFlow> {
        let (name, _) = self.canonical();
        let flow = match name {
            "stackexchange6" => stackexchange6(),
            "diag5" => diag5(),
            "a4" => a4(),
            "a6" => a6(),
            "a10" => a10(),
            "real2x2" => real2x2(),
            "hermitean11_analog" => hermitean11_base(),
            "random_hermitean" => random_hermitean(self.dimension_param()?, self.seed.unwrap_or(0)),
            _ => return Err(Error::UnknownFlow(self.name.clone())),
        };
        match (self.params.get("shift_from"), self.params.get("shift_to")) {
            (Some(&lo), Some(&hi)) => {
                let delta = Complex64::new(
                    self.params.get("shift_re").copied().unwrap_or(0.0),
                    self.params.get("shift_im").copied().unwrap_or(0.0),
                );
                flow.scalar_shift(lo as usize..=hi as usize, delta)
            }
            (None, None) => Ok(flow),
            _ => Err(Error::InvalidParameter(
                "shift needs both shift_from and shift_to".into(),
            )),
        }
    }

    /// The flow as analyzed: [`base`](Self::base), obscured when a seed is
    /// set (random_hermitean uses its seed for generation instead).
    pub fn build(&self) -> Result<MatrixFlow> {
        let base = self.base()?;
        let (name, _) = self.canonical();
        let flow = match self.obscure_seed() {
            Some(seed) if name != "random_hermitean" => {
                let s = if base.field() == Field::Real {
                    Similarity::random_orthogonal(base.n(), seed)
                } else {
                    Similarity::random_unitary(base.n(), seed)
                };
                base.conjugate(&s)?
            }
            _ => base,
        };
        let mut flow = flow.with_name(self.name.clone());
        if let Some(seed) = self.seed {
            flow = flow.with_param("seed", seed as f64);
        }
        for (k, v) in &self.params {
            flow = flow.with_param(k.clone(), *v);
        }
        Ok(flow)
    }

    /// Index sets of the diagonal blocks of the unobscured flow, when known.
    pub fn known_blocks(&self) -> Result<Vec<Vec<usize>>> {
        let (name, _) = self.canonical();
        Ok(match name {
            "stackexchange6" => vec![vec![0], vec![3], vec![1, 4], vec![2, 5]],
            "diag5" => (0..5).map(|k| vec![k]).collect(),
            "a4" => vec![(0..4).collect()],
            "a6" => vec![(0..6).collect()],
            "a10" => vec![(0..6).collect(), (6..10).collect()],
            "real2x2" => vec![vec![0, 1]],
            "hermitean11_analog" => vec![(0..7).collect(), (7..11).collect()],
            "random_hermitean" => vec![(0..self.dimension_param()?).collect()],
            _ => return Err(Error::UnknownFlow(self.name.clone())),
        })
    }

    /// Ground-truth block membership for this gallery flow.
    pub fn block_oracle(&self) -> Result<BlockOracle> {
        Ok(BlockOracle {
            base: self.base()?,
            blocks: self.known_blocks()?,
        })
    }
}

/// Shorthand for `FlowRef::new(name, seed).build()`.
pub fn gallery(name: &str, seed: Option<u64>) -> Result<MatrixFlow> {
    FlowRef::new(name, seed).build()
}

/// Exact block membership of eigenvalues for flows whose block-diagonal form
/// is known: each block's spectrum is computed from its own principal
/// submatrix of the unobscured flow.
#[derive(Debug, Clone)]
pub struct BlockOracle {
    base: MatrixFlow,
    blocks: Vec<Vec<usize>>,
}

impl BlockOracle {
    pub fn new(base: MatrixFlow, blocks: Vec<Vec<usize>>) -> Self {
        BlockOracle { base, blocks }
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// Eigenvalues of every block at `t`.
    pub fn block_spectra(&self, t: f64) -> Result<Vec<Vec<Complex64>>> {
        let m = self.base.evaluate(t)?;
        self.blocks
            .iter()
            .map(|idx| {
                let sub = CMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])]);
                Ok(linalg::static_eigen(&sub)?
                    .into_iter()
                    .map(|p| p.value)
                    .collect())
            })
            .collect()
    }

    /// Index of the block whose spectrum at `t` lies closest to `value`.
    pub fn block_of(&self, t: f64, value: Complex64) -> Result<usize> {
        let spectra = self.block_spectra(t)?;
        let mut best = (f64::INFINITY, 0);
        for (b, spec) in spectra.iter().enumerate() {
            for ev in spec {
                let d = (ev - value).norm();
                if d < best.0 {
                    best = (d, b);
                }
            }
        }
        Ok(best.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().fold(0.0, |a, z| a.max(z.norm()))
    }

    fn all_refs() -> Vec<FlowRef> {
        vec![
            FlowRef::new("stackexchange6", Some(7)),
            FlowRef::new("diag5", Some(3)),
            FlowRef::new("a4", None),
            FlowRef::new("a6", None),
            FlowRef::new("a10", None),
            FlowRef::new("b10", None),
            FlowRef::new("real2x2", Some(5)),
            FlowRef::new("hermitean11_analog", None),
            FlowRef::new("random_hermitean(5)", Some(1)),
        ]
    }

    #[test]
    fn stackexchange6_at_zero() {
        let m = stackexchange6().evaluate(0.0).unwrap();
        let expect = [0.5, 0.5, 0.5, 0.5, -1.0, -1.0];
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { expect[i] } else { 0.0 };
                assert_eq!(m[(i, j)], re(want));
            }
        }
    }

    #[test]
    fn real2x2_at_zero() {
        let m = real2x2().evaluate(0.0).unwrap();
        assert_eq!(
            m,
            CMatrix::from_row_slice(2, 2, &[re(1.0), re(0.0), re(0.0), re(3.0)])
        );
    }

    #[test]
    fn diag5_entries() {
        let m = diag5().evaluate(0.0).unwrap();
        let expect = [1f64.sin(), 0.5, 0.0, 0.5f64.cos(), 1f64.cos().powi(2)];
        for (k, e) in expect.iter().enumerate() {
            assert!((m[(k, k)] - re(*e)).norm() < 1e-15);
        }
        let t = 1.7;
        let m = diag5().evaluate(t).unwrap();
        let expect = [
            (1.0 - t / 2.0).sin(),
            (t / 3.0).cos() / 2.0,
            t.sin() * (-1.0 - 0.2 * t).cos(),
            (2.0 * t - 0.5).cos(),
            (1.0 + 3.0 * t).cos().powi(2),
        ];
        for (k, e) in expect.iter().enumerate() {
            assert!((m[(k, k)] - re(*e)).norm() < 1e-15);
        }
    }

    #[test]
    fn a4_corner_entry() {
        for t in [-1.0, 0.0, 0.5, 3.0] {
            let m = a4().evaluate(t).unwrap();
            let want = I * (2.0 - (t - 1.0).exp()) + t / 6.0;
            assert!((m[(0, 0)] - want).norm() < 1e-15);
        }
    }

    #[test]
    fn a10_tags() {
        let f = gallery("a10", None).unwrap();
        assert_eq!(f.n(), 10);
        assert_eq!(f.structure(), Structure::General);
        assert_eq!(f.field(), Field::Complex);
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(gallery("nope", None), Err(Error::UnknownFlow(_))));
        assert!(matches!(
            gallery("random_hermitean", None),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn obscured_flows_are_dense_and_tagged() {
        let f = gallery("stackexchange6", Some(7)).unwrap();
        assert!(f.is_hermitean());
        assert_eq!(f.field(), Field::Real);
        let m = f.evaluate(0.05).unwrap();
        assert!(m[(0, 5)].norm() > 1e-6);
        let h = gallery("hermitean11_analog", None).unwrap();
        assert!(h.is_hermitean());
        assert_eq!(h.n(), 11);
        assert!(h.evaluate(0.3).unwrap()[(0, 10)].norm() > 1e-8);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-5;
        for r in all_refs() {
            let f = r.build().unwrap();
            for k in 0..10 {
                let t = -3.0 + 0.61 * k as f64;
                let fd = (f.evaluate(t + h).unwrap() - f.evaluate(t - h).unwrap()) / re(2.0 * h);
                let err = max_abs(&(f.derivative(t).unwrap() - fd));
                assert!(err <= 1e-6, "{} at t={t}: {err:e}", r.name);
            }
        }
    }

    #[test]
    fn hermitean_and_real_tags_hold() {
        for r in all_refs() {
            let f = r.build().unwrap();
            for t in [-2.0, 0.0, 1.1] {
                let m = f.evaluate(t).unwrap();
                if f.is_hermitean() {
                    assert!(crate::flow::is_hermitean(&m, 1e-13), "{}", r.name);
                }
                if f.field() == Field::Real {
                    assert!(m.iter().all(|z| z.im == 0.0), "{}", r.name);
                }
            }
        }
    }

    #[test]
    fn known_blocks_partition() {
        for r in all_refs() {
            let f = r.build().unwrap();
            let mut all: Vec<usize> = r.known_blocks().unwrap().concat();
            all.sort_unstable();
            assert_eq!(all, (0..f.n()).collect::<Vec<_>>(), "{}", r.name);
        }
    }

    #[test]
    fn block_oracle_recovers_block_spectra() {
        let r = FlowRef::new("b10", Some(4));
        let oracle = r.block_oracle().unwrap();
        let t = 0.4;
        let a4_eigs = linalg::static_eigen(&a4().evaluate(t).unwrap()).unwrap();
        for p in a4_eigs {
            assert_eq!(oracle.block_of(t, p.value).unwrap(), 1);
        }
        assert_eq!(oracle.block_sizes(), vec![6, 4]);
    }

    #[test]
    fn shift_params_roundtrip_through_build() {
        let delta = Complex64::new(0.25, -0.5);
        let shifted = FlowRef::new("a10", None)
            .with_shift(1, 6, delta)
            .build()
            .unwrap();
        let plain = a10();
        let d = shifted.evaluate(0.2).unwrap() - plain.evaluate(0.2).unwrap();
        assert_eq!(d[(0, 0)], -delta);
        assert_eq!(d[(5, 5)], -delta);
        assert_eq!(d[(6, 6)], re(0.0));
    }
}
