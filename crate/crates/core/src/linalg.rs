//! Dense eigensolves, assignment and small matrix utilities.

use std::cmp::Ordering;

use nalgebra::{Schur, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::flow::is_hermitean;
use crate::{CMatrix, CVector};

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: Complex64,
    /// Unit 2-norm eigenvector.
    pub vector: CVector,
}

pub fn norm_1(m: &CMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |a, z| a.max(z.norm()))
}

/// 1-norm condition number `‖M‖₁‖M⁻¹‖₁`, infinite when `M` is singular.
pub fn condition_1(m: &CMatrix) -> f64 {
    match m.clone().try_inverse() {
        Some(inv) => {
            let c = norm_1(m) * norm_1(&inv);
            if c.is_finite() {
                c
            } else {
                f64::INFINITY
            }
        }
        None => f64::INFINITY,
    }
}

/// All eigenpairs of `m`, sorted by descending real part, ties (within a
/// relative `1e-12`) by descending imaginary part, then solver order.
///
/// Hermitean input goes through the symmetric solver; everything else through
/// a complex Schur form with back-substituted eigenvectors.
pub fn static_eigen(m: &CMatrix) -> Result<Vec<EigenPair>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: m.ncols(),
        });
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFiniteMatrix);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let mut pairs = if is_hermitean(m, 8.0 * f64::EPSILON * scale) {
        hermitean_pairs(m)
    } else {
        schur_pairs(m)?
    };
    sort_descending(&mut pairs, |p| p.value, scale);
    Ok(pairs)
}

/// Eigenvalues only, same ordering as [`static_eigen`].
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<Complex64>> {
    Ok(static_eigen(m)?.into_iter().map(|p| p.value).collect())
}

/// Eigenvalues with numerically defective clusters averaged.
///
/// Near a Jordan block the computed eigenvalues scatter by about
/// `sqrt(eps·‖A‖)` while their mean stays accurate to `eps`. Values closer
/// than that scale whose eigenvectors are nearly parallel are replaced by
/// the cluster mean. Well separated or orthogonal pairs are left untouched.
pub fn eigenvalues_averaged(m: &CMatrix) -> Result<Vec<Complex64>> {
    let pairs = static_eigen(m)?;
    let n = pairs.len();
    let radius = 8.0 * (f64::EPSILON * max_abs(m).max(1.0)).sqrt();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for a in 0..n {
        for b in a + 1..n {
            let close = (pairs[a].value - pairs[b].value).norm() <= radius;
            if close && pairs[a].vector.dotc(&pairs[b].vector).norm() >= 1.0 - 1e-6 {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                parent[rb] = ra;
            }
        }
    }
    let mut out: Vec<Complex64> = pairs.iter().map(|p| p.value).collect();
    for r in 0..n {
        let members: Vec<usize> = (0..n).filter(|&k| root(&mut parent, k) == r).collect();
        if members.len() > 1 {
            let mean =
                members.iter().map(|&k| pairs[k].value).sum::<Complex64>() / members.len() as f64;
            members.iter().for_each(|&k| out[k] = mean);
        }
    }
    Ok(out)
}

fn hermitean_pairs(m: &CMatrix) -> Vec<EigenPair> {
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    (0..m.nrows())
        .map(|k| EigenPair {
            value: Complex64::new(eig.eigenvalues[k], 0.0),
            vector: eig.eigenvectors.column(k).normalize(),
        })
        .collect()
}

fn schur_pairs(m: &CMatrix) -> Result<Vec<EigenPair>> {
    let n = m.nrows();
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let small = f64::EPSILON * max_abs(&t).max(f64::MIN_POSITIVE);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let lambda = t[(k, k)];
        // back substitution on (T - λI) y = 0 with y_k = 1
        let mut y = CVector::zeros(n);
        y[k] = Complex64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut s = Complex64::new(0.0, 0.0);
            for j in (i + 1)..=k {
                s += t[(i, j)] * y[j];
            }
            let mut d = t[(i, i)] - lambda;
            if d.norm() < small {
                d = Complex64::new(small, 0.0);
            }
            y[i] = -s / d;
        }
        let x = (&q * y).normalize();
        out.push(EigenPair {
            value: lambda,
            vector: x,
        });
    }
    Ok(out)
}

/// Sorts by descending real part; entries whose real parts agree within
/// `1e-12 * scale` are ordered by descending imaginary part. Stable.
pub fn sort_descending<T>(items: &mut [T], key: impl Fn(&T) -> Complex64, scale: f64) {
    items.sort_by(|a, b| key(b).re.partial_cmp(&key(a).re).unwrap_or(Ordering::Equal));
    let tol = 1e-12 * scale.max(1.0);
    let mut start = 0;
    while start < items.len() {
        let lead = key(&items[start]).re;
        let mut end = start + 1;
        while end < items.len() && (lead - key(&items[end]).re).abs() <= tol {
            end += 1;
        }
        items[start..end]
            .sort_by(|a, b| key(b).im.partial_cmp(&key(a).im).unwrap_or(Ordering::Equal));
        start = end;
    }
}

/// Multiplies `v` by a unit scalar so that `reference* v` is real and
/// non-negative.
pub fn phase_align(v: &mut CVector, reference: &CVector) {
    let overlap = reference.dotc(v);
    if overlap.norm() > 0.0 {
        let phase = overlap.conj() / overlap.norm();
        *v *= phase;
    }
}

/// Minimum-cost perfect assignment for a square cost matrix
/// (`cost[row][col]`), returning the column assigned to each row.
///
/// Hungarian method with potentials, `O(n³)`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    // 1-based arrays, column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Largest problem size solved with the optimal assignment; beyond this a
/// greedy nearest-pair matching is used.
pub const OPTIMAL_MATCH_LIMIT: usize = 64;

/// Assigns each predicted value a distinct candidate, minimizing the total
/// distance (optimal up to [`OPTIMAL_MATCH_LIMIT`], greedy beyond).
pub fn match_values(predicted: &[Complex64], candidates: &[Complex64]) -> Vec<usize> {
    let n = predicted.len();
    assert_eq!(n, candidates.len(), "matching needs equal sizes");
    if n <= OPTIMAL_MATCH_LIMIT {
        let cost: Vec<Vec<f64>> = predicted
            .iter()
            .map(|p| candidates.iter().map(|c| (p - c).norm()).collect())
            .collect();
        hungarian(&cost)
    } else {
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
        for (i, p) in predicted.iter().enumerate() {
            for (j, c) in candidates.iter().enumerate() {
                pairs.push(((p - c).norm(), i, j));
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
        let mut assign = vec![usize::MAX; n];
        let mut taken = vec![false; n];
        for (_, i, j) in pairs {
            if assign[i] == usize::MAX && !taken[j] {
                assign[i] = j;
                taken[j] = true;
            }
        }
        assign
    }
}
