//! Look-ahead finite difference formulas.
//!
//! A `(j, s)` formula predicts the next state from `s` past states and the
//! current derivative,
//!
//! ```text
//! z[k+1] = Σ_{i<s} alpha[i] · z[k-i] + tau · beta · ż[k],
//! ```
//!
//! and reproduces polynomials of degree `≤ j` exactly. Coefficients are not
//! tabulated: they come from the Taylor order conditions, and whatever freedom
//! is left (`s > j`) is spent on pushing the extraneous roots of the
//! characteristic polynomial as far inside the unit disk as possible.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Formulas offered for full traces. All pass the order, exactness and
/// stability checks.
pub const SHIPPED: &[(usize, usize)] = &[(1, 1), (2, 3), (3, 4), (3, 5), (4, 6), (5, 8)];

/// The default formula, truncation order 3 from 5 past points.
pub const DEFAULT: (usize, usize) = (3, 5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulaCoefficients {
    pub j: usize,
    pub s: usize,
    /// Weights on `z[k], z[k-1], …, z[k-s+1]`.
    pub alphas: Vec<f64>,
    pub beta: f64,
    pub order: usize,
    pub stability_ok: bool,
    /// Largest modulus among the characteristic roots other than `ζ = 1`.
    pub max_extraneous_root: f64,
    /// Largest `tau·eta` for which the damped error recursion stays inside
    /// the unit disk (0 when any damping destabilizes the formula).
    pub tau_eta_limit: f64,
}

impl FormulaCoefficients {
    /// Max deviation over the order conditions `m = 0..=order`.
    pub fn order_residual(&self) -> f64 {
        let mut x = self.alphas.clone();
        x.push(self.beta);
        condition_residuals(self.order, self.s, &x)
            .iter()
            .fold(0.0, |acc, r| acc.max(r.abs()))
    }

    /// Roots of `ζ^s - Σ alpha[i] ζ^(s-1-i) + h·beta·ζ^(s-1)`.
    pub fn characteristic_roots(&self, h: f64) -> Vec<Complex64> {
        let mut coeffs: Vec<f64> = self.alphas.iter().map(|a| -a).collect();
        coeffs[0] += h * self.beta;
        monic_roots(&coeffs)
    }
}

fn power(x: f64, m: usize) -> f64 {
    // 0^0 = 1 for the consistency condition
    (0..m).fold(1.0, |acc, _| acc * x)
}

/// Roots of `ζ^s + c[0] ζ^(s-1) + … + c[s-1]` via the companion matrix.
fn monic_roots(c: &[f64]) -> Vec<Complex64> {
    let s = c.len();
    if s == 1 {
        return vec![Complex64::new(-c[0], 0.0)];
    }
    let mut m = DMatrix::<f64>::zeros(s, s);
    for (k, ck) in c.iter().enumerate() {
        m[(0, k)] = -ck;
    }
    for k in 1..s {
        m[(k, k - 1)] = 1.0;
    }
    m.complex_eigenvalues().iter().copied().collect()
}

fn extraneous_max(alphas: &[f64]) -> f64 {
    let c: Vec<f64> = alphas.iter().map(|a| -a).collect();
    let mut roots = monic_roots(&c);
    if roots.len() <= 1 {
        return 0.0;
    }
    let k = roots
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
        .map(|(k, _)| k)
        .unwrap_or(0);
    roots.remove(k);
    roots.iter().map(|r| r.norm()).fold(0.0, f64::max)
}

/// Root condition: all roots in the closed unit disk, those on the circle
/// simple.
fn root_condition(roots: &[Complex64]) -> bool {
    const EDGE: f64 = 1e-9;
    roots.iter().enumerate().all(|(k, r)| {
        let m = r.norm();
        if m > 1.0 + EDGE {
            return false;
        }
        if m < 1.0 - EDGE {
            return true;
        }
        roots
            .iter()
            .enumerate()
            .all(|(l, q)| l == k || (q - r).norm() > 1e-6)
    })
}

fn damped_limit(coeffs: &FormulaCoefficients) -> f64 {
    let inside = |h: f64| {
        coeffs
            .characteristic_roots(h)
            .iter()
            .all(|r| r.norm() <= 1.0 + 1e-12)
    };
    let step = 1e-3;
    let mut h = 0.0;
    while h < 4.0 {
        let next = h + step;
        if !inside(next) {
            let (mut lo, mut hi) = (h, next);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if inside(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return if lo < 1e-9 { 0.0 } else { lo };
        }
        h = next;
    }
    h
}

/// Order-condition system rows `m = 0..=j` over unknowns
/// `alpha[0..s], beta`.
fn order_system(j: usize, s: usize) -> Vec<Vec<f64>> {
    (0..=j)
        .map(|m| {
            let mut row: Vec<f64> = (0..s).map(|i| power(-(i as f64), m)).collect();
            row.push(if m == 1 { 1.0 } else { 0.0 });
            row.push(1.0);
            row
        })
        .collect()
}

/// `1 - lhs_m` for each order condition, accumulated with error-free
/// products and compensated summation.
fn condition_residuals(j: usize, s: usize, x: &[f64]) -> Vec<f64> {
    order_system(j, s)
        .iter()
        .map(|row| {
            let mut sum = row[s + 1];
            let mut comp = 0.0;
            let mut add = |v: f64| {
                let t = sum + v;
                comp += if sum.abs() >= v.abs() {
                    (sum - t) + v
                } else {
                    (v - t) + sum
                };
                sum = t;
            };
            for (a, xi) in row[..=s].iter().zip(x) {
                let p = a * xi;
                add(-p);
                add(-a.mul_add(*xi, -p));
            }
            sum + comp
        })
        .collect()
}

/// Iterative refinement of the pivot unknowns against the order conditions.
fn refine(j: usize, s: usize, mut x: Vec<f64>, pivots: &[usize]) -> Vec<f64> {
    let system = order_system(j, s);
    let k = pivots.len();
    let m = DMatrix::from_fn(k, k, |r, c| system[r][pivots[c]]);
    let lu = m.lu();
    for _ in 0..4 {
        let r = condition_residuals(j, s, &x);
        let rhs = nalgebra::DVector::from_column_slice(&r[..k]);
        let Some(dx) = lu.solve(&rhs) else { break };
        for (c, &pc) in pivots.iter().enumerate() {
            x[pc] += dx[c];
        }
    }
    x
}

/// Reduced row echelon form of an augmented system. Returns pivot columns.
fn rref(rows: &mut [Vec<f64>], columns: &[usize]) -> Vec<usize> {
    let mut pivots = Vec::new();
    let mut r = 0;
    for &col in columns {
        if r == rows.len() {
            break;
        }
        let best = (r..rows.len())
            .max_by(|&a, &b| rows[a][col].abs().total_cmp(&rows[b][col].abs()))
            .unwrap();
        if rows[best][col].abs() < 1e-12 {
            continue;
        }
        rows.swap(r, best);
        let p = rows[r][col];
        rows[r].iter_mut().for_each(|x| *x /= p);
        for other in 0..rows.len() {
            if other != r && rows[other][col] != 0.0 {
                let f = rows[other][col];
                let pivot_row = rows[r].clone();
                for (x, y) in rows[other].iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
            }
        }
        pivots.push(col);
        r += 1;
    }
    pivots
}

fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    scale: f64,
    iters: usize,
) -> (Vec<f64>, f64) {
    let d = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for k in 0..d {
        let mut p = start.to_vec();
        p[k] += scale;
        simplex.push(p);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    for _ in 0..iters {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = order.iter().map(|&k| simplex[k].clone()).collect();
        vals = order.iter().map(|&k| vals[k]).collect();
        if (vals[d] - vals[0]).abs() < 1e-15 {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|c| simplex[..d].iter().map(|p| p[c]).sum::<f64>() / d as f64)
            .collect();
        let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
        };
        let reflected = lerp(&centroid, &simplex[d], -1.0);
        let fr = f(&reflected);
        if fr < vals[0] {
            let expanded = lerp(&centroid, &simplex[d], -2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[d] = expanded;
                vals[d] = fe;
            } else {
                simplex[d] = reflected;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            simplex[d] = reflected;
            vals[d] = fr;
        } else {
            let contracted = if fr < vals[d] {
                lerp(&centroid, &reflected, 0.5)
            } else {
                lerp(&centroid, &simplex[d], 0.5)
            };
            let fc = f(&contracted);
            if fc < vals[d].min(fr) {
                simplex[d] = contracted;
                vals[d] = fc;
            } else {
                let best = simplex[0].clone();
                for k in 1..=d {
                    simplex[k] = lerp(&best, &simplex[k], 0.5);
                    vals[k] = f(&simplex[k]);
                }
            }
        }
    }
    let k = (0..=d)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap();
    (simplex[k].clone(), vals[k])
}

fn cache() -> &'static Mutex<HashMap<(usize, usize), FormulaCoefficients>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), FormulaCoefficients>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Coefficients of the `(j, s)` look-ahead formula.
///
/// Fails when `j > s`: only `s + 1` coefficients are available for the
/// `j + 1` order conditions. A feasible but unstable formula is returned with
/// `stability_ok = false`.
pub fn derive_formula(j: usize, s: usize) -> Result<FormulaCoefficients> {
    if j == 0 || s == 0 {
        return Err(Error::InvalidParameter(format!(
            "formula ({j}, {s}) needs j >= 1 and s >= 1"
        )));
    }
    if j > s {
        return Err(Error::InfeasibleFormula {
            order: j,
            past: s,
            max: s,
        });
    }
    if let Some(c) = cache().lock().expect("formula cache").get(&(j, s)) {
        return Ok(c.clone());
    }
    let coeffs = derive_uncached(j, s);
    cache()
        .lock()
        .expect("formula cache")
        .insert((j, s), coeffs.clone());
    Ok(coeffs)
}

fn derive_uncached(j: usize, s: usize) -> FormulaCoefficients {
    let unknowns = s + 1;
    let mut rows = order_system(j, s);
    // beta first so the free parameters are trailing alphas
    let columns: Vec<usize> = std::iter::once(s).chain(0..s).collect();
    let pivots = rref(&mut rows, &columns);
    let free: Vec<usize> = (0..unknowns).filter(|c| !pivots.contains(c)).collect();

    // x = particular + Σ p_k · null_k
    let solve = |p: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; unknowns];
        for (k, &fc) in free.iter().enumerate() {
            x[fc] = p[k];
        }
        for (r, &pc) in pivots.iter().enumerate() {
            let mut v = rows[r][unknowns];
            for (k, &fc) in free.iter().enumerate() {
                v -= rows[r][fc] * p[k];
            }
            x[pc] = v;
        }
        x
    };

    let x = if free.is_empty() {
        solve(&[])
    } else {
        let objective = |p: &[f64]| {
            let x = solve(p);
            let norm: f64 = x.iter().map(|v| v * v).sum();
            extraneous_max(&x[..s]) + 1e-9 * norm
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f00 ^ ((j as u64) << 8) ^ s as u64);
        let mut best: Option<(Vec<f64>, f64)> = None;
        for trial in 0..12 {
            let start: Vec<f64> = if trial == 0 {
                vec![0.0; free.len()]
            } else {
                (0..free.len())
                    .map(|_| rng.random_range(-3.0..3.0))
                    .collect()
            };
            let (p, _) = nelder_mead(&objective, &start, 0.5, 3000);
            let (p, v) = nelder_mead(&objective, &p, 0.05, 3000);
            if best.as_ref().is_none_or(|b| v < b.1) {
                best = Some((p, v));
            }
        }
        let (mut p, mut v) = best.expect("at least one trial");
        for _ in 0..6 {
            let (p2, v2) = nelder_mead(&objective, &p, 0.02, 3000);
            if v2 >= v - 1e-12 {
                break;
            }
            (p, v) = (p2, v2);
        }
        solve(&p)
    };
    let x = refine(j, s, x, &pivots);

    let alphas = x[..s].to_vec();
    let beta = x[s];
    let mut coeffs = FormulaCoefficients {
        j,
        s,
        alphas,
        beta,
        order: j,
        stability_ok: false,
        max_extraneous_root: extraneous_max(&x[..s]),
        tau_eta_limit: 0.0,
    };
    coeffs.stability_ok = root_condition(&coeffs.characteristic_roots(0.0));
    coeffs.tau_eta_limit = if coeffs.stability_ok {
        damped_limit(&coeffs)
    } else {
        0.0
    };
    coeffs
}

/// The stable formula of order `j` with the fewest past points `≥ s`
/// (searching up to `s + 6`).
pub fn nearest_stable(j: usize, s: usize) -> Option<FormulaCoefficients> {
    (s.max(j)..=s.max(j) + 6)
        .filter_map(|s2| derive_formula(j, s2).ok())
        .find(|c| c.stability_ok && c.tau_eta_limit > 0.0)
}

/// A stable formula usable at step product `tau_eta`, closest to `(j, s)`:
/// order `j` with `s..=s+6` past points first, then lower orders.
pub fn fallback(j: usize, s: usize, tau_eta: f64) -> Option<FormulaCoefficients> {
    (1..=j.max(1)).rev().find_map(|j2| {
        let lo = if j2 == j { s.max(j2) } else { j2 };
        (lo..=lo + 6)
            .filter_map(|s2| derive_formula(j2, s2).ok())
            .find(|c| c.stability_ok && c.tau_eta_limit >= tau_eta)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Propagates `z(t) = t^m` for `steps` steps from exact history and
    /// returns the worst absolute deviation from the exact trajectory.
    pub(crate) fn polynomial_error(
        c: &FormulaCoefficients,
        m: usize,
        tau: f64,
        steps: usize,
    ) -> f64 {
        let z = |t: f64| power(t, m);
        let dz = |t: f64| {
            if m == 0 {
                0.0
            } else {
                m as f64 * power(t, m - 1)
            }
        };
        // history at t = -(s-1)tau .. 0, newest last
        let mut hist: Vec<f64> = (0..c.s).map(|i| z(-((c.s - 1 - i) as f64) * tau)).collect();
        let mut worst: f64 = 0.0;
        for k in 0..steps {
            let t = k as f64 * tau;
            let mut next = c.beta * tau * dz(t);
            for (i, a) in c.alphas.iter().enumerate() {
                next += a * hist[hist.len() - 1 - i];
            }
            worst = worst.max((next - z(t + tau)).abs());
            hist.push(next);
        }
        worst
    }

    #[test]
    fn euler() {
        let c = derive_formula(1, 1).unwrap();
        assert_eq!(c.alphas, vec![1.0]);
        assert_eq!(c.beta, 1.0);
        assert!(c.stability_ok);
    }

    #[test]
    fn two_two_conditions() {
        let c = derive_formula(2, 2).unwrap();
        let a = &c.alphas;
        assert!((a[0] + a[1] - 1.0).abs() < 1e-12);
        assert!((-a[1] + c.beta - 1.0).abs() < 1e-12);
        assert!((a[1] - 1.0).abs() < 1e-12);
        // leapfrog: roots ±1 are simple, but any damping pushes one outside
        assert!(c.stability_ok);
        assert_eq!(c.tau_eta_limit, 0.0);
        for m in 0..=3 {
            let e = polynomial_error(&c, m, 0.01, 1);
            if m <= 2 {
                assert!(e < 1e-12, "m={m} {e}");
            }
        }
    }

    #[test]
    fn infeasible_order_reports_max() {
        match derive_formula(4, 2) {
            Err(Error::InfeasibleFormula {
                order: 4,
                past: 2,
                max: 2,
            }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            derive_formula(0, 2),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn three_three_is_unstable() {
        let c = derive_formula(3, 3).unwrap();
        assert!(!c.stability_ok);
        assert!(c.max_extraneous_root > 2.0);
    }

    #[test]
    fn five_six_has_no_stable_set_but_five_eight_does() {
        let c = derive_formula(5, 6).unwrap();
        assert!(!c.stability_ok, "{c:?}");
        let n = nearest_stable(5, 6).unwrap();
        assert_eq!((n.j, n.s), (5, 8));
    }

    #[test]
    fn default_formula_roots() {
        let c = derive_formula(3, 5).unwrap();
        assert!(c.stability_ok);
        assert!(c.max_extraneous_root < 0.6, "{}", c.max_extraneous_root);
        assert!(c.tau_eta_limit > 0.1);
    }

    #[test]
    fn shipped_formulas_pass_all_checks() {
        for &(j, s) in SHIPPED {
            let c = derive_formula(j, s).unwrap();
            assert!(
                c.order_residual() <= 1e-12,
                "({j},{s}) residual {:e}",
                c.order_residual()
            );
            assert!(c.stability_ok, "({j},{s})");
            assert!(c.tau_eta_limit > 0.0, "({j},{s})");
            for m in 0..=j {
                let e = polynomial_error(&c, m, 0.01, 100);
                assert!(e <= 1e-10, "({j},{s}) t^{m}: {e:e}");
            }
        }
    }

    #[test]
    fn derivation_is_deterministic() {
        let a = derive_uncached(4, 6);
        let b = derive_uncached(4, 6);
        assert_eq!(a, b);
    }
}
