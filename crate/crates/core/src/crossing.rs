//! Crossings, the `R1` matrix, near-approach tables and touch suggestions.

use std::collections::BTreeSet;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::MatrixFlow;
use crate::gallery::BlockOracle;
use crate::linalg;
use crate::par::{self, Execution};
use crate::tracker::EigencurveTrace;

/// Gaps at or below this are treated as contact, not as a side of a crossing.
pub const CROSS_TOL: f64 = 1e-9;

/// Near-approach thresholds, coarsest first.
pub const BUCKETS: [f64; 4] = [1.0, 1e-2, 1e-4, 1e-6];

/// Traces with `|Im λ|` above this are not treated as real.
pub const REAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    /// 1-based curve indices, `i < j`.
    pub i: usize,
    pub j: usize,
    pub t_star: f64,
    pub gap_before: f64,
    pub gap_after: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossingSet {
    pub crossings: Vec<Crossing>,
}

impl CrossingSet {
    /// Distinct crossing pairs.
    pub fn pairs(&self) -> BTreeSet<(usize, usize)> {
        self.crossings.iter().map(|c| (c.i, c.j)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.crossings.is_empty()
    }
}

fn check_grid(traces: &[EigencurveTrace]) -> Result<usize> {
    let Some(first) = traces.first() else {
        return Ok(0);
    };
    let len = first.times.len();
    for t in traces {
        if t.times.len() != len || t.values.len() != len || t.times != first.times {
            return Err(Error::GridMismatch);
        }
    }
    Ok(len)
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

/// Sign changes of `Re(λ_i - λ_j)` between neighbouring samples whose gap
/// exceeds `cross_tol`.
pub fn detect_crossings(traces: &[EigencurveTrace], cross_tol: f64) -> Result<CrossingSet> {
    detect_crossings_with(traces, cross_tol, Execution::default())
}

pub fn detect_crossings_with(
    traces: &[EigencurveTrace],
    cross_tol: f64,
    exec: Execution,
) -> Result<CrossingSet> {
    check_grid(traces)?;
    let max_im = traces
        .iter()
        .flat_map(|t| t.values.iter())
        .fold(0.0f64, |m, z| m.max(z.im.abs()));
    if max_im > REAL_TOL {
        return Err(Error::ComplexTraces(max_im));
    }
    let found = par::map_slice(exec, &pairs(traces.len()), |&(i, j)| {
        let (a, b) = (&traces[i], &traces[j]);
        let mut out = Vec::new();
        let mut last: Option<(usize, f64)> = None;
        for k in 0..a.values.len() {
            let d = a.values[k].re - b.values[k].re;
            if d.abs() <= cross_tol {
                continue;
            }
            if let Some((k0, d0)) = last {
                if d0.signum() != d.signum() {
                    let (t0, t1) = (a.times[k0], a.times[k]);
                    let t_star = t0 + (t1 - t0) * d0.abs() / (d0.abs() + d.abs());
                    out.push(Crossing {
                        i: i + 1,
                        j: j + 1,
                        t_star,
                        gap_before: d0.abs(),
                        gap_after: d.abs(),
                    });
                }
            }
            last = Some((k, d));
        }
        out
    });
    Ok(CrossingSet {
        crossings: found.into_iter().flatten().collect(),
    })
}

/// The `(n-1) × (n+1)` crossing matrix: row `i` holds `i` followed by the
/// higher-indexed curves it crosses, ascending, zero padded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct R1Matrix {
    pub rows: Vec<Vec<usize>>,
}

impl R1Matrix {
    /// Builds the matrix from per-row partner lists, e.g. `&[(1, &[2, 3])]`.
    pub fn from_partners(n: usize, partners: &[(usize, &[usize])]) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(i, js) in partners {
            for &j in js {
                set.insert((i.min(j), i.max(j)));
            }
        }
        build_r1_pairs(&set, n)
    }

    /// Validates the layout of raw rows.
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Result<Self> {
        let n = rows.len() + 1;
        for (r, row) in rows.iter().enumerate() {
            let bad = |msg: &str| Err(Error::InvalidParameter(format!("R1 row {}: {msg}", r + 1)));
            if row.len() != n + 1 {
                return bad("wrong length");
            }
            if row[0] != r + 1 {
                return bad("first column must be the row number");
            }
            let mut prev = r + 1;
            let mut padding = false;
            for &x in &row[1..] {
                if x == 0 {
                    padding = true;
                } else if padding {
                    return bad("zero padding must be at the tail");
                } else if x <= prev || x > n {
                    return bad("entries must increase and lie in (i, n]");
                } else {
                    prev = x;
                }
            }
        }
        Ok(R1Matrix { rows })
    }

    /// Number of curves.
    pub fn n(&self) -> usize {
        self.rows.len() + 1
    }

    /// Curves crossed by curve `i` (1-based) with higher index.
    pub fn partners(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows
            .get(i.wrapping_sub(1))
            .into_iter()
            .flat_map(|r| r[1..].iter().copied().take_while(|&x| x != 0))
    }

    pub fn pairs(&self) -> BTreeSet<(usize, usize)> {
        (1..self.n())
            .flat_map(|i| self.partners(i).map(move |j| (i, j)))
            .collect()
    }
}

fn build_r1_pairs(pairs: &BTreeSet<(usize, usize)>, n: usize) -> Result<R1Matrix> {
    let mut rows: Vec<Vec<usize>> = (1..n.max(1))
        .map(|i| {
            let mut r = vec![0; n + 1];
            r[0] = i;
            r
        })
        .collect();
    let mut fill = vec![1usize; rows.len()];
    for &(i, j) in pairs {
        if i == 0 || j > n || i >= j {
            return Err(Error::CurveIndex { index: j.max(i), n });
        }
        rows[i - 1][fill[i - 1]] = j;
        fill[i - 1] += 1;
    }
    Ok(R1Matrix { rows })
}

/// `R1` of a crossing set; repeated crossings of one pair appear once.
pub fn build_r1(crossings: &CrossingSet, n: usize) -> Result<R1Matrix> {
    build_r1_pairs(&crossings.pairs(), n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearApproach {
    pub i: usize,
    pub j: usize,
    pub d_min: f64,
    pub t_min: f64,
    /// Finest threshold in [`BUCKETS`] that `d_min` reaches, if any.
    pub bucket: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NearApproachTable {
    pub entries: Vec<NearApproach>,
}

impl NearApproachTable {
    pub fn get(&self, i: usize, j: usize) -> Option<&NearApproach> {
        let (i, j) = (i.min(j), i.max(j));
        self.entries.iter().find(|e| e.i == i && e.j == j)
    }

    /// The pair with the smallest `d_min`.
    pub fn closest(&self) -> Option<&NearApproach> {
        self.entries
            .iter()
            .min_by(|a, b| a.d_min.total_cmp(&b.d_min))
    }

    /// Pairs within `threshold`.
    pub fn within(&self, threshold: f64) -> impl Iterator<Item = &NearApproach> {
        self.entries.iter().filter(move |e| e.d_min <= threshold)
    }
}

pub fn bucket_of(d: f64) -> Option<f64> {
    BUCKETS.iter().rev().copied().find(|&b| d <= b)
}

/// Minimum of a sampled distance near grid index `k`, refined through a
/// parabola in `d²`. Never exceeds the grid minimum.
fn refine_minimum(times: &[f64], dist: &[f64], k: usize) -> (f64, f64) {
    let (t, d) = (times[k], dist[k]);
    if k == 0 || k + 1 >= dist.len() || d == 0.0 {
        return (t, d);
    }
    let (y0, y1, y2) = (dist[k - 1].powi(2), d * d, dist[k + 1].powi(2));
    let h = times[k + 1] - times[k];
    let curvature = y0 - 2.0 * y1 + y2;
    if curvature <= 0.0 {
        return (t, d);
    }
    let offset = (0.5 * h * (y0 - y2) / curvature).clamp(-h, h);
    let x = offset / h;
    let y = y1 + 0.5 * x * (y2 - y0) + 0.5 * x * x * curvature;
    let refined = y.max(0.0).sqrt();
    if refined <= d {
        (t + offset, refined)
    } else {
        (t, d)
    }
}

/// Per-pair minimum of `|λ_i(t) - λ_j(t)|` over the grid, refined.
pub fn near_approach(traces: &[EigencurveTrace]) -> Result<NearApproachTable> {
    near_approach_with(traces, Execution::default())
}

pub fn near_approach_with(
    traces: &[EigencurveTrace],
    exec: Execution,
) -> Result<NearApproachTable> {
    check_grid(traces)?;
    let entries = par::map_slice(exec, &pairs(traces.len()), |&(i, j)| {
        let (a, b) = (&traces[i], &traces[j]);
        let dist: Vec<f64> = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).norm())
            .collect();
        let k = (0..dist.len())
            .min_by(|&p, &q| dist[p].total_cmp(&dist[q]))
            .unwrap_or(0);
        let (t_min, d_min) = refine_minimum(&a.times, &dist, k);
        NearApproach {
            i: i + 1,
            j: j + 1,
            d_min,
            t_min,
            bucket: bucket_of(d_min),
        }
    });
    Ok(NearApproachTable { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TouchCandidate {
    pub a: usize,
    pub b: usize,
    pub t_min: f64,
    pub d_min: f64,
    /// Slope-exchange score in `[0, 1]`.
    pub score: f64,
    /// Set once checked against an exact block oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confirmed: Option<bool>,
}

/// Candidates below this score are not reported.
pub const MIN_SCORE: f64 = 0.65;

/// Default slope window, in samples.
pub const DEFAULT_ANGLE_WINDOW: usize = 50;

fn slope(v: &[Complex64], from: usize, to: usize, times: &[f64]) -> Complex64 {
    (v[to] - v[from]) / (times[to] - times[from])
}

/// Slope-exchange score of a local minimum at `k`: how well each curve's
/// incoming slope continues as the other's outgoing slope, relative to how
/// different the incoming slopes are.
fn exchange_score(a: &[Complex64], b: &[Complex64], times: &[f64], k: usize, w: usize) -> f64 {
    let s_in_a = slope(a, k - 2 * w, k - w, times);
    let s_in_b = slope(b, k - 2 * w, k - w, times);
    let s_out_a = slope(a, k + w, k + 2 * w, times);
    let s_out_b = slope(b, k + w, k + 2 * w, times);
    let contrast = (s_in_a - s_in_b).norm();
    if contrast <= f64::EPSILON {
        return 0.0;
    }
    let mismatch = ((s_in_a - s_out_b).norm() + (s_in_b - s_out_a).norm()) / 2.0;
    (1.0 - mismatch / contrast).clamp(0.0, 1.0)
}

/// Pairs that come within `gap_threshold` without crossing and veer off with
/// exchanged slopes. Advisory only, ranked by score.
pub fn suggest_touch(
    traces: &[EigencurveTrace],
    gap_threshold: f64,
    angle_window: usize,
) -> Result<Vec<TouchCandidate>> {
    suggest_touch_with(traces, gap_threshold, angle_window, Execution::default())
}

pub fn suggest_touch_with(
    traces: &[EigencurveTrace],
    gap_threshold: f64,
    angle_window: usize,
    exec: Execution,
) -> Result<Vec<TouchCandidate>> {
    let len = check_grid(traces)?;
    let w = angle_window.max(1);
    let real = traces
        .iter()
        .all(|t| t.values.iter().all(|z| z.im.abs() <= REAL_TOL));
    let crossed = if real {
        detect_crossings_with(traces, CROSS_TOL, exec)?.pairs()
    } else {
        BTreeSet::new()
    };
    let found = par::map_slice(exec, &pairs(traces.len()), |&(i, j)| {
        if crossed.contains(&(i + 1, j + 1)) || len < 4 * w + 1 {
            return None;
        }
        let (a, b) = (&traces[i], &traces[j]);
        let dist: Vec<f64> = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).norm())
            .collect();
        let mut best: Option<TouchCandidate> = None;
        for k in 2 * w..len - 2 * w {
            let d = dist[k];
            if d > gap_threshold || d > dist[k - 1] || d >= dist[k + 1] {
                continue;
            }
            let score = exchange_score(&a.values, &b.values, &a.times, k, w);
            if score < MIN_SCORE {
                continue;
            }
            let (t_min, d_min) = refine_minimum(&a.times, &dist, k);
            let cand = TouchCandidate {
                a: i + 1,
                b: j + 1,
                t_min,
                d_min,
                score,
                confirmed: None,
            };
            if best.as_ref().is_none_or(|c| score > c.score) {
                best = Some(cand);
            }
        }
        best
    });
    let mut out: Vec<TouchCandidate> = found.into_iter().flatten().collect();
    out.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then((x.a, x.b).cmp(&(y.a, y.b)))
    });
    Ok(out)
}

/// Marks each candidate confirmed when both curves belong to the same exact
/// block at the candidate time.
pub fn confirm_with_oracle(
    candidates: &mut [TouchCandidate],
    traces: &[EigencurveTrace],
    oracle: &BlockOracle,
) -> Result<()> {
    for c in candidates.iter_mut() {
        let (a, b) = (&traces[c.a - 1], &traces[c.b - 1]);
        let k = nearest_index(&a.times, c.t_min);
        let t = a.times[k];
        let ba = oracle.block_of(t, a.values[k])?;
        let bb = oracle.block_of(t, b.values[k])?;
        c.confirmed = Some(ba == bb);
    }
    Ok(())
}

fn nearest_index(times: &[f64], t: f64) -> usize {
    (0..times.len())
        .min_by(|&p, &q| (times[p] - t).abs().total_cmp(&(times[q] - t).abs()))
        .unwrap_or(0)
}

/// Pair minimum refined on the flow itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMinimum {
    pub t: f64,
    pub value_i: Complex64,
    pub value_j: Complex64,
    pub distance: f64,
}

/// Golden-section search for the minimum distance between the eigenvalues of
/// `flow` that continue curves `i` and `j` (1-based) around their sampled
/// near-approach, within one grid step on either side.
pub fn refine_pair_minimum(
    flow: &MatrixFlow,
    traces: &[EigencurveTrace],
    i: usize,
    j: usize,
) -> Result<PairMinimum> {
    let n = traces.len();
    for idx in [i, j] {
        if idx == 0 || idx > n {
            return Err(Error::CurveIndex { index: idx, n });
        }
    }
    let (a, b) = (&traces[i - 1], &traces[j - 1]);
    let dist: Vec<f64> = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).norm())
        .collect();
    let k = (0..dist.len())
        .min_by(|&p, &q| dist[p].total_cmp(&dist[q]))
        .unwrap_or(0);
    let lo_k = k.saturating_sub(1);
    let hi_k = (k + 1).min(dist.len() - 1);
    let interp = |v: &[Complex64], t: f64| {
        let s = if a.times[hi_k] > a.times[lo_k] {
            (t - a.times[lo_k]) / (a.times[hi_k] - a.times[lo_k])
        } else {
            0.0
        };
        v[lo_k] + (v[hi_k] - v[lo_k]) * s
    };
    let eval = |t: f64| -> Result<(f64, Complex64, Complex64)> {
        let spectrum = linalg::eigenvalues(&flow.evaluate(t)?)?;
        let guess = [interp(&a.values, t), interp(&b.values, t)];
        let pick = |g: Complex64, skip: Option<usize>| {
            (0..spectrum.len())
                .filter(|&c| Some(c) != skip)
                .min_by(|&p, &q| {
                    (spectrum[p] - g)
                        .norm()
                        .total_cmp(&(spectrum[q] - g).norm())
                })
                .expect("spectrum has two values")
        };
        let pa = pick(guess[0], None);
        let pb = pick(guess[1], Some(pa));
        Ok((
            (spectrum[pa] - spectrum[pb]).norm(),
            spectrum[pa],
            spectrum[pb],
        ))
    };
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (a.times[lo_k], a.times[hi_k]);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = eval(x1)?.0;
    let mut f2 = eval(x2)?.0;
    for _ in 0..80 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = eval(x1)?.0;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = eval(x2)?.0;
        }
    }
    let t = 0.5 * (lo + hi);
    let (distance, value_i, value_j) = eval(t)?;
    Ok(PairMinimum {
        t,
        value_i,
        value_j,
        distance,
    })
}
