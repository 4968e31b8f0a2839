//! Eigencurve tracking.
//!
//! [`trace`] integrates the zeroing-neural-network (ZNN) flow for every
//! eigenpair with a look-ahead formula; [`oracle_trace`] re-diagonalizes at
//! every grid point and stitches curves by optimal matching. The second is
//! slower but independent, and serves as the reference in tests.

use std::collections::VecDeque;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::MatrixFlow;
use crate::formula::{self, FormulaCoefficients};
use crate::linalg::{self, EigenPair};
use crate::par::{self, Execution};
use crate::{CMatrix, CVector};

/// Grid points evaluated per batch; bounds memory on long runs.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZnnConfig {
    pub tau: f64,
    pub eta: f64,
    /// `(j, s)`: truncation order and number of past points.
    pub formula: (usize, usize),
    pub restart_threshold: f64,
    pub max_restarts_per_curve: usize,
    pub residual_tolerance: f64,
    /// Residual (relative to `max(1, ‖A‖₁)`) above which a propagated state
    /// gets one Newton correction on the bordered system; 0 disables it.
    pub polish_tolerance: f64,
    pub keep_vectors: bool,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ZnnConfig {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            eta: 50.0,
            formula: formula::DEFAULT,
            restart_threshold: 1e12,
            max_restarts_per_curve: 200,
            residual_tolerance: 1e-6,
            polish_tolerance: 1e-11,
            keep_vectors: false,
            execution: Execution::default(),
        }
    }
}

impl ZnnConfig {
    /// Checks parameter ranges and returns the formula coefficients.
    pub fn validate(&self) -> Result<FormulaCoefficients> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if !(self.residual_tolerance > 0.0) {
            return Err(Error::InvalidParameter(
                "residual_tolerance must be positive".into(),
            ));
        }
        let (j, s) = self.formula;
        let coeffs = formula::derive_formula(j, s)?;
        if !coeffs.stability_ok {
            return Err(Error::InvalidParameter(format!(
                "formula ({j},{s}) is not zero-stable (extraneous root modulus {:.3})",
                coeffs.max_extraneous_root
            )));
        }
        let h = self.tau * self.eta;
        if h > coeffs.tau_eta_limit {
            return Err(Error::InvalidParameter(format!(
                "tau*eta = {h} exceeds the stability limit {:.4} of formula ({j},{s})",
                coeffs.tau_eta_limit
            )));
        }
        Ok(coeffs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Znn,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigencurveTrace {
    /// 1-based, in descending order of the eigenvalues at the first sample.
    pub curve_index: usize,
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<Vec<Vec<Complex64>>>,
    pub provenance: Provenance,
    /// Times at which the curve was re-seeded from a static eigensolve.
    #[serde(default)]
    pub restarts: Vec<f64>,
    /// Set when the restart budget ran out; the rest of the curve comes from
    /// static eigensolves.
    #[serde(default)]
    pub degenerate: bool,
}

/// Sample grid `t0 + k·tau` for `k = 0..=N`, `N = ⌊(tf - t0)/tau⌉`.
pub fn grid(t0: f64, tf: f64, tau: f64) -> Result<Vec<f64>> {
    for t in [t0, tf] {
        if !t.is_finite() {
            return Err(Error::NonFiniteTime(t));
        }
    }
    if !(t0 < tf) {
        return Err(Error::InvalidParameter(format!(
            "need t0 < tf, got [{t0}, {tf}]"
        )));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let steps = ((tf - t0) / tau + 1e-9).floor() as usize;
    Ok((0..=steps).map(|k| t0 + k as f64 * tau).collect())
}

/// ZNN state: eigenvector and eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct ZnnState {
    pub vector: CVector,
    pub value: Complex64,
}

impl ZnnState {
    /// `‖E‖₂` with `E = [A v - λ v; (v*v - 1)/2]`.
    pub fn error_norm(&self, a: &CMatrix) -> f64 {
        let r = a * &self.vector - &self.vector * self.value;
        let c = (self.vector.norm_squared() - 1.0) / 2.0;
        (r.norm_squared() + c * c).sqrt()
    }

    /// Eigen-residual of the normalized state, `‖A v̂ - λ v̂‖₂`.
    pub fn residual(&self, a: &CMatrix) -> f64 {
        let v = self.vector.normalize();
        (a * &v - &v * self.value).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Next(ZnnState),
    /// The bordered system was singular or its condition estimate exceeded
    /// the threshold.
    RestartNeeded {
        condition: f64,
    },
}

/// Solves `P ż = b` for the ZNN time derivative at one sample.
///
/// Returns `Err(condition)` when `P` is singular or too ill-conditioned.
pub fn znn_derivative(
    a: &CMatrix,
    adot: &CMatrix,
    z: &ZnnState,
    eta: f64,
    threshold: f64,
) -> std::result::Result<(CVector, Complex64), f64> {
    let n = a.nrows();
    let v = &z.vector;
    let mut p = CMatrix::zeros(n + 1, n + 1);
    p.view_mut((0, 0), (n, n)).copy_from(a);
    for i in 0..n {
        p[(i, i)] -= z.value;
        p[(i, n)] = -v[i];
        p[(n, i)] = v[i].conj();
    }
    let inv = match p.clone().try_inverse() {
        Some(inv) => inv,
        None => return Err(f64::INFINITY),
    };
    let condition = linalg::norm_1(&p) * linalg::norm_1(&inv);
    if !condition.is_finite() || condition > threshold {
        return Err(condition);
    }
    let eta = Complex64::new(eta, 0.0);
    let residual = a * v - v * z.value;
    let top = -(adot * v) - residual * eta;
    let mut b = CVector::zeros(n + 1);
    b.rows_mut(0, n).copy_from(&top);
    b[n] = -eta * Complex64::new((v.norm_squared() - 1.0) / 2.0, 0.0);
    let zdot = inv * b;
    Ok((zdot.rows(0, n).into_owned(), zdot[n]))
}

/// One Newton step towards `E(z) = 0` at fixed `A`.
pub fn newton_correct(a: &CMatrix, z: &ZnnState) -> Option<ZnnState> {
    let n = a.nrows();
    let v = &z.vector;
    let mut p = CMatrix::zeros(n + 1, n + 1);
    p.view_mut((0, 0), (n, n)).copy_from(a);
    for i in 0..n {
        p[(i, i)] -= z.value;
        p[(i, n)] = -v[i];
        p[(n, i)] = v[i].conj();
    }
    let mut rhs = CVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(&(v * z.value - a * v));
    rhs[n] = Complex64::new((1.0 - v.norm_squared()) / 2.0, 0.0);
    let delta = p.lu().solve(&rhs)?;
    let out = ZnnState {
        vector: v + delta.rows(0, n),
        value: z.value + delta[n],
    };
    (out.value.re.is_finite() && out.value.im.is_finite()).then_some(out)
}

/// Applies the formula to a newest-first history and the current derivative.
fn advance(
    history: &VecDeque<ZnnState>,
    coeffs: &FormulaCoefficients,
    tau: f64,
    dv: &CVector,
    dl: Complex64,
) -> ZnnState {
    let n = dv.len();
    let scale = Complex64::new(tau * coeffs.beta, 0.0);
    let mut vector = dv * scale;
    let mut value = dl * scale;
    for (a, z) in coeffs.alphas.iter().zip(history) {
        let a = Complex64::new(*a, 0.0);
        vector += &z.vector * a;
        value += z.value * a;
    }
    debug_assert_eq!(vector.len(), n);
    ZnnState { vector, value }
}

/// One ZNN step at `t` from a newest-first `history` (current state first).
///
/// With fewer than `s` past states the step uses the `(min(j, k), k)`
/// formula for the available depth `k`.
pub fn znn_step(
    flow: &MatrixFlow,
    t: f64,
    history: &[ZnnState],
    cfg: &ZnnConfig,
) -> Result<StepOutcome> {
    if history.is_empty() {
        return Err(Error::InvalidParameter(
            "znn_step needs at least the current state".into(),
        ));
    }
    let (j, s) = cfg.formula;
    let depth = history.len().min(s);
    let coeffs = formula::derive_formula(j.min(depth), depth)?;
    let a = flow.evaluate(t)?;
    let adot = flow.derivative(t)?;
    let z = &history[0];
    if z.vector.len() != flow.n() {
        return Err(Error::Dimension {
            expected: flow.n(),
            got: z.vector.len(),
        });
    }
    Ok(
        match znn_derivative(&a, &adot, z, cfg.eta, cfg.restart_threshold) {
            Ok((dv, dl)) => {
                let hist: VecDeque<ZnnState> = history[..depth].iter().cloned().collect();
                let mut next = advance(&hist, &coeffs, cfg.tau, &dv, dl);
                if flow.is_hermitean() {
                    next.value.im = 0.0;
                }
                StepOutcome::Next(next)
            }
            Err(condition) => StepOutcome::RestartNeeded { condition },
        },
    )
}

/// Matrices at one grid point.
struct Sample {
    a: CMatrix,
    adot: CMatrix,
}

struct Curve {
    index: usize,
    values: Vec<Complex64>,
    vectors: Vec<CVector>,
    history: VecDeque<ZnnState>,
    static_left: usize,
    restarts: Vec<f64>,
    degenerate: bool,
    error: Option<Error>,
}

impl Curve {
    fn new(index: usize) -> Self {
        Self {
            index,
            values: Vec::new(),
            vectors: Vec::new(),
            history: VecDeque::new(),
            static_left: 0,
            restarts: Vec::new(),
            degenerate: false,
            error: None,
        }
    }

    fn prediction(&self) -> Complex64 {
        extrapolate(&self.values)
    }

    /// Appends a sample; keeps at most `s` history states.
    fn push(&mut self, state: ZnnState, s: usize, keep_vectors: bool) {
        self.values.push(state.value);
        if keep_vectors || self.vectors.is_empty() {
            self.vectors.push(state.vector.normalize());
        } else {
            *self.vectors.last_mut().expect("non-empty") = state.vector.normalize();
        }
        self.history.push_front(state);
        self.history.truncate(s);
    }

    fn last_vector(&self) -> Option<&CVector> {
        self.vectors.last()
    }

    /// Static eigenpair nearest to the extrapolated value, phase aligned to
    /// the previous vector.
    fn static_state(&self, a: &CMatrix, hermitean: bool) -> Result<ZnnState> {
        let pairs = linalg::static_eigen(a)?;
        let target = self.prediction();
        let last = self.last_vector();
        let pick = pairs
            .iter()
            .min_by(|p, q| {
                let dp = (p.value - target).norm();
                let dq = (q.value - target).norm();
                let scale = 1e-9 * (1.0 + target.norm());
                if (dp - dq).abs() <= scale {
                    // near-tie: prefer eigenvector continuity
                    let op = last.map_or(0.0, |v| v.dotc(&p.vector).norm());
                    let oq = last.map_or(0.0, |v| v.dotc(&q.vector).norm());
                    oq.total_cmp(&op)
                } else {
                    dp.total_cmp(&dq)
                }
            })
            .expect("non-empty spectrum");
        Ok(seed_state(pick, last, hermitean))
    }

    fn step(&mut self, k: usize, now: &Sample, next: &Sample, t_next: f64, ctx: &Ctx) {
        if self.error.is_some() {
            return;
        }
        if let Err(e) = self.try_step(k, now, next, t_next, ctx) {
            self.error = Some(e);
        }
    }

    fn try_step(
        &mut self,
        _k: usize,
        now: &Sample,
        next: &Sample,
        t_next: f64,
        ctx: &Ctx,
    ) -> Result<()> {
        let s = ctx.coeffs.s;
        if self.degenerate || self.static_left > 0 {
            let state = self.static_state(&next.a, ctx.hermitean)?;
            self.push(state, s, ctx.cfg.keep_vectors);
            self.static_left = self.static_left.saturating_sub(1);
            return Ok(());
        }
        let current = self.history.front().expect("seeded curve");
        let proposal = match znn_derivative(
            &now.a,
            &now.adot,
            current,
            ctx.cfg.eta,
            ctx.cfg.restart_threshold,
        ) {
            Ok((dv, dl)) => {
                let mut z = advance(&self.history, ctx.coeffs, ctx.cfg.tau, &dv, dl);
                if ctx.hermitean {
                    z.value.im = 0.0;
                }
                let polish = ctx.cfg.polish_tolerance * linalg::norm_1(&next.a).max(1.0);
                if polish > 0.0 && z.residual(&next.a) > polish {
                    if let Some(mut fixed) = newton_correct(&next.a, &z) {
                        if ctx.hermitean {
                            fixed.value.im = 0.0;
                        }
                        z = fixed;
                    }
                }
                let ok = z.value.re.is_finite()
                    && z.value.im.is_finite()
                    && z.residual(&next.a) <= ctx.cfg.residual_tolerance;
                ok.then_some(z)
            }
            Err(_) => None,
        };
        match proposal {
            Some(z) => self.push(z, s, ctx.cfg.keep_vectors),
            None => {
                self.restarts.push(t_next);
                if self.restarts.len() > ctx.cfg.max_restarts_per_curve {
                    self.degenerate = true;
                }
                let state = self.static_state(&next.a, ctx.hermitean)?;
                self.push(state, s, ctx.cfg.keep_vectors);
                // refill the whole history before trusting the formula again
                self.static_left = s.saturating_sub(1);
            }
        }
        Ok(())
    }

    /// Drops samples from `k` on and seeds the curve with static states.
    fn reseed(
        &mut self,
        k: usize,
        t: f64,
        seeds: Vec<ZnnState>,
        s: usize,
        keep_vectors: bool,
        max_restarts: usize,
    ) {
        self.values.truncate(k);
        if keep_vectors {
            self.vectors.truncate(k);
        }
        self.restarts.retain(|&r| r < t);
        self.restarts.push(t);
        self.degenerate = self.restarts.len() > max_restarts;
        self.history.clear();
        self.static_left = 0;
        for z in seeds {
            self.push(z, s, keep_vectors);
        }
    }
}

/// Next value of an equally spaced sequence by polynomial extrapolation
/// through its last (up to) three samples.
pub(crate) fn extrapolate(values: &[Complex64]) -> Complex64 {
    match values {
        [.., a, b, c] => 3.0 * c - 3.0 * b + a,
        [.., b, c] => 2.0 * c - b,
        [.., c] => *c,
        [] => Complex64::new(0.0, 0.0),
    }
}

fn seed_state(pair: &EigenPair, previous: Option<&CVector>, hermitean: bool) -> ZnnState {
    let mut vector = pair.vector.clone();
    if let Some(prev) = previous {
        linalg::phase_align(&mut vector, prev);
    }
    let mut value = pair.value;
    if hermitean {
        value.im = 0.0;
    }
    ZnnState { vector, value }
}

struct Ctx<'a> {
    cfg: &'a ZnnConfig,
    coeffs: &'a FormulaCoefficients,
    hermitean: bool,
}

fn samples(flow: &MatrixFlow, times: &[f64], exec: Execution) -> Result<Vec<Sample>> {
    par::map_range(exec, times.len(), |i| {
        Ok(Sample {
            a: flow.evaluate(times[i])?,
            adot: flow.derivative(times[i])?,
        })
    })
    .into_iter()
    .collect()
}

/// Advances every curve from grid index `from` to `to` (inclusive).
fn drive(
    flow: &MatrixFlow,
    times: &[f64],
    curves: &mut [Curve],
    from: usize,
    to: usize,
    ctx: &Ctx,
) -> Result<()> {
    let mut start = from;
    while start < to {
        let end = (start + CHUNK).min(to);
        let batch = samples(flow, &times[start..=end], ctx.cfg.execution)?;
        par::for_each_mut(ctx.cfg.execution, curves, |c| {
            for k in start..end {
                c.step(
                    k,
                    &batch[k - start],
                    &batch[k + 1 - start],
                    times[k + 1],
                    ctx,
                );
            }
        });
        if let Some(e) = curves.iter_mut().find_map(|c| c.error.take()) {
            return Err(e);
        }
        start = end;
    }
    Ok(())
}

/// Joint static seeding of the curves in `group` at grid indices
/// `from..from + count`, matching against extrapolated values (group) and
/// recorded values (everyone else).
fn joint_seed(
    flow: &MatrixFlow,
    times: &[f64],
    curves: &[Curve],
    group: &[usize],
    from: usize,
    count: usize,
    hermitean: bool,
) -> Result<Vec<Vec<ZnnState>>> {
    let n = curves.len();
    let mut seeds: Vec<Vec<ZnnState>> = vec![Vec::new(); group.len()];
    let mut recent: Vec<Vec<Complex64>> = group
        .iter()
        .map(|&g| curves[g].values[..from.min(curves[g].values.len())].to_vec())
        .collect();
    let mut last_vec: Vec<Option<CVector>> = group
        .iter()
        .map(|&g| {
            let c = &curves[g];
            (from > 0 && from <= c.values.len())
                .then(|| {
                    // vectors are only retained in full when requested
                    c.vectors.get(from - 1).or(c.vectors.last()).cloned()
                })
                .flatten()
        })
        .collect();
    for k in from..from + count {
        let pairs = linalg::static_eigen(&flow.evaluate(times[k])?)?;
        let assign: Vec<usize> = if k == 0 {
            (0..n).collect()
        } else {
            let predicted: Vec<Complex64> = (0..n)
                .map(|c| match group.iter().position(|&g| g == c) {
                    Some(gi) => extrapolate(&recent[gi]),
                    None => curves[c].values[k],
                })
                .collect();
            let candidates: Vec<Complex64> = pairs.iter().map(|p| p.value).collect();
            linalg::match_values(&predicted, &candidates)
        };
        for (gi, &g) in group.iter().enumerate() {
            let z = seed_state(&pairs[assign[g]], last_vec[gi].as_ref(), hermitean);
            recent[gi].push(z.value);
            last_vec[gi] = Some(z.vector.clone());
            seeds[gi].push(z);
        }
    }
    Ok(seeds)
}

/// Finds curve pairs that coincide on a run of samples although the static
/// spectrum there has no double eigenvalue. Returns `(first index, group)`.
fn find_collapse(
    flow: &MatrixFlow,
    curves: &[Curve],
    times: &[f64],
    run: usize,
) -> Result<Option<(usize, Vec<usize>)>> {
    let n = curves.len();
    let len = times.len();
    let close = |a: Complex64, b: Complex64| (a - b).norm() <= 1e-9 * (1.0 + a.norm());
    for i in 0..n {
        for j in i + 1..n {
            let mut k = 0;
            while k < len {
                if !close(curves[i].values[k], curves[j].values[k]) {
                    k += 1;
                    continue;
                }
                let start = k;
                while k < len && close(curves[i].values[k], curves[j].values[k]) {
                    k += 1;
                }
                if k - start < run {
                    continue;
                }
                let mid = (start + k) / 2;
                let spectrum = linalg::eigenvalues(&flow.evaluate(times[mid])?)?;
                let lam = curves[i].values[mid];
                let tol = 1e-7 * (1.0 + lam.norm());
                let multiplicity = spectrum.iter().filter(|z| (*z - lam).norm() <= tol).count();
                let on_it = (0..n)
                    .filter(|&c| (curves[c].values[mid] - lam).norm() <= tol)
                    .count();
                if on_it > multiplicity {
                    let group: Vec<usize> = (0..n)
                        .filter(|&c| {
                            (curves[c].values[start] - curves[i].values[start]).norm() <= tol
                        })
                        .collect();
                    return Ok(Some((start, group)));
                }
            }
        }
    }
    Ok(None)
}

/// ZNN traces of all `n` eigencurves on `[t0, tf]`.
pub fn trace(flow: &MatrixFlow, t0: f64, tf: f64, cfg: &ZnnConfig) -> Result<Vec<EigencurveTrace>> {
    let coeffs = cfg.validate()?;
    let times = grid(t0, tf, cfg.tau)?;
    let s = coeffs.s;
    if times.len() <= s {
        return Err(Error::InvalidParameter(format!(
            "interval holds {} steps, formula needs at least {s}",
            times.len() - 1
        )));
    }
    let n = flow.n();
    let hermitean = flow.is_hermitean();
    let ctx = Ctx {
        cfg,
        coeffs: &coeffs,
        hermitean,
    };
    let mut curves: Vec<Curve> = (0..n).map(|i| Curve::new(i + 1)).collect();
    let all: Vec<usize> = (0..n).collect();
    let seeds = joint_seed(flow, &times, &curves, &all, 0, s, hermitean)?;
    for (c, seed) in curves.iter_mut().zip(seeds) {
        for z in seed {
            c.push(z, s, cfg.keep_vectors);
        }
    }
    let last = times.len() - 1;
    drive(flow, &times, &mut curves, s - 1, last, &ctx)?;

    let run = 5.max(s + 1);
    for _ in 0..2 * n {
        let Some((k0, group)) = find_collapse(flow, &curves, &times, run)? else {
            break;
        };
        let count = s.min(times.len() - k0);
        let seeds = joint_seed(flow, &times, &curves, &group, k0, count, hermitean)?;
        let mut lost: Vec<Curve> = Vec::with_capacity(group.len());
        for (&g, seed) in group.iter().zip(seeds) {
            let mut c = std::mem::replace(&mut curves[g], Curve::new(0));
            c.reseed(
                k0,
                times[k0],
                seed,
                s,
                cfg.keep_vectors,
                cfg.max_restarts_per_curve,
            );
            lost.push(c);
        }
        let from = k0 + count - 1;
        drive(flow, &times, &mut lost, from, last, &ctx)?;
        for (&g, c) in group.iter().zip(lost) {
            curves[g] = c;
        }
    }

    Ok(curves
        .into_iter()
        .map(|c| EigencurveTrace {
            curve_index: c.index,
            times: times.clone(),
            values: c.values,
            vectors: cfg.keep_vectors.then(|| {
                c.vectors
                    .iter()
                    .map(|v| v.iter().copied().collect())
                    .collect()
            }),
            provenance: Provenance::Znn,
            restarts: c.restarts,
            degenerate: c.degenerate,
        })
        .collect())
}

/// Reference traces from a static eigensolve at every grid point.
pub fn oracle_trace(flow: &MatrixFlow, t0: f64, tf: f64, tau: f64) -> Result<Vec<EigencurveTrace>> {
    oracle_trace_with(flow, t0, tf, tau, Execution::default())
}

/// [`oracle_trace`] with an explicit execution mode. The eigensolves run in
/// parallel; the matching is sequential in `t`.
pub fn oracle_trace_with(
    flow: &MatrixFlow,
    t0: f64,
    tf: f64,
    tau: f64,
    exec: Execution,
) -> Result<Vec<EigencurveTrace>> {
    let times = grid(t0, tf, tau)?;
    let n = flow.n();
    let hermitean = flow.is_hermitean();
    let mut values: Vec<Vec<Complex64>> = vec![Vec::with_capacity(times.len()); n];
    for chunk in times.chunks(CHUNK) {
        let spectra: Vec<Result<Vec<Complex64>>> = par::map_slice(exec, chunk, |&t| {
            flow.evaluate(t)
                .and_then(|m| linalg::eigenvalues_averaged(&m))
        });
        for spectrum in spectra {
            let mut spectrum = spectrum?;
            if hermitean {
                spectrum.iter_mut().for_each(|z| z.im = 0.0);
            }
            if values[0].is_empty() {
                for (curve, z) in values.iter_mut().zip(&spectrum) {
                    curve.push(*z);
                }
                continue;
            }
            let predicted: Vec<Complex64> = values.iter().map(|c| extrapolate(c)).collect();
            let assign = linalg::match_values(&predicted, &spectrum);
            for (curve, &col) in values.iter_mut().zip(&assign) {
                curve.push(spectrum[col]);
            }
        }
    }
    Ok(values
        .into_iter()
        .enumerate()
        .map(|(i, v)| EigencurveTrace {
            curve_index: i + 1,
            times: times.clone(),
            values: v,
            vectors: None,
            provenance: Provenance::Oracle,
            restarts: Vec::new(),
            degenerate: false,
        })
        .collect())
}

/// Largest pointwise distance between two trace sets with equal grids,
/// pairing curves by index.
pub fn max_deviation(a: &[EigencurveTrace], b: &[EigencurveTrace]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch);
    }
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.times.len() != y.times.len() {
            return Err(Error::GridMismatch);
        }
        for (p, q) in x.values.iter().zip(&y.values) {
            worst = worst.max((p - q).norm());
        }
    }
    Ok(worst)
}

/// Eigenvector samples of a trace as column vectors.
pub fn vectors_of(trace: &EigencurveTrace) -> Option<Vec<CVector>> {
    trace
        .vectors
        .as_ref()
        .map(|vs| vs.iter().map(|v| DVector::from_column_slice(v)).collect())
}
