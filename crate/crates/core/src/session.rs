//! Analysis sessions: the full pipeline state, its JSON file format, CSV
//! export and interval extension.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crossing::{self, CrossingSet, NearApproachTable, R1Matrix, TouchCandidate, CROSS_TOL};
use crate::decomposition::{self, BlockStructure, LabelVector, TouchList};
use crate::error::{Error, Result};
use crate::gallery::FlowRef;
use crate::linalg;
use crate::tracker::{self, EigencurveTrace, ZnnConfig};

pub const SESSION_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub t0: f64,
    pub tf: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceMethod {
    #[default]
    Znn,
    Oracle,
}

/// A superseded interval with the labels computed on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub interval: Interval,
    pub ve: Option<LabelVector>,
    pub touch: TouchList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub version: String,
    pub flow: FlowRef,
    pub interval: Interval,
    pub cfg: ZnnConfig,
    #[serde(default)]
    pub method: TraceMethod,
    #[serde(default)]
    pub traces: Vec<EigencurveTrace>,
    #[serde(default)]
    pub crossings: Option<CrossingSet>,
    #[serde(default)]
    pub r1: Option<R1Matrix>,
    #[serde(default)]
    pub rc: Option<NearApproachTable>,
    #[serde(default)]
    pub touch: TouchList,
    #[serde(default)]
    pub ve: Option<LabelVector>,
    #[serde(default)]
    pub blocks: Option<BlockStructure>,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
    /// Human-readable remarks from the last operations (dropped Touch rows,
    /// caveats).
    #[serde(default)]
    pub notices: Vec<String>,
}

/// Coarse progress of a long operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub phase: String,
    pub fraction: f64,
}

impl Progress {
    pub fn new(phase: &str, fraction: f64) -> Self {
        Progress {
            phase: phase.into(),
            fraction,
        }
    }
}

/// Printed when labels rest on no crossing data at all.
pub const NO_CROSSING_CAVEAT: &str =
    "no eigencurve crossings observed: the singleton groups are inconclusive, not evidence of block diagonalizability";

impl Session {
    pub fn new(flow: FlowRef, t0: f64, tf: f64, cfg: ZnnConfig, method: TraceMethod) -> Self {
        Session {
            version: SESSION_VERSION.into(),
            flow,
            interval: Interval { t0, tf },
            cfg,
            method,
            traces: Vec::new(),
            crossings: None,
            r1: None,
            rc: None,
            touch: TouchList::default(),
            ve: None,
            blocks: None,
            history: Vec::new(),
            notices: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.traces.len()
    }

    /// Whether every trace sample is real.
    pub fn is_real(&self) -> bool {
        self.traces
            .iter()
            .all(|t| t.values.iter().all(|z| z.im.abs() <= crossing::REAL_TOL))
    }

    fn clear_derived(&mut self) {
        self.crossings = None;
        self.r1 = None;
        self.rc = None;
        self.ve = None;
        self.blocks = None;
    }

    /// Traces the flow on the session interval; drops derived data.
    pub fn trace(&mut self, progress: &dyn Fn(Progress)) -> Result<()> {
        progress(Progress::new("tracing", 0.0));
        let flow = self.flow.build()?;
        let Interval { t0, tf } = self.interval;
        self.traces = match self.method {
            TraceMethod::Znn => tracker::trace(&flow, t0, tf, &self.cfg)?,
            TraceMethod::Oracle => {
                tracker::oracle_trace_with(&flow, t0, tf, self.cfg.tau, self.cfg.execution)?
            }
        };
        self.clear_derived();
        self.notices.clear();
        for tr in &self.traces {
            if tr.degenerate {
                self.notices.push(format!(
                    "curve {} exhausted its restart budget ({} restarts) and continues from static eigensolves",
                    tr.curve_index,
                    tr.restarts.len()
                ));
            }
        }
        progress(Progress::new("tracing", 1.0));
        Ok(())
    }

    fn require_traces(&self) -> Result<()> {
        if self.traces.is_empty() {
            return Err(Error::Session(
                "session has no traces; run trace first".into(),
            ));
        }
        Ok(())
    }

    /// Crossings and `R1` (real traces only) and the near-approach table.
    /// Labels survive when `R1` is unchanged.
    pub fn analyze(&mut self) -> Result<()> {
        self.require_traces()?;
        let n = self.n();
        let (crossings, r1) = if self.is_real() {
            let cs = crossing::detect_crossings_with(&self.traces, CROSS_TOL, self.cfg.execution)?;
            let r1 = crossing::build_r1(&cs, n)?;
            (Some(cs), Some(r1))
        } else {
            (None, None)
        };
        let rc = crossing::near_approach_with(&self.traces, self.cfg.execution)?;
        if r1 != self.r1 {
            self.ve = None;
            self.blocks = None;
        }
        self.crossings = crossings;
        self.r1 = r1;
        self.rc = Some(rc);
        Ok(())
    }

    fn labels_for(&self, touch: &TouchList) -> Result<(LabelVector, BlockStructure)> {
        let r1 = self.r1.as_ref().ok_or_else(|| {
            Error::Session(if self.traces.is_empty() || self.is_real() {
                "session has no crossing data; run analyze first".into()
            } else {
                "labels need real (hermitean) traces; for complex flows use the near-approach table"
                    .into()
            })
        })?;
        let ve = decomposition::infer_labels(r1, self.n())?;
        let ve = if touch.is_empty() {
            ve
        } else {
            decomposition::almost_touch(&ve, touch, r1)?
        };
        let blocks = decomposition::block_structure(&ve)?;
        Ok((ve, blocks))
    }

    /// Infers labels from `R1` and applies the session's Touch rows.
    pub fn infer(&mut self) -> Result<()> {
        let (ve, blocks) = self.labels_for(&self.touch.clone())?;
        self.ve = Some(ve);
        self.blocks = Some(blocks);
        self.notices.retain(|s| s != NO_CROSSING_CAVEAT);
        if self.crossings.as_ref().is_some_and(CrossingSet::is_empty) {
            self.notices.push(NO_CROSSING_CAVEAT.into());
        }
        Ok(())
    }

    /// Replaces the Touch list and re-infers. On error the session is left
    /// unchanged.
    pub fn apply_touch(&mut self, touch: TouchList) -> Result<()> {
        let (ve, blocks) = self.labels_for(&touch)?;
        self.touch = touch;
        self.ve = Some(ve);
        self.blocks = Some(blocks);
        Ok(())
    }

    /// Advisory almost-touch candidates, best first.
    pub fn suggestions(
        &self,
        gap_threshold: f64,
        angle_window: Option<usize>,
    ) -> Result<Vec<TouchCandidate>> {
        self.require_traces()?;
        let w = angle_window.unwrap_or_else(|| default_angle_window(self.cfg.tau));
        crossing::suggest_touch_with(&self.traces, gap_threshold, w, self.cfg.execution)
    }

    /// Re-runs the pipeline on a larger interval. Touch rows are carried over
    /// by matching curve values at the old left edge; rows that cannot be
    /// carried over unambiguously, or that now contradict the crossings, are
    /// dropped with a notice.
    pub fn extend_interval(&mut self, t0: f64, tf: f64, progress: &dyn Fn(Progress)) -> Result<()> {
        let old = self.interval;
        if !(t0.is_finite() && tf.is_finite()) {
            return Err(Error::InvalidParameter(
                "interval ends must be finite".into(),
            ));
        }
        if t0 > old.t0 || tf < old.tf {
            return Err(Error::InvalidParameter(format!(
                "[{t0}, {tf}] does not contain the current interval [{}, {}]",
                old.t0, old.tf
            )));
        }
        let had_labels = self.r1.is_some();
        let old_edge: Vec<_> = self.traces.iter().map(|t| t.values[0]).collect();
        let entry = HistoryEntry {
            interval: old,
            ve: self.ve.clone(),
            touch: self.touch.clone(),
        };
        let old_touch = std::mem::take(&mut self.touch);

        let mut next = self.clone();
        next.interval = Interval { t0, tf };
        next.trace(progress)?;
        progress(Progress::new("analyzing", 0.5));
        next.analyze()?;
        let mut notices = next.notices.clone();

        let mapping = if old_edge.is_empty() {
            None
        } else {
            Some(remap_at(&next.traces, old.t0, &old_edge)?)
        };
        let mut carried = Vec::new();
        for &(a, b) in old_touch.rows() {
            let mapped = mapping.as_ref().and_then(|m| Some((m[a - 1]?, m[b - 1]?)));
            match mapped {
                Some((x, y)) => carried.push((x.min(y), x.max(y))),
                None => notices.push(format!(
                    "Touch row ({a}, {b}) dropped: curve identity at t = {} is ambiguous",
                    old.t0
                )),
            }
        }
        if had_labels && next.r1.is_some() {
            progress(Progress::new("inferring", 0.9));
            let mut kept: Vec<(usize, usize)> = Vec::new();
            for row in carried {
                let mut trial = kept.clone();
                trial.push(row);
                let list = TouchList::new(trial.iter().copied());
                match list.and_then(|l| next.labels_for(&l).map(|_| ())) {
                    Ok(()) => kept.push(row),
                    Err(e) => notices.push(format!(
                        "Touch row ({}, {}) dropped after extension: {e}",
                        row.0, row.1
                    )),
                }
            }
            next.touch = TouchList::new(kept)?;
            next.infer()?;
            notices.extend(
                next.notices
                    .iter()
                    .filter(|s| !notices.contains(s))
                    .cloned()
                    .collect::<Vec<_>>(),
            );
        }
        next.history.push(entry);
        next.notices = notices;
        *self = next;
        progress(Progress::new("done", 1.0));
        Ok(())
    }

    /// Checks the save-time invariants.
    pub fn validate(&self) -> Result<()> {
        if self.version != SESSION_VERSION {
            return Err(Error::Session(format!(
                "version mismatch: file has \"{}\", expected \"{SESSION_VERSION}\"",
                self.version
            )));
        }
        if let (Some(cs), Some(r1)) = (&self.crossings, &self.r1) {
            if &crossing::build_r1(cs, self.n())? != r1 {
                return Err(Error::Session("r1 does not match the crossing set".into()));
            }
        }
        if let Some(ve) = &self.ve {
            if ve.len() != self.n() {
                return Err(Error::Session(
                    "label vector length differs from the curve count".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Session(format!("malformed session file: {e}")))?;
        match value.get("version").and_then(|v| v.as_str()) {
            Some(SESSION_VERSION) => {}
            Some(v) => {
                return Err(Error::Session(format!(
                    "version mismatch: file has \"{v}\", expected \"{SESSION_VERSION}\""
                )))
            }
            None => {
                return Err(Error::Session(
                    "malformed session file: missing version".into(),
                ))
            }
        }
        let s: Session = serde_json::from_value(value)
            .map_err(|e| Error::Session(format!("malformed session file: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    /// Writes the session atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name()
                .and_then(|s| s.to_str())
                .unwrap_or("session")
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Session(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// One CSV per curve (`curve_01.csv`, …) with header `t,re,im`.
    pub fn export_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.require_traces()?;
        fs::create_dir_all(dir)?;
        let width = self.n().to_string().len().max(2);
        let mut paths = Vec::new();
        for tr in &self.traces {
            let path = dir.join(format!("curve_{:0width$}.csv", tr.curve_index));
            fs::write(&path, trace_csv(tr))?;
            paths.push(path);
        }
        Ok(paths)
    }

    pub fn plot_data(&self) -> PlotData {
        PlotData {
            flow: self.flow.name.clone(),
            n: self.n(),
            real: self.is_real(),
            interval: self.interval,
            curves: self
                .traces
                .iter()
                .map(|tr| PlotCurve {
                    index: tr.curve_index,
                    t: tr.times.clone(),
                    re: tr.values.iter().map(|z| z.re).collect(),
                    im: tr.values.iter().map(|z| z.im).collect(),
                    degenerate: tr.degenerate,
                })
                .collect(),
            crossings: self
                .crossings
                .as_ref()
                .map(|c| c.crossings.clone())
                .unwrap_or_default(),
            near_approaches: self
                .rc
                .as_ref()
                .map(|rc| rc.within(1e-2).cloned().collect())
                .unwrap_or_default(),
            ve: self.ve.clone(),
            blocks: self.blocks.clone(),
        }
    }
}

/// CSV text of one trace.
pub fn trace_csv(tr: &EigencurveTrace) -> String {
    let mut out = String::from("t,re,im\n");
    for (t, z) in tr.times.iter().zip(&tr.values) {
        out.push_str(&format!("{t:?},{:?},{:?}\n", z.re, z.im));
    }
    out
}

/// Slope window spanning about 0.05 time units.
pub fn default_angle_window(tau: f64) -> usize {
    ((0.05 / tau).round() as usize).max(5)
}

/// For each old curve, the index (1-based) of the new curve through the same
/// value at `t_old`, or `None` where the old value is not isolated.
fn remap_at(
    traces: &[EigencurveTrace],
    t_old: f64,
    old_values: &[crate::Complex64],
) -> Result<Vec<Option<usize>>> {
    let times = &traces[0].times;
    let k = (0..times.len())
        .min_by(|&p, &q| {
            (times[p] - t_old)
                .abs()
                .total_cmp(&(times[q] - t_old).abs())
        })
        .unwrap_or(0);
    let new_values: Vec<_> = traces.iter().map(|t| t.values[k]).collect();
    if new_values.len() != old_values.len() {
        return Err(Error::Session(
            "curve count changed across the extension".into(),
        ));
    }
    let assign = linalg::match_values(old_values, &new_values);
    let scale = old_values.iter().fold(1.0f64, |m, z| m.max(z.norm()));
    Ok(old_values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let isolated = old_values
                .iter()
                .enumerate()
                .all(|(j, w)| j == i || (v - w).norm() > 1e-8 * scale);
            isolated.then_some(assign[i] + 1)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotCurve {
    pub index: usize,
    pub t: Vec<f64>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub degenerate: bool,
}

/// Everything a plotting front end needs: curves, crossing markers and
/// near-approach markers (pairs within `1e-2`), plus the current labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub flow: String,
    pub n: usize,
    pub real: bool,
    pub interval: Interval,
    pub curves: Vec<PlotCurve>,
    pub crossings: Vec<crossing::Crossing>,
    pub near_approaches: Vec<crossing::NearApproach>,
    pub ve: Option<LabelVector>,
    pub blocks: Option<BlockStructure>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(_: Progress) {}

    fn se6() -> Session {
        let cfg = ZnnConfig {
            tau: 1e-3,
            ..ZnnConfig::default()
        };
        Session::new(
            FlowRef::new("stackexchange6", Some(7)),
            -0.3,
            0.1,
            cfg,
            TraceMethod::Znn,
        )
    }

    #[test]
    fn empty_session_round_trip() {
        let s = Session::new(
            FlowRef::new("diag5", None),
            0.0,
            1.0,
            ZnnConfig::default(),
            TraceMethod::Oracle,
        );
        let back = Session::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn pipeline_round_trip_is_bit_identical() {
        let mut s = se6();
        s.trace(&quiet).unwrap();
        s.analyze().unwrap();
        s.infer().unwrap();
        assert_eq!(s.ve.as_ref().unwrap().0, vec![1, -1, 2, 2, -2, -2]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        s.save(&path).unwrap();
        let back = Session::load(&path).unwrap();
        assert_eq!(s, back);
        for (a, b) in s.traces.iter().zip(&back.traces) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.re.to_bits(), y.re.to_bits());
                assert_eq!(x.im.to_bits(), y.im.to_bits());
            }
        }
    }

    #[test]
    fn corrupt_and_foreign_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, "{\"version\": \"1\", \"flow\": ").unwrap();
        assert!(matches!(Session::load(&path), Err(Error::Session(m)) if m.contains("malformed")));
        fs::write(&path, "{\"version\": \"2\"}").unwrap();
        assert!(matches!(Session::load(&path), Err(Error::Session(m)) if m.contains("version")));
        assert!(Session::load(&dir.path().join("missing.json")).is_err());
    }

    #[test]
    fn inconsistent_r1_rejected_at_save() {
        let mut s = se6();
        s.trace(&quiet).unwrap();
        s.analyze().unwrap();
        s.r1 = Some(crossing::build_r1(&CrossingSet::default(), 6).unwrap());
        assert!(s.to_json().is_err());
    }

    #[test]
    fn analyze_is_idempotent() {
        let mut s = se6();
        s.trace(&quiet).unwrap();
        s.analyze().unwrap();
        s.infer().unwrap();
        let before = s.clone();
        s.analyze().unwrap();
        assert_eq!(before, s);
    }

    #[test]
    fn csv_layout() {
        let mut s = se6();
        s.trace(&quiet).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = s.export_csv(dir.path()).unwrap();
        assert_eq!(files.len(), 6);
        let text = fs::read_to_string(&files[0]).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,re,im"));
        let first: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|x| x.parse().unwrap())
            .collect();
        assert_eq!(first[0], -0.3);
        assert_eq!(first[1], s.traces[0].values[0].re);
        assert_eq!(text.lines().count(), s.traces[0].times.len() + 1);
    }

    #[test]
    fn touch_error_leaves_session_unchanged() {
        let mut s = se6();
        s.trace(&quiet).unwrap();
        s.analyze().unwrap();
        s.infer().unwrap();
        let before = s.clone();
        let err = s
            .apply_touch(TouchList::new([(1, 2)]).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::Touch(ref e) if e.row == 1));
        assert_eq!(before, s);
    }

    #[test]
    fn same_interval_extension_only_grows_history() {
        let mut s = se6();
        s.trace(&quiet).unwrap();
        s.analyze().unwrap();
        s.infer().unwrap();
        let before = s.clone();
        s.extend_interval(-0.3, 0.1, &quiet).unwrap();
        assert_eq!(s.history.len(), 1);
        assert_eq!(s.history[0].ve, before.ve);
        let mut stripped = s.clone();
        stripped.history.clear();
        assert_eq!(stripped, before);
    }

    #[test]
    fn shrinking_rejected() {
        let mut s = se6();
        s.trace(&quiet).unwrap();
        assert!(s.extend_interval(-0.2, 0.1, &quiet).is_err());
    }

    #[test]
    fn no_crossing_caveat() {
        let mut s = Session::new(
            FlowRef::new("diag3", None),
            0.0,
            1.0,
            ZnnConfig::default(),
            TraceMethod::Oracle,
        );
        // constant, well separated spectrum: no crossings
        s.traces = tracker::oracle_trace(
            &crate::MatrixFlow::constant(
                "diag3",
                crate::CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                    crate::Complex64::new(3.0, 0.0),
                    crate::Complex64::new(2.0, 0.0),
                    crate::Complex64::new(1.0, 0.0),
                ])),
            ),
            0.0,
            1.0,
            0.1,
        )
        .unwrap();
        s.analyze().unwrap();
        s.infer().unwrap();
        assert_eq!(s.ve.as_ref().unwrap().0, vec![1, 2, 3]);
        assert_eq!(s.blocks.as_ref().unwrap().sizes, vec![1, 1, 1]);
        assert!(s.notices.iter().any(|m| m == NO_CROSSING_CAVEAT));
    }
}
