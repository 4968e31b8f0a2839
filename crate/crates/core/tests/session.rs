use eigenflow::gallery::FlowRef;
use eigenflow::session::{Progress, Session, TraceMethod};
use eigenflow::tracker::ZnnConfig;

fn quiet(_: Progress) {}

fn run(flow: FlowRef, t0: f64, tf: f64, tau: f64) -> Session {
    let cfg = ZnnConfig {
        tau,
        ..ZnnConfig::default()
    };
    let mut s = Session::new(flow, t0, tf, cfg, TraceMethod::Znn);
    s.trace(&quiet).unwrap();
    s.analyze().unwrap();
    s.infer().unwrap();
    s
}

#[test]
fn leftward_extension_refines_hermitean11() {
    let mut s = run(FlowRef::new("hermitean11_analog", None), 0.0, 6.0, 1e-3);
    let before_groups = s.ve.as_ref().unwrap().group_count();
    let before_r1 = s.r1.clone();
    let phases = std::cell::RefCell::new(Vec::new());
    s.extend_interval(-7.0, 6.0, &|p: Progress| phases.borrow_mut().push(p.phase))
        .unwrap();
    assert_ne!(s.r1, before_r1);
    let after = s.ve.as_ref().unwrap().group_count();
    assert!(after < before_groups, "{before_groups} -> {after}");
    assert_eq!(s.history.len(), 1);
    assert_eq!(s.history[0].interval.t0, 0.0);
    assert_eq!(phases.borrow().last().map(String::as_str), Some("done"));
}

#[test]
fn touch_rows_survive_extension_or_are_reported() {
    let mut s = run(FlowRef::new("hermitean11_analog", None), 0.0, 6.0, 1e-3);
    let cands = s.suggestions(0.2, Some(50)).unwrap();
    let rows: Vec<_> = cands.iter().take(2).map(|c| (c.a, c.b)).collect();
    let touch = eigenflow::decomposition::TouchList::new(rows.clone()).unwrap();
    if s.apply_touch(touch).is_err() {
        return;
    }
    s.extend_interval(-2.0, 6.0, &quiet).unwrap();
    let dropped = s.notices.iter().filter(|m| m.contains("dropped")).count();
    assert_eq!(s.touch.len() + dropped, rows.len());
}

#[test]
fn stackexchange6_plot_data() {
    let s = run(FlowRef::new("stackexchange6", Some(7)), -0.3, 0.1, 1e-4);
    let plot = s.plot_data();
    assert_eq!(plot.curves.len(), 6);
    assert_eq!(plot.crossings.len(), 9);
    assert!(plot.real);
    let json = serde_json::to_string(&plot).unwrap();
    assert!(json.contains("\"near_approaches\""));
}

#[test]
fn b10_plot_marks_the_close_pair() {
    let mut s = Session::new(
        FlowRef::new("b10", None),
        -1.0,
        4.0,
        ZnnConfig::default(),
        TraceMethod::Znn,
    );
    s.trace(&quiet).unwrap();
    s.analyze().unwrap();
    assert!(s.infer().is_err());
    let plot = s.plot_data();
    assert!(!plot.real);
    assert!(plot.crossings.is_empty());
    let closest = plot
        .near_approaches
        .iter()
        .min_by(|a, b| a.d_min.total_cmp(&b.d_min))
        .unwrap();
    assert!((closest.t_min - (-0.18)).abs() < 0.02, "{}", closest.t_min);
    assert!(s.ve.is_none());
}

#[test]
fn extension_preserves_old_crossings() {
    let tau = 1e-3;
    let old = run(FlowRef::new("stackexchange6", Some(7)), -0.3, 0.1, tau);
    let mut s = old.clone();
    s.extend_interval(-0.35, 0.15, &quiet).unwrap();
    // remap old indices by value at the old left edge
    let k = s.traces[0]
        .times
        .iter()
        .position(|&t| (t - -0.3).abs() < tau / 2.0)
        .unwrap();
    let old_edge: Vec<_> = old.traces.iter().map(|t| t.values[0]).collect();
    let new_edge: Vec<_> = s.traces.iter().map(|t| t.values[k]).collect();
    let map = eigenflow::linalg::match_values(&old_edge, &new_edge);
    let new = s.crossings.as_ref().unwrap();
    for c in &old.crossings.as_ref().unwrap().crossings {
        let (a, b) = (map[c.i - 1] + 1, map[c.j - 1] + 1);
        let pair = (a.min(b), a.max(b));
        assert!(
            new.crossings
                .iter()
                .any(|n| (n.i, n.j) == pair && (n.t_star - c.t_star).abs() <= tau),
            "crossing ({}, {}) at {} lost",
            c.i,
            c.j,
            c.t_star
        );
    }
}
