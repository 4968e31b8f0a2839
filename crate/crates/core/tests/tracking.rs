use eigenflow::gallery::FlowRef;
use eigenflow::linalg;
use eigenflow::tracker::{self, ZnnConfig};
use eigenflow::Complex64;

fn matched_max_error(values: &[Complex64], reference: &[Complex64]) -> f64 {
    let assign = linalg::match_values(values, reference);
    values
        .iter()
        .zip(&assign)
        .map(|(v, &j)| (v - reference[j]).norm() / reference[j].norm().max(1.0))
        .fold(0.0, f64::max)
}

#[test]
fn stackexchange6_terminal_accuracy() {
    let flow = FlowRef::new("stackexchange6", Some(11)).build().unwrap();
    let cfg = ZnnConfig {
        tau: 1e-4,
        ..ZnnConfig::default()
    };
    let traces = tracker::trace(&flow, -0.3, 0.1, &cfg).unwrap();
    let tf = *traces[0].times.last().unwrap();
    let last: Vec<Complex64> = traces.iter().map(|t| *t.values.last().unwrap()).collect();
    let reference = linalg::eigenvalues(&flow.evaluate(tf).unwrap()).unwrap();
    let err = matched_max_error(&last, &reference);
    assert!(err <= 1e-8, "terminal relative error {err:e}");
    for tr in &traces {
        assert!(tr.values.iter().all(|z| z.im.abs() <= 1e-9));
        assert!(!tr.degenerate);
    }
}

#[test]
fn hermitean11_znn_matches_oracle() {
    let flow = FlowRef::new("hermitean11_analog", None).build().unwrap();
    let cfg = ZnnConfig::default();
    let znn = tracker::trace(&flow, 0.0, 6.0, &cfg).unwrap();
    let oracle = tracker::oracle_trace(&flow, 0.0, 6.0, cfg.tau).unwrap();
    let dev = tracker::max_deviation(&znn, &oracle).unwrap();
    assert!(dev <= 1e-5, "deviation {dev:e}");
}

#[test]
fn spectrum_completeness_on_a10() {
    let flow = FlowRef::new("b10", None).build().unwrap();
    let cfg = ZnnConfig {
        tau: 1e-4,
        ..ZnnConfig::default()
    };
    let traces = tracker::trace(&flow, -1.0, 1.0, &cfg).unwrap();
    let times = &traces[0].times;
    for k in (0..times.len()).step_by(500) {
        let got: Vec<Complex64> = traces.iter().map(|t| t.values[k]).collect();
        let want = linalg::eigenvalues(&flow.evaluate(times[k]).unwrap()).unwrap();
        let err = matched_max_error(&got, &want);
        assert!(err <= 1e-8, "t={}: {err:e}", times[k]);
    }
}

#[test]
fn unstable_request_falls_back() {
    let f = eigenflow::formula::fallback(5, 6, 1e-4 * 50.0).unwrap();
    assert!(f.stability_ok && f.tau_eta_limit >= 5e-3);
    assert_eq!(f.j, 5);
}
