mod common;

use codesign::closed_form::TheoryInputs;
use codesign::regimes::{
    classify_regime, normalize_budgets, ratio_heuristic, Budgets, ClassifyMethod, RatioThresholds, RegimeLabel, Targets,
};
use codesign::{HardwareSpec, WorkloadSpec};

use common::C;

fn hw() -> HardwareSpec {
    HardwareSpec::new(10e12, 50e9, 4e9, 2.0, 2.0, 2.0).unwrap()
}

#[test]
fn heuristic_labels() {
    let th = RatioThresholds::default();
    let b = |eta: f64| Budgets::new(None, Some(eta * 4e9), 4e9).unwrap();
    assert_eq!(ratio_heuristic(&b(0.125), &th), RegimeLabel::MemoryOnly);
    assert_eq!(ratio_heuristic(&b(10.0), &th), RegimeLabel::DecodeLatencyOnly);
    assert_eq!(ratio_heuristic(&b(1.0), &th), RegimeLabel::DecodePlusMemory);
    let strict = RatioThresholds { low: 0.1, high: 0.2 };
    assert_eq!(ratio_heuristic(&b(0.125), &strict), RegimeLabel::DecodePlusMemory);
}

#[test]
fn active_set_over_a_ratio_sweep() {
    let w = WorkloadSpec::new(1, 1024, 10).unwrap();
    let mut labels = Vec::new();
    for eta in [0.01, 0.125, 0.5, 2.0, 10.0] {
        let b = Budgets::new(None, Some(eta * 4e9), 4e9).unwrap();
        let inputs = TheoryInputs::new(C, b, hw(), w);
        let a = classify_regime(&inputs, &ClassifyMethod::ActiveSet).unwrap();
        let again = classify_regime(&inputs, &ClassifyMethod::ActiveSet).unwrap();
        assert_eq!(a, again);
        assert_eq!(a.eta, Some(eta));
        assert!(!a.candidates.is_empty());
        labels.push(a.label);
    }
    assert!(labels.iter().all(|l| *l != RegimeLabel::Infeasible));
    // ample decode allowance leaves memory as the binding constraint
    assert_eq!(labels[4], RegimeLabel::MemoryOnly);
}

#[test]
fn report_json_shape() {
    let w = WorkloadSpec::new(1, 1024, 10).unwrap();
    let b = normalize_budgets(&hw(), &w, &Targets::decode(0.1)).unwrap();
    let inputs = TheoryInputs::new(C, b, hw(), w);
    for method in [ClassifyMethod::ActiveSet, ClassifyMethod::RatioHeuristic(RatioThresholds::default())] {
        let r = classify_regime(&inputs, &method).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        for key in ["eta", "eta_p", "label", "method", "slacks"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["eta"], 0.125);
        assert!(json["eta_p"].is_null());
    }
}

#[test]
fn total_target_needs_a_split_or_reference() {
    let w = WorkloadSpec::default();
    let t = Targets { t_total: Some(0.5), split: Some(0.25), ..Default::default() };
    let b = normalize_budgets(&hw(), &w, &t).unwrap();
    let direct = normalize_budgets(
        &hw(),
        &w,
        &Targets { t_pre: Some(0.125), t_dec: Some(0.375), ..Default::default() },
    )
    .unwrap();
    assert_eq!(b, direct);
    let derived = normalize_budgets(&hw(), &w, &Targets { t_total: Some(0.5), ..Default::default() }).unwrap();
    assert!(derived.f_bar_p.is_some() && derived.m_bar_d.is_some());
}
