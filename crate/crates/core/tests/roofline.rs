use approx::assert_relative_eq;
use codesign::roofline::{
    decode_latency, latency_report, memory_footprint, phase_breakdown, prefill_latency, total_latency, LatencyMode,
    Phase, PhaseKind,
};
use codesign::{ArchitectureConfig, HardwareSpec, WorkloadSpec};

fn arch() -> ArchitectureConfig {
    ArchitectureConfig::continuous(12.0, 1024.0, 4.0, 0.25, 4.0).unwrap()
}

#[test]
fn full_prefill_gap_is_quadratic_in_context() {
    // bandwidth so high that every operator is compute-bound
    let hw = HardwareSpec::new(1e12, 1e30, 8e9, 2.0, 2.0, 2.0).unwrap();
    let a = arch();
    let gap = |s: u64| {
        let w = WorkloadSpec::new(1, s, 1).unwrap();
        prefill_latency(&a, &w, &hw, LatencyMode::Full) - prefill_latency(&a, &w, &hw, LatencyMode::ClosedForm)
    };
    let coeff = a.layers() * (4.0 * a.width() + 5.0 * a.n_heads()) / hw.peak_flops();
    for s in [256u64, 512, 1024, 2048] {
        assert_relative_eq!(gap(s), coeff * (s * s) as f64, max_relative = 1e-9);
    }
}

#[test]
fn phases_isolate() {
    let hw = HardwareSpec::new(1e14, 2e11, 8e9, 2.0, 2.0, 2.0).unwrap();
    let a = arch();
    let prefill_only = WorkloadSpec::new(1, 1, 0).unwrap();
    let decode_only = WorkloadSpec::new(1, 0, 1).unwrap();
    for mode in [LatencyMode::ClosedForm, LatencyMode::PerStep, LatencyMode::Full] {
        assert_eq!(decode_latency(&a, &prefill_only, &hw, mode), 0.0);
        assert_eq!(total_latency(&a, &prefill_only, &hw, mode), prefill_latency(&a, &prefill_only, &hw, mode));
        assert_eq!(prefill_latency(&a, &decode_only, &hw, mode), 0.0);
        assert_eq!(total_latency(&a, &decode_only, &hw, mode), decode_latency(&a, &decode_only, &hw, mode));
    }
    // one step over a single position
    let d = a.width();
    let expected = a.layers() / hw.bandwidth() * (a.xi_w_dec() * d * d * 2.0 + 2.0 * d * 2.0 / a.gqa());
    assert_relative_eq!(decode_latency(&a, &decode_only, &hw, LatencyMode::ClosedForm), expected, max_relative = 1e-14);
}

#[test]
fn footprint_examples() {
    let hw = HardwareSpec::new(1e14, 2e11, 8e9, 2.0, 2.0, 2.0).unwrap();
    // ξ_W^all = 2 + 2 + 12/0.25 = 52
    let unit = ArchitectureConfig::continuous(1.0, 1.0, 4.0, 0.25, 1.0).unwrap();
    assert_relative_eq!(memory_footprint(&unit, &hw), 104.0, max_relative = 1e-15);
    let dense = ArchitectureConfig::continuous(6.0, 512.0, 3.0, 1.0, 2.0).unwrap();
    assert_relative_eq!(
        memory_footprint(&dense, &hw) / 2.0,
        6.0 * dense.xi_w_dec() * 512.0 * 512.0,
        max_relative = 1e-15
    );
}

#[test]
fn breakdowns_are_consistent() {
    let hw = HardwareSpec::new(1e14, 2e11, 8e9, 2.0, 2.0, 2.0).unwrap();
    let a = arch();
    let w = WorkloadSpec::new(1, 512, 8).unwrap();
    let step = phase_breakdown(&a, &w, &hw, Phase::Decode { step: 3 }).unwrap();
    assert_eq!(step.phase, PhaseKind::DecodeStep { step: 3 });
    assert_relative_eq!(step.total_latency, a.layers() * step.layer_latency, max_relative = 1e-15);
    assert!(phase_breakdown(&a, &w, &hw, Phase::Decode { step: 9 }).is_err());

    let report = latency_report(&a, &w, &hw, LatencyMode::Full).unwrap();
    assert_relative_eq!(report.decode_latency_s, report.decode.as_ref().unwrap().total_latency, max_relative = 1e-12);
    assert_relative_eq!(report.prefill_latency_s, report.prefill.as_ref().unwrap().total_latency, max_relative = 1e-12);
    assert_eq!(report.rows().len(), 20);
    let row_sum: f64 = report.rows().iter().map(|r| r.latency_s).sum();
    assert_relative_eq!(row_sum, report.total_latency_s, max_relative = 1e-12);

    let json = serde_json::to_value(&report).unwrap();
    assert!(json["prefill"]["per_layer"].as_array().unwrap().len() == 10);
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("op,phase,flops,bytes_w,bytes_a,bytes_kv,latency_s\n"));
}
