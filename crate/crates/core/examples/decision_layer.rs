//! Walks the decision layer through each source of a final action.
//!
//! `cargo run --example decision_layer`

use causal_remedy::decision::{decide, legacy_policy, DecisionConfig};
use causal_remedy::domain::{DiagnosticSignals, ErrorCode, IteEstimate};

fn estimate(tau: f64, width: f64) -> IteEstimate {
    IteEstimate {
        tau,
        tau_lower: tau - width / 2.0,
        tau_upper: tau + width / 2.0,
        confidence_level: 0.9,
    }
}

fn main() {
    let cfg = DecisionConfig::default();
    let hw = DiagnosticSignals {
        vm_count: 3,
        error_code: Some(ErrorCode::HwFailure),
        ..DiagnosticSignals::default()
    };
    let repeated = DiagnosticSignals {
        repeat_count: 11,
        ..hw.clone()
    };
    let cases = [
        ("confident reboot", estimate(4.0, 2.0), &hw),
        ("confident redeploy", estimate(-6.0, 2.0), &hw),
        ("small redeploy gain", estimate(-0.4, 2.0), &hw),
        ("wide interval near zero", estimate(0.5, 20.0), &hw),
        ("repeatedly failing node", estimate(4.0, 2.0), &repeated),
    ];
    println!("legacy rule on the hardware signals: {}", legacy_policy(&hw));
    for (label, ite, signals) in cases {
        let d = decide(&ite, signals, &cfg);
        println!("{label:<26} -> {:<8} via {:<16} ({})", d.action, d.source, d.reason);
    }
}
