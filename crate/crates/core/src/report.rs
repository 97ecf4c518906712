//! Flat JSON serialization of solve and gluing reports with a fixed key
//! set and order, so identical runs produce byte-identical documents.

use serde_json::{json, Map, Value};

use crate::gluing::GluingReport;
use crate::solver::SolveReport;

pub fn solve_report_json(r: &SolveReport) -> Value {
    let mut m = Map::new();
    m.insert("iterations".into(), json!(r.iterations));
    m.insert("final_rel_residual".into(), json!(r.final_rel_residual));
    m.insert("kernel_coefficients".into(), json!(r.kernel_coefficients));
    m.insert("forward_residual".into(), json!(r.forward_residual));
    m.insert("decay_slope".into(), json!(r.decay_slope));
    Value::Object(m)
}

pub fn gluing_report_json(r: &GluingReport) -> Value {
    let mut m = Map::new();
    m.insert(
        "flux_V".into(),
        json!({
            "coefficients": r.flux_v.coefficients,
            "surface_label": r.flux_v.surface_label,
        }),
    );
    m.insert(
        "flux_W".into(),
        json!({
            "coefficients": r.flux_w.coefficients,
            "surface_label": r.flux_w.surface_label,
        }),
    );
    m.insert("flux_mismatch".into(), json!(r.flux_mismatch));
    m.insert("solve_report".into(), solve_report_json(&r.solve_report));
    m.insert(
        "glued_divergence_residual".into(),
        json!(r.glued_divergence_residual),
    );
    Value::Object(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_report_keys_are_fixed() {
        let r = SolveReport {
            iterations: 3,
            final_rel_residual: 1e-9,
            kernel_coefficients: vec![0.0],
            forward_residual: 1e-4,
            decay_slope: None,
            converged: true,
            energy_trace: vec![1.0],
        };
        let v = solve_report_json(&r);
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(
            keys,
            vec![
                "iterations",
                "final_rel_residual",
                "kernel_coefficients",
                "forward_residual",
                "decay_slope"
            ]
        );
        assert_eq!(v["decay_slope"], Value::Null);
    }
}
