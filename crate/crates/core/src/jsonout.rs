//! JSON and CSV emission for solver and audit results.
//!
//! All floats are written with 12 significant digits so identical runs
//! produce byte-identical files. JSON has no infinity literal, so infinite
//! values serialize as the string `"inf"`.

use crate::audit::AuditReport;
use crate::avg::CurvePoint;
use crate::minmax::MinmaxResult;
use crate::prob::Channel;
use crate::solver::SolverResult;

/// Fixed-width float formatting: 12 significant digits, `inf` for infinities.
pub fn fmt_float(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        }
    } else if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.11e}")
    }
}

/// Float as a JSON value: a number when finite, the string `"inf"` otherwise.
pub fn json_float(x: f64) -> String {
    if x.is_finite() {
        fmt_float(x)
    } else {
        format!("\"{}\"", fmt_float(x))
    }
}

fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn json_label_array(labels: &[String]) -> String {
    let items: Vec<String> = labels.iter().map(|l| json_string(l)).collect();
    format!("[{}]", items.join(","))
}

fn json_float_array(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|&v| json_float(v)).collect();
    format!("[{}]", items.join(","))
}

/// Channel as a JSON object with `input`, `output` and `rows`.
pub fn channel_json(channel: &Channel) -> String {
    let rows: Vec<String> = channel
        .rows()
        .rows()
        .into_iter()
        .map(|r| json_float_array(&r.to_vec()))
        .collect();
    format!(
        "{{\"input\":{},\"output\":{},\"rows\":[{}]}}",
        json_label_array(channel.input_alphabet().labels()),
        json_label_array(channel.output_alphabet().labels()),
        rows.join(",")
    )
}

/// SolverResult as JSON.
pub fn solver_result_json(result: &SolverResult) -> String {
    format!(
        "{{\n  \"objective_bits\": {},\n  \"converged\": {},\n  \"iterations\": {},\n  \
         \"kkt_residual\": {},\n  \"constraint_residuals\": {},\n  \"log_floor_active\": {},\n  \
         \"channel\": {}\n}}\n",
        json_float(result.objective_value),
        result.converged,
        result.iterations,
        json_float(result.kkt_residual),
        json_float_array(&result.constraint_residuals),
        result.log_floor_active,
        channel_json(&result.channel)
    )
}

/// MinmaxResult as JSON; extends the solver fields with the minmax ones.
pub fn minmax_result_json(result: &MinmaxResult) -> String {
    format!(
        "{{\n  \"epsilon_bits\": {},\n  \"distortion\": {},\n  \"delta_param\": {},\n  \
         \"per_output_entropy\": {},\n  \"converged\": {},\n  \"iterations\": {},\n  \
         \"kkt_residual\": {},\n  \"channel\": {}\n}}\n",
        json_float(result.epsilon_bits),
        json_float(result.distortion),
        json_float(result.delta_param),
        json_float_array(&result.per_output_entropy),
        result.solver.converged,
        result.solver.iterations,
        json_float(result.solver.kkt_residual),
        channel_json(&result.channel)
    )
}

/// AuditReport as JSON with the exact field names of the report schema.
pub fn audit_report_json(report: &AuditReport) -> String {
    format!(
        "{{\n  \"dp_epsilon\": {},\n  \"info_privacy_epsilon\": {},\n  \
         \"avg_leakage_bits\": {},\n  \"max_leakage_bits\": {}\n}}\n",
        json_float(report.dp_epsilon),
        json_float(report.info_privacy_epsilon),
        json_float(report.avg_leakage_bits),
        json_float(report.max_leakage_bits)
    )
}

/// Tradeoff curve as CSV with mandatory header `delta,leakage_bits`.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("delta,leakage_bits\n");
    for p in points {
        out.push_str(&fmt_float(p.delta));
        out.push(',');
        out.push_str(&fmt_float(p.leakage_bits));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting() {
        assert_eq!(fmt_float(0.25), "2.50000000000e-1");
        assert_eq!(fmt_float(0.0), "0.00000000000e0");
        assert_eq!(fmt_float(f64::INFINITY), "inf");
        assert_eq!(json_float(f64::INFINITY), "\"inf\"");
        assert_eq!(json_float(1.0), "1.00000000000e0");
    }

    #[test]
    fn json_escaping() {
        assert_eq!(json_string("a\"b"), "\"a\\\"b\"");
    }
}
