//! JSON reports for spectra and spectral data.

use serde_json::{json, Map, Value};

use crate::matrix::{CMatrix, SubspaceBasis};
use crate::potential::{matrix_to_json, Potential};
use crate::spectrum::{EigenGroup, Spectrum};
use crate::verify::CheckReport;

pub fn vectors_to_json(e: &SubspaceBasis) -> Value {
    Value::Array(
        e.vectors()
            .into_iter()
            .map(|v| Value::Array(v.into_iter().map(|z| json!([z.re, z.im])).collect()))
            .collect(),
    )
}

fn group_json(g: &EigenGroup) -> Value {
    let mut m = Map::new();
    m.insert("lambda".into(), json!(g.lambda));
    m.insert("k".into(), json!(g.k));
    m.insert("e".into(), vectors_to_json(&g.e));
    if let Some(d) = &g.data {
        let mat = |x: &CMatrix| matrix_to_json(x);
        m.insert("S_alpha".into(), mat(&d.s_alpha));
        m.insert("g_alpha".into(), mat(&d.g_alpha));
        m.insert("B_alpha".into(), mat(&d.b_alpha));
        m.insert("D_alpha".into(), mat(&d.d_alpha));
        m.insert("F_alpha".into(), vectors_to_json(&d.f_alpha));
        m.insert("E_sharp".into(), vectors_to_json(&d.e_sharp));
        m.insert("Z_alpha".into(), mat(&d.z_alpha));
        m.insert("checks".into(), serde_json::to_value(&d.checks).expect("serialisable"));
    }
    Value::Object(m)
}

/// `{"potential_hash", "groups": [...], "diagnostics": {...}}`; groups carry
/// their spectral data when attached.
pub fn spectrum_report(v: &Potential, s: &Spectrum) -> Value {
    json!({
        "potential_hash": v.content_hash(),
        "lambda_max": s.lambda_max,
        "groups": s.groups.iter().map(group_json).collect::<Vec<_>>(),
        "diagnostics": serde_json::to_value(&s.diagnostics).expect("serialisable"),
    })
}

pub fn verify_report(reports: &[CheckReport]) -> Value {
    serde_json::to_value(reports).expect("serialisable")
}
