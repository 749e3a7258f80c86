//! Consolidates the data artifacts of a run directory into `report.md` and
//! `summary.json`. Missing artifacts are listed; the rest is still reported.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::output::{format_float, write_json, write_text};
use crate::Failure;

pub const ARTIFACTS: [&str; 5] = [
    "validation.json",
    "gains.json",
    "feasibility.json",
    "verify.json",
    "stability.json",
];

#[derive(Debug, Serialize, PartialEq)]
pub struct Section {
    pub title: String,
    pub artifact: String,
    pub present: bool,
    pub verdict: Option<String>,
    /// Key/value lines in a fixed order.
    pub items: Vec<(String, String)>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Summary {
    pub sections: Vec<Section>,
    pub missing: Vec<String>,
}

fn num(v: &Value) -> String {
    match v {
        Value::Number(n) if n.is_f64() => n.as_f64().map(format_float).unwrap_or_default(),
        Value::Number(n) => n.to_string(),
        Value::Null => "n/a".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn flag(v: &Value) -> &'static str {
    match v.as_bool() {
        Some(true) => "pass",
        Some(false) => "fail",
        None => "n/a",
    }
}

fn load(dir: &Path, name: &str) -> Option<Value> {
    let text = std::fs::read_to_string(dir.join(name)).ok()?;
    serde_json::from_str(&text).ok()
}

fn validation(v: &Value) -> (Option<String>, Vec<(String, String)>) {
    let passed = flag(&v["passed"]);
    let count = v["violations"].as_array().map_or(0, Vec::len);
    (
        Some(passed.into()),
        vec![
            ("window".into(), format!("[1, {}]", num(&v["N"]))),
            ("space".into(), num(&v["space"])),
            ("violations".into(), count.to_string()),
        ],
    )
}

fn gains(v: &Value) -> (Option<String>, Vec<(String, String)>) {
    let diverged = v["diverged"].as_array().map_or(0, Vec::len);
    let verdict = if diverged == 0 { "finite" } else { "diverged" };
    (
        Some(verdict.into()),
        vec![
            ("mode".into(), num(&v["mode"])),
            ("N".into(), num(&v["N"])),
            ("M".into(), num(&v["M"])),
            ("l1 norm".into(), num(&v["l1_norm"])),
            ("diverged entries".into(), diverged.to_string()),
        ],
    )
}

fn feasibility(v: &Value) -> (Option<String>, Vec<(String, String)>) {
    let mut items = vec![
        ("window".into(), format!("[1, {}]", num(&v["n"]))),
        ("ratio conditions".into(), flag(&v["ratio"]["pass"]).into()),
        ("nu0".into(), num(&v["ratio"]["nu0"])),
        ("Phi decay".into(), flag(&v["decay_certificate"]["pass"]).into()),
        ("kappa".into(), num(&v["decay_certificate"]["kappa"])),
        ("pi bound".into(), flag(&v["pi_bound"]["pass"]).into()),
        ("max log abs pi".into(), num(&v["pi_bound"]["max_log_pi"])),
    ];
    if let Some(classes) = v["decay_class"].as_array() {
        for c in classes {
            items.push((format!("decay class d = {}", num(&c["d_tested"])), num(&c["verdict"])));
        }
    }
    let ratio = v["ratio"]["pass"].as_bool() == Some(true);
    let chain = ratio
        && v["decay_certificate"]["pass"].as_bool() == Some(true)
        && v["pi_bound"]["pass"].as_bool() != Some(false);
    let verdict = if chain {
        "sufficient ratio conditions hold on the window"
    } else {
        "sufficient ratio conditions not established"
    };
    (Some(verdict.into()), items)
}

fn verify(v: &Value) -> (Option<String>, Vec<(String, String)>) {
    let modes = v["spectrum"]["modes"].as_array();
    let verified = modes.map_or(0, |m| m.iter().filter(|x| x["pass"] == Value::Bool(true)).count());
    let total = modes.map_or(0, Vec::len);
    let max_res = modes
        .map(|m| {
            m.iter()
                .filter_map(|x| x["residual"].as_f64())
                .fold(0.0, f64::max)
        })
        .unwrap_or(f64::NAN);
    let windings = v["windings"].as_array();
    let matching = windings.map_or(0, |w| w.iter().filter(|x| x["winding"] == x["expected"]).count());
    let mut items = vec![
        ("modes verified".into(), format!("{verified}/{total}")),
        ("max eigenvector residual".into(), format_float(max_res)),
        (
            "windings matching".into(),
            format!("{matching}/{}", windings.map_or(0, Vec::len)),
        ),
    ];
    if !v["cauchy"].is_null() {
        items.push(("P^2 - I residual".into(), num(&v["cauchy"]["involution_residual"])));
        items.push((
            "P T~ P + A residual".into(),
            num(&v["cauchy"]["diagonalization_residual"]),
        ));
    }
    (Some(flag(&v["pass"]).into()), items)
}

fn stability(v: &Value) -> (Option<String>, Vec<(String, String)>) {
    let r = &v["report"];
    let mut items = vec![
        ("space".into(), num(&r["space"])),
        ("initial condition".into(), num(&v["initial"])),
        ("sup ratio".into(), num(&r["sup_ratio"])),
        ("final ratio".into(), num(&r["final_ratio"])),
        ("t final".into(), num(&r["t_final"])),
    ];
    if !r["max_mode_ratio"].is_null() {
        items.push(("max mode ratio at horizon".into(), num(&r["max_mode_ratio"])));
        let worst = r["first_passage"]
            .as_array()
            .map(|f| {
                f.iter()
                    .filter_map(|x| x["relative_error"].as_f64())
                    .fold(0.0, f64::max)
            })
            .unwrap_or(f64::NAN);
        items.push(("max first-passage relative error".into(), format_float(worst)));
    }
    (Some(num(&r["classification"])), items)
}

pub fn summarize(dir: &Path) -> Summary {
    type Extract = fn(&Value) -> (Option<String>, Vec<(String, String)>);
    let table: [(&str, &str, Extract); 5] = [
        ("Necessary conditions", ARTIFACTS[0], validation),
        ("Gain synthesis", ARTIFACTS[1], gains),
        ("Feasibility", ARTIFACTS[2], feasibility),
        ("Spectrum verification", ARTIFACTS[3], verify),
        ("Simulation", ARTIFACTS[4], stability),
    ];
    let mut missing = Vec::new();
    let sections = table
        .iter()
        .map(|(title, file, extract)| match load(dir, file) {
            Some(v) => {
                let (verdict, items) = extract(&v);
                Section {
                    title: title.to_string(),
                    artifact: file.to_string(),
                    present: true,
                    verdict,
                    items,
                }
            }
            None => {
                missing.push(file.to_string());
                Section {
                    title: title.to_string(),
                    artifact: file.to_string(),
                    present: false,
                    verdict: None,
                    items: Vec::new(),
                }
            }
        })
        .collect();
    Summary { sections, missing }
}

pub fn markdown(summary: &Summary) -> String {
    let mut md = String::from("# Ensemble placement report\n");
    for s in &summary.sections {
        md.push_str(&format!("\n## {}\n\n", s.title));
        if !s.present {
            md.push_str(&format!("_missing: `{}`_\n", s.artifact));
            continue;
        }
        if let Some(v) = &s.verdict {
            md.push_str(&format!("Verdict: **{v}**\n\n"));
        }
        md.push_str("| quantity | value |\n|---|---|\n");
        for (k, v) in &s.items {
            md.push_str(&format!("| {k} | {v} |\n"));
        }
    }
    if !summary.missing.is_empty() {
        md.push_str("\n## Missing artifacts\n\n");
        for m in &summary.missing {
            md.push_str(&format!("- `{m}`\n"));
        }
    }
    md
}

pub fn report(dir: &Path) -> Result<Summary, Failure> {
    let summary = summarize(dir);
    write_text(dir, "report.md", &markdown(&summary))?;
    write_json(dir, "summary.json", &summary)?;
    println!(
        "report: {} of {} sections present",
        summary.sections.iter().filter(|s| s.present).count(),
        summary.sections.len()
    );
    Ok(summary)
}
