use std::fmt::Write;

use crate::decision::Label;

use super::stages::{csv_text, DecisionReport};
use super::PipelineError;

/// Text summary plus plot-ready tables, as `(file name, csv body)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub text: String,
    pub tables: Vec<(String, String)>,
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn list(ids: &[String]) -> String {
    if ids.is_empty() {
        "-".into()
    } else {
        ids.join(", ")
    }
}

/// Renders `decision.json` contents. Nothing is recomputed.
pub fn render_report(r: &DecisionReport) -> Result<RenderedReport, PipelineError> {
    let d = &r.decision;
    let mut t = String::new();
    // Writing into a String cannot fail.
    let _ = writeln!(t, "Reserve policy decision");
    let _ = writeln!(t, "alpha {}  lambda {}  tolerance {}", d.alpha, d.lambda, d.tolerance);
    let _ = writeln!(t);
    let _ = writeln!(t, "leader: {}", d.leader);
    let _ = writeln!(t, "certified ({}): {}", d.certified.len(), list(&d.certified));
    let _ = writeln!(t, "dominated ({}): {}", d.dominated.len(), list(&d.dominated));
    let _ = writeln!(t, "unresolved ({}): {}", d.unresolved.len(), list(&d.unresolved));
    let _ = writeln!(t, "shortlist: {}", list(&d.shortlist));
    let _ = writeln!(t);

    let c = &r.rule_comparison;
    let _ = writeln!(t, "point-estimate leader: {}", c.point_estimate);
    let _ = writeln!(t, "plain lower-bound leader: {}", c.lower_bound);
    let _ = writeln!(t, "support-aware leader: {}", c.support_aware_leader);
    let _ = writeln!(t);

    let s = &r.segments;
    let verdict = if s.certified { "certified" } else { "not certified" };
    let _ = write!(t, "segment non-harm for {}: {verdict} over {} segments", s.policy_id, s.k);
    if let Some(eta) = s.eta {
        let _ = write!(t, ", eta {eta:.6}");
    }
    if let Some(reason) = &s.reason {
        let _ = write!(t, " ({reason})");
    }
    let _ = writeln!(t);
    if s.uncovered > 0 {
        let _ = writeln!(t, "uncovered segments: {}", s.uncovered);
    }
    if let Some(g) = &r.response_gap {
        let _ = writeln!(t, "response-gap threshold: {} (margin {})", pct(g.threshold), pct(g.margin));
    }
    if let Some(tr) = &r.transfer {
        let _ = writeln!(
            t,
            "holdout transfer: spearman {:.4}, top-{} overlap {}, holdout leader {}",
            tr.spearman, tr.k, tr.topk_overlap, tr.holdout_leader
        );
    }
    if let Some(b) = &r.bootstrap {
        let _ = writeln!(
            t,
            "bootstrap ({} draws): leader selected in {}",
            b.draws,
            pct(b.leader_frequency)
        );
    }
    let _ = writeln!(t);
    let _ = writeln!(t, "{:<8} {:>10} {:>10} {:>10} {:>10} {:>9}  label", "policy", "lift", "lcb", "ucb", "lcb_supp", "retained");
    for b in d.bounds.iter().filter(|b| !b.baseline) {
        let label = d.gate_report.get(&b.policy_id).map_or("", |g| match g.label {
            Label::Certified => "certified",
            Label::Dominated => "dominated",
            Label::Unresolved => "unresolved",
        });
        let _ = writeln!(
            t,
            "{:<8} {:>10} {:>10} {:>10} {:>10} {:>9}  {label}",
            b.policy_id,
            pct(b.lift_hat),
            pct(b.lcb),
            pct(b.ucb),
            pct(b.lcb_support),
            pct(b.retained_share)
        );
    }

    let label_of = |id: &str| {
        d.gate_report.get(id).map_or("baseline".to_string(), |g| {
            serde_json::to_value(g.label).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
        })
    };
    let bounds = csv_text(
        &["policy_id", "lift_hat", "lcb", "ucb", "lcb_support", "retained_share", "label"],
        d.bounds.iter().map(|b| {
            vec![
                b.policy_id.clone(),
                b.lift_hat.to_string(),
                b.lcb.to_string(),
                b.ucb.to_string(),
                b.lcb_support.to_string(),
                b.retained_share.to_string(),
                label_of(&b.policy_id),
            ]
        }),
    )?;
    let tolerance = csv_text(
        &["tolerance", "shortlist_size", "shortlist"],
        r.tolerance_sweep
            .iter()
            .map(|s| vec![s.tolerance.to_string(), s.shortlist_size.to_string(), s.shortlist.join(" ")]),
    )?;
    let scaling = csv_text(
        &["catalog_size", "z_crit", "leader", "leader_lcb_support"],
        r.catalog_scaling.iter().map(|s| {
            vec![s.catalog_size.to_string(), s.z_crit.to_string(), s.leader.clone(), s.leader_lcb_support.to_string()]
        }),
    )?;
    let mut tables = vec![
        ("report_bounds.csv".to_string(), bounds),
        ("report_tolerance.csv".to_string(), tolerance),
        ("report_catalog_scaling.csv".to_string(), scaling),
    ];
    if let Some(b) = &r.bootstrap {
        let body = csv_text(
            &["policy_id", "frequency"],
            b.frequencies.iter().map(|(id, f)| vec![id.clone(), f.to_string()]),
        )?;
        tables.push(("report_bootstrap.csv".into(), body));
    }
    if let Some(s) = &r.support {
        let body = csv_text(
            &["window_h", "n_boundary"],
            s.leader_boundary.iter().map(|(h, n)| vec![h.to_string(), n.to_string()]),
        )?;
        tables.push(("report_leader_boundary.csv".into(), body));
    }
    Ok(RenderedReport { text: t, tables })
}
