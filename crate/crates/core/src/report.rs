//! Plain-text reports: `[name]` sections of `key = value` lines and
//! `[name:csv]` sections holding a CSV block, separated by blank lines.
//! Floats are written in shortest round-trip form so a parsed report carries
//! the exact values.

use std::fmt::{self, Display, Write as _};

use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::loglinear::{Completion, SelectionReport};
use crate::rasch::{self, pairs, CaptureModel, RaschParams};
use crate::tables::CapturePattern;
use crate::threesided::{NullDistribution, ThreeSidedOutcome};

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Pairs {
        name: String,
        entries: Vec<(String, String)>,
    },
    Table {
        name: String,
        header: Vec<String>,
        rows: Vec<Vec<String>>,
    },
}

impl Section {
    pub fn name(&self) -> &str {
        match self {
            Section::Pairs { name, .. } | Section::Table { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub sections: Vec<Section>,
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_pairs<K: Into<String>, V: Display>(&mut self, name: &str, entries: impl IntoIterator<Item = (K, V)>) {
        let entries = entries.into_iter().map(|(k, v)| (k.into(), v.to_string())).collect();
        self.sections.push(Section::Pairs {
            name: name.into(),
            entries,
        });
    }

    pub fn add_table(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) {
        self.sections.push(Section::Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows,
        });
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name() == name)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        match self.section(section)? {
            Section::Pairs { entries, .. } => entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str()),
            Section::Table { .. } => None,
        }
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Option<f64> {
        self.get(section, key)?.parse().ok()
    }

    /// Rows of a CSV section as `column -> value` lookups.
    pub fn table(&self, name: &str) -> Option<(&[String], &[Vec<String>])> {
        match self.section(name)? {
            Section::Table { header, rows, .. } => Some((header, rows)),
            Section::Pairs { .. } => None,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            match s {
                Section::Pairs { name, entries } => {
                    let _ = writeln!(out, "[{name}]");
                    for (k, v) in entries {
                        let _ = writeln!(out, "{k} = {v}");
                    }
                }
                Section::Table { name, header, rows } => {
                    let _ = writeln!(out, "[{name}:csv]");
                    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
                    w.write_record(header).expect("write to memory");
                    for r in rows {
                        w.write_record(r).expect("write to memory");
                    }
                    out.push_str(&String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8"));
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Report> {
        let mut report = Report::new();
        let lines: Vec<&str> = text.lines().collect();
        let mut i = 0;
        while i < lines.len() {
            let line = lines[i].trim_end();
            if line.is_empty() || line.starts_with('#') {
                i += 1;
                continue;
            }
            let Some(head) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected a section header, found {line:?}"),
                });
            };
            let start = i + 1;
            let mut end = start;
            while end < lines.len() && !lines[end].trim().is_empty() {
                end += 1;
            }
            if let Some(name) = head.strip_suffix(":csv") {
                let block = lines[start..end].join("\n");
                let mut rdr = csv::ReaderBuilder::new().from_reader(block.as_bytes());
                let header: Vec<String> = rdr
                    .headers()
                    .map_err(|e| Error::Parse { line: start + 1, message: e.to_string() })?
                    .iter()
                    .map(String::from)
                    .collect();
                let mut rows = Vec::new();
                for rec in rdr.records() {
                    let rec = rec.map_err(|e| Error::Parse { line: start + 1, message: e.to_string() })?;
                    rows.push(rec.iter().map(String::from).collect());
                }
                report.sections.push(Section::Table { name: name.into(), header, rows });
            } else {
                let mut entries = Vec::new();
                for (offset, l) in lines[start..end].iter().enumerate() {
                    let Some((k, v)) = l.split_once(" = ") else {
                        return Err(Error::Parse {
                            line: start + offset + 1,
                            message: format!("expected `key = value`, found {l:?}"),
                        });
                    };
                    entries.push((k.to_string(), v.to_string()));
                }
                report.sections.push(Section::Pairs { name: head.into(), entries });
            }
            i = end;
        }
        Ok(report)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn default_names(n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("list{k}")).collect()
}

/// Parameter names and values in report order.
pub fn parameter_rows(fit: &FitResult, names: &[String]) -> Vec<(String, f64)> {
    let p = &fit.params;
    let mut rows: Vec<(String, f64)> = names.iter().zip(p.alpha()).map(|(n, &a)| (format!("alpha_{n}"), a)).collect();
    if p.model() == CaptureModel::Dynamic {
        for (j, k) in pairs(p.n_lists()) {
            rows.push((format!("alpha_{}:{}", names[j], names[k]), p.interaction(j, k)));
        }
    }
    match fit.random_effects {
        Some(re) => {
            rows.push(("mu".into(), re.mu));
            rows.push(("sigma".into(), re.sigma));
        }
        None => rows.push(("theta".into(), p.theta())),
    }
    if let Some(r) = fit.rates {
        rows.push(("gamma_exposed".into(), r.gamma_exposed));
        rows.push(("gamma_unexposed".into(), r.gamma_unexposed));
    }
    rows
}

pub fn add_fit(report: &mut Report, fit: &FitResult, names: &[String]) {
    let d = &fit.derived;
    let mut entries: Vec<(String, String)> = vec![
        ("variant".into(), fit.variant.to_string()),
        ("model".into(), fit.params.model().to_string()),
        ("lists".into(), names.join(",")),
        ("loglik".into(), num(fit.loglik)),
        ("converged".into(), fit.converged.to_string()),
        ("gradient_norm".into(), num(fit.gradient_norm)),
        ("iterations".into(), fit.iterations.to_string()),
        ("restarts".into(), fit.n_restarts_used.to_string()),
        ("best_start".into(), fit.best_start.to_string()),
        ("miss_probability_exposed".into(), num(d.miss_probability_exposed)),
        ("miss_probability_unexposed".into(), num(d.miss_probability_unexposed)),
        ("expected_missing_exposed".into(), num(d.expected_missing_exposed)),
        ("expected_missing_unexposed".into(), num(d.expected_missing_unexposed)),
        ("ratio".into(), num(d.ratio)),
    ];
    if !fit.not_estimable.is_empty() {
        entries.push(("not_estimable".into(), fit.not_estimable.join(",")));
    }
    for (i, w) in fit.warnings.iter().enumerate() {
        entries.push((format!("warning_{}", i + 1), w.clone()));
    }
    report.add_pairs("fit", entries);
    let rows = parameter_rows(fit, names)
        .into_iter()
        .map(|(n, v)| vec![n, num(v), num(fit.loglik)])
        .collect();
    report.add_table("parameters", &["parameter", "estimate", "loglik"], rows);
}

/// Recovers the capture parameters written by [`add_fit`].
pub fn params_from_report(report: &Report) -> Result<(RaschParams, Vec<String>)> {
    let missing = |what: &str| Error::Invalid(format!("report lacks {what}"));
    let model: CaptureModel = report.get("fit", "model").ok_or_else(|| missing("fit.model"))?.parse()?;
    let names: Vec<String> = report
        .get("fit", "lists")
        .ok_or_else(|| missing("fit.lists"))?
        .split(',')
        .map(String::from)
        .collect();
    let (header, rows) = report.table("parameters").ok_or_else(|| missing("a parameters table"))?;
    let (pi, ei) = (
        header.iter().position(|h| h == "parameter").ok_or_else(|| missing("a parameter column"))?,
        header.iter().position(|h| h == "estimate").ok_or_else(|| missing("an estimate column"))?,
    );
    let lookup = |key: &str| -> Result<f64> {
        let row = rows.iter().find(|r| r[pi] == key).ok_or_else(|| missing(key))?;
        row[ei].parse().map_err(|_| Error::Invalid(format!("{key} is not a number: {:?}", row[ei])))
    };
    let alpha: Vec<f64> = names.iter().map(|n| lookup(&format!("alpha_{n}"))).collect::<Result<_>>()?;
    let alpha2: Vec<f64> = match model {
        CaptureModel::Dynamic => pairs(names.len())
            .map(|(j, k)| lookup(&format!("alpha_{}:{}", names[j], names[k])))
            .collect::<Result<_>>()?,
        CaptureModel::Independent => vec![0.0; rasch::n_pairs(names.len())],
    };
    let theta = lookup("theta").or_else(|_| lookup("mu"))?;
    Ok((RaschParams::new(alpha, alpha2, theta, model)?, names))
}

/// Cell probabilities for the exposed group at `theta`, `-delta`, `+delta`
/// and for the unexposed group.
pub fn add_probabilities(report: &mut Report, params: &RaschParams, delta: f64) {
    let shifts = [params.theta(), -delta, delta, 0.0];
    let columns: Vec<Vec<f64>> = shifts.iter().map(|&s| rasch::cell_probabilities(params, s)).collect();
    let mut rows = Vec::new();
    for p in CapturePattern::all(params.n_lists()).collect::<Vec<_>>().into_iter().rev() {
        let mut row = vec![p.to_string()];
        row.extend(columns.iter().map(|c| num(c[p.index()])));
        rows.push(row);
    }
    report.add_pairs("probabilities", [("theta", num(params.theta())), ("delta", num(delta))]);
    report.add_table(
        "cell_probabilities",
        &["pattern", "exposed_theta_hat", "exposed_minus_delta", "exposed_plus_delta", "unexposed"],
        rows,
    );
}

pub fn add_null_distribution(report: &mut Report, dist: &NullDistribution) {
    report.add_pairs(
        "bootstrap",
        [
            ("regime", dist.regime.to_string()),
            ("replicates", dist.requested.to_string()),
            ("seed", dist.seed.to_string()),
            ("retried", dist.retried.to_string()),
            ("excluded", dist.excluded.to_string()),
            ("null_loglik", num(dist.generating.loglik)),
        ],
    );
}

pub fn add_outcomes(report: &mut Report, outcomes: &[ThreeSidedOutcome]) {
    let Some(first) = outcomes.first() else { return };
    let q = first.quantiles;
    report.add_pairs(
        "test",
        [
            ("theta_hat", num(first.theta_hat)),
            ("alpha", num(first.alpha)),
            ("q_alpha_half", num(q.lower_half)),
            ("q_alpha", num(q.lower)),
            ("q_one_minus_alpha", num(q.upper)),
            ("q_one_minus_alpha_half", num(q.upper_half)),
            ("delta1", num(first.delta1)),
            ("delta2", num(first.delta2)),
        ],
    );
    let rows = outcomes
        .iter()
        .map(|o| {
            vec![
                num(o.delta),
                o.decisions.reject_h0.to_string(),
                o.decisions.reject_plus.to_string(),
                o.decisions.reject_minus.to_string(),
            ]
        })
        .collect();
    report.add_table("decisions", &["delta", "reject_h0", "reject_plus", "reject_minus"], rows);
    report.add_pairs(
        "interpretation",
        first.narrative().into_iter().enumerate().map(|(i, l)| (format!("line_{}", i + 1), l)),
    );
}

pub fn add_selection(report: &mut Report, sel: &SelectionReport, names: &[String], labels: &[&str]) {
    let chosen = sel.selected_candidate();
    let term_list = |terms: &[crate::loglinear::Term]| terms.iter().map(|t| t.label(names)).collect::<Vec<_>>().join(" ");
    let mut entries = vec![
        ("lower_p".to_string(), num(sel.lower_p)),
        ("exclude_saturated".to_string(), sel.exclude_saturated.to_string()),
        ("selected".to_string(), term_list(&chosen.terms)),
    ];
    for (label, m) in labels.iter().zip(&sel.missing) {
        entries.push((format!("missing_{label}"), num(*m)));
    }
    report.add_pairs("selection", entries);
    let mut rows = Vec::new();
    for c in &sel.candidates {
        if c.groups.is_empty() {
            rows.push(vec![term_list(&c.terms), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), "false".into()]);
            continue;
        }
        for g in &c.groups {
            rows.push(vec![
                term_list(&c.terms),
                g.label.clone(),
                num(g.pearson_chi2),
                g.dof.to_string(),
                num(g.p_value),
                num(g.aic),
                num(g.bic),
                g.missing.map(num).unwrap_or_default(),
                c.admissible.to_string(),
            ]);
        }
    }
    report.add_table(
        "candidates",
        &["terms", "group", "chi2", "dof", "p_value", "aic", "bic", "missing", "admissible"],
        rows,
    );
}

pub fn add_completion(report: &mut Report, c: &Completion) {
    report.add_pairs(
        "completed",
        [
            ("missing_exposed_raw", num(c.raw_missing[0])),
            ("missing_unexposed_raw", num(c.raw_missing[1])),
            ("missing_exposed", c.filled[0].to_string()),
            ("missing_unexposed", c.filled[1].to_string()),
            ("total_exposed", c.totals[0].to_string()),
            ("total_unexposed", c.totals[1].to_string()),
            ("ratio", num(c.ratio)),
        ],
    );
}

/// Names for `n` lists when none were given.
pub fn list_names(given: Option<&[String]>, n: usize) -> Vec<String> {
    given.map(<[String]>::to_vec).unwrap_or_else(|| default_names(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut r = Report::new();
        r.add_pairs("config", [("command", "fit"), ("note", "a, b = c")]);
        r.add_table("t", &["a", "b"], vec![vec![num(0.1), num(-1e-300)], vec![num(f64::NEG_INFINITY), "x,y".into()]]);
        let text = r.render();
        let back = Report::parse(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.get("config", "note"), Some("a, b = c"));
        let (_, rows) = back.table("t").unwrap();
        assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.1);
        assert_eq!(rows[1][0].parse::<f64>().unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn parse_rejects_stray_text() {
        let err = Report::parse("[a]\nk = v\n\nstray\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }
}
