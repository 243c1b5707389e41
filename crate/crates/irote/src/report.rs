//! Plain-text tables and structured exports.

use irote_core::orchestrator::RunLog;
use irote_core::trait_eval::{AdministerReport, DimensionScore};
use serde::{Deserialize, Serialize};

/// Questionnaire results without the per-item responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationExport {
    pub questionnaire_id: String,
    pub system_id: String,
    pub reflection: String,
    pub dimensions: Vec<DimensionScore>,
    pub unparsed_items: usize,
}

impl From<&AdministerReport> for EvaluationExport {
    fn from(r: &AdministerReport) -> Self {
        Self {
            questionnaire_id: r.questionnaire_id.clone(),
            system_id: r.system_id.clone(),
            reflection: r.reflection.clone(),
            dimensions: r.dimensions.clone(),
            unparsed_items: r.items.iter().filter(|i| i.score.unparsed()).count(),
        }
    }
}

/// Columns padded to their widest cell; numbers right-aligned.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut out = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            if i == 0 {
                out.push_str(&format!("{cell:<w$}"));
            } else {
                out.push_str(&format!("{cell:>w$}"));
            }
        }
        out.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

pub fn dimension_table(dims: &[DimensionScore]) -> String {
    let rows: Vec<Vec<String>> = dims
        .iter()
        .map(|d| vec![d.dimension_id.clone(), d.n.to_string(), format!("{:.2}", d.mean), format!("{:.2}", d.sd)])
        .collect();
    table(&["dimension", "n", "mean", "sd"], &rows)
}

pub fn run_table(log: &RunLog) -> String {
    let mut rows = Vec::new();
    if let Some(init) = &log.initial {
        let best = init.working_set.first().map_or(f64::NAN, |s| s.total);
        rows.push(vec![
            "init".into(),
            init.candidates.len().to_string(),
            "-".into(),
            format!("{best:.6}"),
            "-".into(),
            log.telemetry.initial.backend_calls.to_string(),
        ]);
    }
    for (i, it) in log.iterations.iter().enumerate() {
        let calls = log.telemetry.iterations.get(i).map_or(0, |p| p.backend_calls);
        rows.push(vec![
            it.iteration.to_string(),
            it.compactness.pool.len().to_string(),
            it.compact().word_count().to_string(),
            format!("{:.6}", it.selection().total),
            if it.carried { "yes".into() } else { "no".into() },
            calls.to_string(),
        ]);
    }
    table(&["iteration", "pool", "compact words", "selected R2", "carried", "calls"], &rows)
}

pub fn run_summary(log: &RunLog) -> String {
    let mut out = format!(
        "system {}  dimension {}  backend {}  config {}\n\n",
        log.system_id,
        log.dimension_id,
        log.backend_id,
        &log.config_digest[..12]
    );
    out.push_str(&run_table(log));
    if let Some(best) = &log.best {
        out.push_str(&format!("\nbest R2 {:.6}\n{}\n", best.total, best.reflection.render()));
    }
    if !log.completed {
        out.push_str(&format!(
            "\nincomplete: {} of {} iterations{}\n",
            log.iterations.len(),
            log.config.iterations,
            log.aborted.as_ref().map(|e| format!(" (aborted: {e})")).unwrap_or_default()
        ));
    }
    out
}
