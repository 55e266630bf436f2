use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// One line of an effectiveness/efficiency report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    pub model_tag: String,
    pub n: usize,
    #[serde(rename = "ndcg@1")]
    pub ndcg_1: f64,
    #[serde(rename = "ndcg@5")]
    pub ndcg_5: f64,
    #[serde(rename = "ndcg@10")]
    pub ndcg_10: f64,
    #[serde(rename = "acc@1")]
    pub acc_1: Option<f64>,
    pub sec_per_q: Option<f64>,
    pub calls_per_q: Option<f64>,
    pub speedup_vs_ref: Option<f64>,
}

pub fn write_report_csv<W: Write>(out: W, rows: &[ReportRow]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

/// nDCG values as percentages, as in the usual results tables.
pub fn render_markdown(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    s.push_str("| Strategy | Model | n | nDCG@1 | nDCG@5 | nDCG@10 | Acc@1 | Sec/Q | Calls/Q | Speedup |\n");
    s.push_str("|---|---|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.2} | {:.2} | {:.2} | {} | {} | {} | {} |",
            r.strategy,
            r.model_tag,
            r.n,
            100.0 * r.ndcg_1,
            100.0 * r.ndcg_5,
            100.0 * r.ndcg_10,
            cell(r.acc_1.map(|a| 100.0 * a), 2),
            cell(r.sec_per_q, 4),
            cell(r.calls_per_q, 1),
            cell(r.speedup_vs_ref, 1),
        );
    }
    s
}
