//! Retrieval, classification and reporting over a frozen model.

mod classify;
mod retrieval;

pub use classify::{
    accuracy_report, argmax, fit_linear_head, linear_probe, linear_probe_embeddings, render_prompt,
    tail_head_breakdown, zero_shot_classify, zero_shot_predict, Breakdown, ClassificationReport, LinearHead,
    ProbeConfig, DEFAULT_PROMPT_TEMPLATE,
};
pub use retrieval::{
    average_precision, cosine, mean_average_precision, per_class_recall_at_k, rank_by_scores, recall_at_k, retrieve,
    retrieve_embeddings, view_id, MapSummary, Query, RetrievalMode, RetrievalResult, RANKING_DEPTH,
};

use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub n_queries: usize,
    pub config_digest: String,
}

/// One JSON object per line.
pub fn write_reports<W: Write>(reports: &[EvalReport], mut out: W) -> std::io::Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// `class_id,class_name,count,value` rows; undefined values are left empty.
pub fn write_per_class_table<W: Write>(
    class_names: &[String],
    counts: &[usize],
    values: &[Option<f64>],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "class_id,class_name,count,value")?;
    for (c, ((name, n), v)) in class_names.iter().zip(counts).zip(values).enumerate() {
        let v = v.map(|x| format!("{x:?}")).unwrap_or_default();
        writeln!(out, "{c},{},{n},{v}", name.replace(',', " "))?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_lines() {
        let r = EvalReport {
            task: "retrieval-t2i".into(),
            metric: "recall@5".into(),
            value: 0.25,
            n_queries: 8,
            config_digest: "ab".into(),
        };
        let mut buf = Vec::new();
        write_reports(&[r.clone(), r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back: EvalReport = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back.value, 0.25);
    }

    #[test]
    fn table_rows() {
        let mut buf = Vec::new();
        write_per_class_table(&["a".into(), "b,c".into()], &[3, 0], &[Some(0.5), None], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "class_id,class_name,count,value\n0,a,3,0.5\n1,b c,0,\n"
        );
    }
}
