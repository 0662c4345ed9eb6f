//! Evaluation and reporting: accuracy, F1, refusal rate, tools-per-video,
//! per-source breakdowns and Accuracy/F1 cell rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::GroundTruth;
use crate::inference::EnsembleVerdict;
use crate::selection::{weighted_f1, PredictionRecord};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no ground truth for sample {0}")]
    MissingTruth(String),
    #[error("no verdicts to evaluate")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const OVERALL: &str = "overall";

/// Aggregated metrics for one dataset (source) or the overall pool.
///
/// `confusion` rows are ground truth (real, ai), columns are predictions
/// (real, ai); `refusal_rate` counts refused LVLM detection calls over all
/// detection calls, not videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub n_real: usize,
    pub n_ai: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub refusal_rate: f64,
    pub mean_tools_per_video: f64,
    pub confusion: [[u64; 2]; 2],
    pub runs: usize,
}

impl EvalReport {
    /// Table-cell rendering: percentages with two decimals.
    pub fn acc_f1_cell(&self) -> String {
        format_acc_f1_cell(self.accuracy, self.f1)
    }
}

pub fn format_acc_f1_cell(accuracy: f64, f1: f64) -> String {
    format!("{:.2}/{:.2}", accuracy * 100.0, f1 * 100.0)
}

/// Evaluate one run of verdicts against ground truth, grouped by source plus
/// an `overall` report (always last).
pub fn evaluate(
    verdicts: &[EnsembleVerdict],
    truths: &BTreeMap<String, GroundTruth>,
) -> Result<Vec<EvalReport>, MetricsError> {
    if verdicts.is_empty() {
        return Err(MetricsError::Empty);
    }
    for v in verdicts {
        if !truths.contains_key(&v.sample_id) {
            return Err(MetricsError::MissingTruth(v.sample_id.clone()));
        }
    }

    let mut groups: BTreeMap<String, Vec<&EnsembleVerdict>> = BTreeMap::new();
    for v in verdicts {
        groups.entry(v.source.clone()).or_default().push(v);
    }

    let mut reports = Vec::new();
    for (source, group) in &groups {
        reports.push(report_for(source, group, truths)?);
    }
    let all: Vec<&EnsembleVerdict> = verdicts.iter().collect();
    reports.push(report_for(OVERALL, &all, truths)?);
    Ok(reports)
}

fn report_for(
    dataset: &str,
    verdicts: &[&EnsembleVerdict],
    truths: &BTreeMap<String, GroundTruth>,
) -> Result<EvalReport, MetricsError> {
    let mut confusion = [[0u64; 2]; 2];
    let mut records = Vec::with_capacity(verdicts.len());
    let mut refused_calls = 0usize;
    let mut total_calls = 0usize;
    let mut total_tools = 0usize;

    let idx = |g: GroundTruth| match g {
        GroundTruth::Real => 0usize,
        GroundTruth::Ai => 1usize,
    };

    for v in verdicts {
        let truth = truths[&v.sample_id];
        confusion[idx(truth)][idx(v.final_label)] += 1;
        records.push(PredictionRecord {
            sample_id: v.sample_id.clone(),
            truth,
            predicted: v.final_label,
            confidence: 1.0,
        });
        total_calls += v.per_tool.len();
        refused_calls += v.per_tool.iter().filter(|d| d.refused).count();
        total_tools += v.tools_used.len();
    }

    let n = verdicts.len();
    let n_real = (confusion[0][0] + confusion[0][1]) as usize;
    let n_ai = (confusion[1][0] + confusion[1][1]) as usize;
    let accuracy = (confusion[0][0] + confusion[1][1]) as f64 / n as f64;
    let (_, _, f1) = weighted_f1(&records).map_err(|_| MetricsError::Empty)?;
    Ok(EvalReport {
        dataset: dataset.to_string(),
        n_real,
        n_ai,
        accuracy,
        f1,
        refusal_rate: if total_calls == 0 { 0.0 } else { refused_calls as f64 / total_calls as f64 },
        mean_tools_per_video: total_tools as f64 / n as f64,
        confusion,
        runs: 1,
    })
}

/// Evaluate several runs and average the rates; confusion counts are summed
/// and `runs` records the number of runs.
pub fn evaluate_runs(
    runs: &[Vec<EnsembleVerdict>],
    truths: &BTreeMap<String, GroundTruth>,
) -> Result<Vec<EvalReport>, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut merged: BTreeMap<String, EvalReport> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for run in runs {
        for report in evaluate(run, truths)? {
            match merged.get_mut(&report.dataset) {
                None => {
                    order.push(report.dataset.clone());
                    merged.insert(report.dataset.clone(), report);
                }
                Some(acc) => {
                    acc.accuracy += report.accuracy;
                    acc.f1 += report.f1;
                    acc.refusal_rate += report.refusal_rate;
                    acc.mean_tools_per_video += report.mean_tools_per_video;
                    for i in 0..2 {
                        for j in 0..2 {
                            acc.confusion[i][j] += report.confusion[i][j];
                        }
                    }
                    acc.runs += 1;
                }
            }
        }
    }
    let n = runs.len() as f64;
    let mut reports: Vec<EvalReport> = order.into_iter().map(|k| merged.remove(&k).unwrap()).collect();
    for r in &mut reports {
        r.accuracy /= n;
        r.f1 /= n;
        r.refusal_rate /= n;
        r.mean_tools_per_video /= n;
    }
    // Keep overall last.
    reports.sort_by_key(|r| r.dataset == OVERALL);
    Ok(reports)
}

/// Plain-text table with one Accuracy/F1 cell per dataset.
pub fn render_report_text(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>6} {:>6} {:>14} {:>9} {:>12} {:>5}",
        "dataset", "n_real", "n_ai", "acc/f1", "refusal%", "tools/video", "runs"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>6} {:>14} {:>9.2} {:>12.2} {:>5}",
            r.dataset,
            r.n_real,
            r.n_ai,
            r.acc_f1_cell(),
            r.refusal_rate * 100.0,
            r.mean_tools_per_video,
            r.runs
        );
    }
    out
}

pub fn render_report_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(
        "dataset,n_real,n_ai,accuracy,f1,refusal_rate,mean_tools_per_video,tn,fp,fn,tp,runs\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.n_real,
            r.n_ai,
            r.accuracy,
            r.f1,
            r.refusal_rate,
            r.mean_tools_per_video,
            r.confusion[0][0],
            r.confusion[0][1],
            r.confusion[1][0],
            r.confusion[1][1],
            r.runs
        );
    }
    out
}

/// Write `eval_report.{json,csv,txt}` into a directory.
pub fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<(), MetricsError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("eval_report.json"),
        serde_json::to_string_pretty(reports).expect("reports serialize"),
    )?;
    std::fs::write(dir.join("eval_report.csv"), render_report_csv(reports))?;
    std::fs::write(dir.join("eval_report.txt"), render_report_text(reports))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::Detection;

    fn verdict(id: &str, source: &str, label: GroundTruth, refusals: usize, calls: usize) -> EnsembleVerdict {
        let per_tool: Vec<Detection> = (0..calls)
            .map(|i| Detection {
                sample_id: id.into(),
                tool: format!("t{i}"),
                is_ai_generated: Some(label == GroundTruth::Ai),
                confidence: 1.0,
                field_analyses: BTreeMap::new(),
                refused: i < refusals,
                raw_text: String::new(),
            })
            .collect();
        EnsembleVerdict {
            sample_id: id.into(),
            source: source.into(),
            final_label: label,
            confidence: 1.0,
            tools_used: (0..calls).map(|i| format!("t{i}")).collect(),
            all_refused: false,
            degraded: false,
            per_tool,
        }
    }

    fn truths(verdicts: &[(&str, GroundTruth)]) -> BTreeMap<String, GroundTruth> {
        verdicts.iter().map(|(id, g)| (id.to_string(), *g)).collect()
    }

    #[test]
    fn all_correct_is_perfect() {
        let vs = vec![
            verdict("a", "kling", GroundTruth::Ai, 0, 2),
            verdict("b", "kling", GroundTruth::Real, 0, 2),
        ];
        let t = truths(&[("a", GroundTruth::Ai), ("b", GroundTruth::Real)]);
        let reports = evaluate(&vs, &t).unwrap();
        let overall = reports.last().unwrap();
        assert_eq!(overall.dataset, OVERALL);
        assert_eq!(overall.accuracy, 1.0);
        assert_eq!(overall.f1, 1.0);
        assert_eq!(overall.confusion, [[1, 0], [0, 1]]);
    }

    #[test]
    fn worked_confusion_example() {
        // real->real x3, real->ai x1, ai->ai x4, ai->real x2.
        let mut vs = Vec::new();
        let mut t = BTreeMap::new();
        let mut push = |id: String, truth: GroundTruth, pred: GroundTruth| {
            let mut v = verdict(&id, "src", pred, 0, 1);
            v.final_label = pred;
            vs.push(v);
            t.insert(id, truth);
        };
        for i in 0..3 {
            push(format!("rr{i}"), GroundTruth::Real, GroundTruth::Real);
        }
        push("ra0".into(), GroundTruth::Real, GroundTruth::Ai);
        for i in 0..4 {
            push(format!("aa{i}"), GroundTruth::Ai, GroundTruth::Ai);
        }
        for i in 0..2 {
            push(format!("ar{i}"), GroundTruth::Ai, GroundTruth::Real);
        }
        let report = evaluate(&vs, &t).unwrap().pop().unwrap();
        assert!((report.accuracy - 0.7).abs() < 1e-12);
        // P = 3/5, R = 3/4, F1 = 2PR/(P+R) = 2/3.
        assert!((report.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.confusion, [[3, 1], [2, 4]]);
    }

    #[test]
    fn refusal_rate_counts_calls_not_videos() {
        let vs = vec![
            verdict("a", "src", GroundTruth::Ai, 1, 5),
            verdict("b", "src", GroundTruth::Ai, 0, 5),
        ];
        let t = truths(&[("a", GroundTruth::Ai), ("b", GroundTruth::Ai)]);
        let report = evaluate(&vs, &t).unwrap().pop().unwrap();
        assert!((report.refusal_rate - 0.1).abs() < 1e-12);
        assert_eq!(report.mean_tools_per_video, 5.0);
    }

    #[test]
    fn missing_truth_is_an_error() {
        let vs = vec![verdict("a", "src", GroundTruth::Ai, 0, 1)];
        let t = BTreeMap::new();
        assert!(matches!(evaluate(&vs, &t), Err(MetricsError::MissingTruth(_))));
    }

    #[test]
    fn evaluate_is_permutation_invariant() {
        let mut vs = vec![
            verdict("a", "x", GroundTruth::Ai, 0, 1),
            verdict("b", "y", GroundTruth::Real, 1, 1),
            verdict("c", "x", GroundTruth::Real, 0, 2),
        ];
        let t = truths(&[
            ("a", GroundTruth::Ai),
            ("b", GroundTruth::Ai),
            ("c", GroundTruth::Real),
        ]);
        let before = evaluate(&vs, &t).unwrap();
        vs.reverse();
        let after = evaluate(&vs, &t).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn cell_format_matches_table_style() {
        assert_eq!(format_acc_f1_cell(0.93, 0.9346), "93.00/93.46");
        assert_eq!(format_acc_f1_cell(1.0, 1.0), "100.00/100.00");
    }

    #[test]
    fn empty_reports_render_header_only() {
        let text = render_report_text(&[]);
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("dataset"));
    }

    #[test]
    fn multi_run_averaging() {
        let run1 = vec![verdict("a", "src", GroundTruth::Ai, 0, 1)];
        let mut wrong = verdict("a", "src", GroundTruth::Real, 0, 1);
        wrong.final_label = GroundTruth::Real;
        let run2 = vec![wrong];
        let t = truths(&[("a", GroundTruth::Ai)]);
        let reports = evaluate_runs(&[run1, run2], &t).unwrap();
        let overall = reports.last().unwrap();
        assert_eq!(overall.runs, 2);
        assert!((overall.accuracy - 0.5).abs() < 1e-12);
        assert_eq!(overall.confusion[1][0] + overall.confusion[1][1], 2);
    }
}
