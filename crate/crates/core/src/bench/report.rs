//! Deterministic text rendering of run records.

use serde::{Deserialize, Serialize};

use super::run::{primary_metric, RunRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
    /// `(time, metric)` pairs per sketch kind, for external plotting.
    Plotdata,
}

fn check_same_task(records: &[RunRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Config("no records to report".into()));
    }
    let task = &records[0].config.task;
    for r in records.iter().skip(1) {
        if &r.config.task != task {
            return Err(Error::Config(
                "mixed-task records cannot be reported together".into(),
            ));
        }
    }
    Ok(())
}

fn s_column(s: usize) -> String {
    if s == 0 {
        "-".into()
    } else {
        format!("{s}")
    }
}

/// Render the given records in one of the three formats. Output depends only
/// on record contents, so identical records produce identical reports.
pub fn render_report(records: &[RunRecord], format: ReportFormat) -> Result<String> {
    check_same_task(records)?;
    let metric = primary_metric(&records[0].config.task);
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(
                "record,entry_index,kind,s,p_or_m,metric,mean,sd,fit_seconds_mean,fit_seconds_sd\n",
            );
            for record in records {
                for agg in &record.aggregates {
                    for (key, mean) in &agg.metric_means {
                        out.push_str(&format!(
                            "{},{},{},{},{},{},{},{},{},{}\n",
                            record.config.name,
                            agg.entry_index,
                            agg.kind,
                            s_column(agg.s),
                            agg.p_or_m,
                            key,
                            mean,
                            agg.metric_sds[key],
                            agg.fit_seconds_mean,
                            agg.fit_seconds_sd
                        ));
                    }
                }
            }
        }
        ReportFormat::Markdown => {
            for record in records {
                out.push_str(&format!("### {}\n\n", record.config.name));
                out.push_str(&format!(
                    "| kind | s | p/m | {metric} (mean±sd) | fit time s (mean±sd) |\n"
                ));
                out.push_str("|---|---|---|---|---|\n");
                for agg in &record.aggregates {
                    let (m, sd) = match agg.metric_means.get(metric) {
                        Some(m) => (*m, agg.metric_sds[metric]),
                        None => (f64::NAN, f64::NAN),
                    };
                    out.push_str(&format!(
                        "| {} | {} | {} | {:.6}±{:.6} | {:.4}±{:.4} |\n",
                        agg.kind,
                        s_column(agg.s),
                        agg.p_or_m,
                        m,
                        sd,
                        agg.fit_seconds_mean,
                        agg.fit_seconds_sd
                    ));
                }
                out.push('\n');
            }
        }
        ReportFormat::Plotdata => {
            out.push_str(&format!(
                "# record\tkind\ts\tp_or_m\tfit_seconds\t{metric}\n"
            ));
            for record in records {
                for agg in &record.aggregates {
                    let m = agg.metric_means.get(metric).copied().unwrap_or(f64::NAN);
                    out.push_str(&format!(
                        "{}\t{}\t{}\t{}\t{}\t{}\n",
                        record.config.name,
                        agg.kind,
                        s_column(agg.s),
                        agg.p_or_m,
                        agg.fit_seconds_mean,
                        m
                    ));
                }
            }
        }
    }
    Ok(out)
}
