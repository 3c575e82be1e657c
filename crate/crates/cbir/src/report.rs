//! Evaluation runs and their plain-text / structured renderings.
//!
//! The CLI and the HTTP service both go through [`run_evaluation`], so the
//! two front ends produce the same report content for the same inputs.

use std::collections::BTreeMap;

use cbir_core::evaluation::{evaluate_technique_set, mean_of_summaries, EvaluationConfig};
use cbir_core::{
    mean_summary, optimize_per_class, ClassQuery, ClassSpec, CostMode, EvaluationError, EvaluationRow, FeatureIndex,
    MeanSummary, OptimizationOutcome, Technique, TechniqueSet, ThresholdConfig,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::WallClock;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to report")]
    Empty,
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "techniques")]
pub enum EvalMode {
    /// One table for the given technique set, combined.
    Techniques(TechniqueSet),
    /// One table per technique.
    Each,
    /// One table for all six techniques combined.
    Combined,
    /// Per-class best subsets plus the three-way comparison.
    Optimize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub cost: CostMode,
    pub cap: Option<usize>,
    /// Overrides the index's calibrated thresholds.
    pub thresholds: Option<ThresholdConfig>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let base = EvaluationConfig::default();
        Self {
            cost: base.cost,
            cap: base.cap,
            thresholds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub title: String,
    pub techniques: TechniqueSet,
    pub rows: Vec<EvaluationRow>,
    pub means: MeanSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationTable {
    pub outcomes: Vec<OptimizationOutcome>,
    pub means: MeanSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub individual: MeanSummary,
    pub combined: MeanSummary,
    pub optimized: MeanSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub mode: EvalMode,
    pub cost: CostMode,
    pub accuracy_cap: Option<usize>,
    pub thresholds: BTreeMap<Technique, f64>,
    pub queries: Vec<ClassQuery>,
    pub tables: Vec<Table>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimization: Option<OptimizationTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

fn set_title(ts: TechniqueSet) -> String {
    if ts == TechniqueSet::ALL {
        "Combined Approach".into()
    } else {
        ts.iter().map(Technique::title).collect::<Vec<_>>().join(" + ")
    }
}

struct Runner<'a> {
    ix: &'a FeatureIndex,
    classes: &'a [ClassSpec],
    queries: &'a [ClassQuery],
    thresholds: ThresholdConfig,
    config: EvaluationConfig,
}

// Under CostMode::ScanCount the rows carry scan counts, so the clock is unused.
impl Runner<'_> {
    fn table(&self, ts: TechniqueSet) -> Result<Table, ReportError> {
        let rows = evaluate_technique_set(
            self.ix,
            self.classes,
            self.queries,
            ts,
            &self.thresholds,
            &self.config,
            &WallClock::new(),
        )?;
        let means = mean_summary(&rows).map_err(|_| ReportError::Empty)?;
        Ok(Table {
            title: set_title(ts),
            techniques: ts,
            rows,
            means,
        })
    }

    fn optimize(&self) -> Result<OptimizationTable, ReportError> {
        let outcomes = optimize_per_class(
            self.ix,
            self.classes,
            self.queries,
            &self.thresholds,
            &self.config,
            &WallClock::new(),
        )?;
        let rows: Vec<_> = outcomes.iter().map(|o| o.row.clone()).collect();
        let means = mean_summary(&rows).map_err(|_| ReportError::Empty)?;
        Ok(OptimizationTable { outcomes, means })
    }
}

/// Evaluates `queries` against a labeled index in the requested mode.
pub fn run_evaluation(
    ix: &FeatureIndex,
    queries: &[ClassQuery],
    mode: EvalMode,
    settings: &EvalSettings,
) -> Result<Report, ReportError> {
    let classes = ClassSpec::from_index(ix)?;
    let runner = Runner {
        ix,
        classes: &classes,
        queries,
        thresholds: settings.thresholds.unwrap_or(*ix.thresholds()),
        config: EvaluationConfig {
            cap: settings.cap,
            cost: settings.cost,
        },
    };
    let mut tables = Vec::new();
    let mut optimization = None;
    let mut comparison = None;
    match mode {
        EvalMode::Techniques(ts) => tables.push(runner.table(ts)?),
        EvalMode::Combined => tables.push(runner.table(TechniqueSet::ALL)?),
        EvalMode::Each => {
            for t in Technique::ALL {
                tables.push(runner.table(TechniqueSet::single(t))?);
            }
        }
        EvalMode::Optimize => {
            let individual: Vec<MeanSummary> = Technique::ALL
                .into_iter()
                .map(|t| runner.table(TechniqueSet::single(t)).map(|tb| tb.means))
                .collect::<Result<_, _>>()?;
            let combined = runner.table(TechniqueSet::ALL)?.means;
            let opt = runner.optimize()?;
            comparison = Some(Comparison {
                individual: mean_of_summaries(&individual)?,
                combined,
                optimized: opt.means,
            });
            optimization = Some(opt);
        }
    }
    Ok(Report {
        mode,
        cost: settings.cost,
        accuracy_cap: settings.cap,
        thresholds: Technique::ALL
            .into_iter()
            .map(|t| (t, runner.thresholds.get(t)))
            .collect(),
        queries: queries.to_vec(),
        tables,
        optimization,
        comparison,
    })
}

fn time_header(cost: CostMode) -> &'static str {
    match cost {
        CostMode::WallClock => "Time (sec)",
        CostMode::ScanCount => "Cost (scans)",
    }
}

fn format_time(t: f64, cost: CostMode) -> String {
    match cost {
        CostMode::WallClock => format!("{t:.2}"),
        CostMode::ScanCount => format!("{t:.1}"),
    }
}

fn grid(header: &[&str], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.zip(&widths).enumerate() {
            if i + 1 == widths.len() {
                s.push_str(cell);
            } else {
                s.push_str(&format!("{cell:<w$}  ", w = *w));
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(&mut header.iter().copied());
    for row in body {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
    }
    out
}

fn means_line(m: &MeanSummary, cost: CostMode) -> String {
    let unit = match cost {
        CostMode::WallClock => " sec",
        CostMode::ScanCount => " scans",
    };
    format!(
        "Mean Time: {}{unit}   Mean Accuracy: {:.2}%   Mean RF: {:.3}\n",
        format_time(m.time, cost),
        m.accuracy,
        m.rf
    )
}

/// Five-column table with a means footer.
pub fn render_rows(title: &str, rows: &[EvaluationRow], cost: CostMode) -> Result<String, ReportError> {
    let means = mean_summary(rows).map_err(|_| ReportError::Empty)?;
    let header = [
        "Image Class",
        "Images retrieved",
        time_header(cost),
        "Relevant Images",
        "Accuracy (%)",
        "RF",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.class_label.clone(),
                r.images_retrieved.to_string(),
                format_time(r.time, cost),
                r.relevant.to_string(),
                format!("{:.2}", r.accuracy),
                format!("{:.2}", r.rf),
            ]
        })
        .collect();
    Ok(format!(
        "Results for {title}\n{}{}",
        grid(&header, &body),
        means_line(&means, cost)
    ))
}

pub fn render_outcomes(outcomes: &[OptimizationOutcome], cost: CostMode) -> Result<String, ReportError> {
    let rows: Vec<_> = outcomes.iter().map(|o| o.row.clone()).collect();
    let means = mean_summary(&rows).map_err(|_| ReportError::Empty)?;
    let header = [
        "Image Class",
        "Techniques",
        "Images retrieved",
        time_header(cost),
        "Relevant Images",
        "Accuracy (%)",
        "RF",
    ];
    let body: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| {
            vec![
                o.class_label.clone(),
                o.chosen_subset
                    .iter()
                    .map(Technique::short_name)
                    .collect::<Vec<_>>()
                    .join("+"),
                o.row.images_retrieved.to_string(),
                format_time(o.row.time, cost),
                o.row.relevant.to_string(),
                format!("{:.2}", o.row.accuracy),
                format!("{:.2}", o.row.rf),
            ]
        })
        .collect();
    Ok(format!(
        "Results obtained by Optimization\n{}{}",
        grid(&header, &body),
        means_line(&means, cost)
    ))
}

/// Individual vs combined vs optimized means, one parameter per line.
pub fn render_comparison(c: &Comparison, cost: CostMode) -> String {
    let header = [
        "Parameters",
        "Individual Approach",
        "Combined Approach",
        "Optimized Approach",
    ];
    let time_label = match cost {
        CostMode::WallClock => "Mean Time (sec)",
        CostMode::ScanCount => "Mean Cost (scans)",
    };
    let all = [c.individual, c.combined, c.optimized];
    let body = vec![
        std::iter::once(time_label.to_string())
            .chain(all.iter().map(|m| format_time(m.time, cost)))
            .collect(),
        std::iter::once("Mean Accuracy (%)".to_string())
            .chain(all.iter().map(|m| format!("{:.2}", m.accuracy)))
            .collect(),
        std::iter::once("Mean RF".to_string())
            .chain(all.iter().map(|m| format!("{:.3}", m.rf)))
            .collect(),
    ];
    format!(
        "Comparison between the individual, combined and optimized approaches\n{}",
        grid(&header, &body)
    )
}

pub fn render_text(report: &Report) -> Result<String, ReportError> {
    let mut parts = Vec::new();
    for t in &report.tables {
        parts.push(render_rows(&t.title, &t.rows, report.cost)?);
    }
    if let Some(opt) = &report.optimization {
        parts.push(render_outcomes(&opt.outcomes, report.cost)?);
    }
    if let Some(c) = &report.comparison {
        parts.push(render_comparison(c, report.cost));
    }
    if parts.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(parts.join("\n"))
}

pub fn render_json(report: &Report) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}
