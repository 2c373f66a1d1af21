//! Structured results and their table rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use stratalloc::allocator::AllocationDiff;
use stratalloc::asymptotics::SimResult;
use stratalloc::estimators::{vhat, EstimatorStats};
use stratalloc::io::parse_design;
use stratalloc::{Constraint, MomentSource, ModelSpec, SolutionReport, SurveyDesign, VarCoefficient};

use crate::error::CliResult;

/// Where the numbers in a report came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub design: String,
    pub strata: usize,
    pub characteristics: usize,
    pub population: usize,
    pub constraint: Constraint,
    pub overhead: f64,
    pub moment_sources: Vec<MomentSource>,
    pub var_coefficient: VarCoefficient,
}

impl Provenance {
    pub fn new(label: &str, design: &SurveyDesign, coefficient: VarCoefficient) -> Self {
        Self {
            tool: tool(),
            design: label.to_string(),
            strata: design.num_strata(),
            characteristics: design.characteristics(),
            population: design.population_size(),
            constraint: design.constraint(),
            overhead: design.overhead(),
            moment_sources: design.moment_sources(),
            var_coefficient: coefficient,
        }
    }

    pub fn banner(&self) -> String {
        let constraint = match self.constraint {
            Constraint::TotalSize { n } => format!("n = {n}"),
            Constraint::Cost { budget } => format!("budget = {budget}, overhead = {}", self.overhead),
        };
        let sources = if self.moment_sources.is_empty() {
            "none".to_string()
        } else {
            self.moment_sources.iter().map(|s| source_label(*s)).collect::<Vec<_>>().join(", ")
        };
        let coefficient = match self.var_coefficient {
            VarCoefficient::AsPaper => "as-paper",
            VarCoefficient::Squared => "squared",
        };
        format!(
            "# {}\n# design: {} ({} strata, {} characteristics, N = {})\n# constraint: {constraint} | fourth moments: {sources} | variance coefficient: {coefficient}\n",
            self.tool, self.design, self.strata, self.characteristics, self.population
        )
    }
}

fn tool() -> String {
    format!("stratalloc {}", env!("CARGO_PKG_VERSION"))
}

fn source_label(s: MomentSource) -> &'static str {
    match s {
        MomentSource::Raw => "raw unit data",
        MomentSource::Proxy => "Gaussian proxy",
        MomentSource::Supplied => "supplied",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub name: String,
    pub spec: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<SolutionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diff: Option<AllocationDiff>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ModelOutcome {
    pub fn converged(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.converged)
    }
}

/// Everything `allocate` produces; `report` renders it again from the
/// embedded design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub provenance: Provenance,
    /// The design in CSV form, fourth moments included.
    pub design_csv: String,
    pub models: Vec<ModelOutcome>,
}

impl RunOutput {
    pub fn design(&self) -> CliResult<SurveyDesign> {
        Ok(parse_design(
            &self.design_csv,
            self.provenance.constraint,
            self.provenance.overhead,
        )?)
    }
}

/// One line of the comparison table, with V̂ar recomputed from the design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub name: String,
    pub allocation: Option<Vec<usize>>,
    pub vhat: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub max_abs_delta: Option<u64>,
    pub status: String,
}

pub fn table_rows(run: &RunOutput) -> CliResult<Vec<TableRow>> {
    let design = run.design()?;
    run.models
        .iter()
        .map(|m| {
            let (allocation, values, objective, status) = match &m.report {
                Some(r) => {
                    let v = vhat(&design, &r.allocation.to_real())?;
                    let status = if r.converged { "ok" } else { "not converged" };
                    (Some(r.allocation.as_slice().to_vec()), Some(v), Some(r.objective), status.to_string())
                }
                None => (None, None, None, format!("error: {}", m.error.as_deref().unwrap_or("unknown"))),
            };
            Ok(TableRow {
                name: m.name.clone(),
                allocation,
                vhat: values,
                objective,
                max_abs_delta: m.diff.as_ref().map(|d| d.max_abs_delta),
                status,
            })
        })
        .collect()
}

/// Renders cells into right-aligned columns, the first column left-aligned.
fn columns(rows: &[Vec<String>]) -> String {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..width)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c == 0 {
                let _ = write!(line, "{cell:<w$}", w = widths[c]);
            } else {
                let _ = write!(line, "  {cell:>w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn dec3(v: f64) -> String {
    format!("{v:.3}")
}

pub fn render_table(run: &RunOutput) -> CliResult<String> {
    let rows = table_rows(run)?;
    let h = run.provenance.strata;
    let g = run.provenance.characteristics;
    let mut cells = Vec::with_capacity(rows.len() + 1);
    let mut header = vec!["model".to_string()];
    header.extend((1..=h).map(|i| format!("n_{i}")));
    header.push("total".into());
    header.extend((1..=g).map(|j| format!("Var_{j}")));
    header.extend(["objective".into(), "max|Δ|".into(), "status".into()]);
    cells.push(header);
    for r in &rows {
        let mut line = vec![r.name.clone()];
        match &r.allocation {
            Some(a) => {
                line.extend(a.iter().map(usize::to_string));
                line.push(a.iter().sum::<usize>().to_string());
            }
            None => line.extend(std::iter::repeat_n("-".to_string(), h + 1)),
        }
        match &r.vhat {
            Some(v) => line.extend(v.iter().copied().map(dec3)),
            None => line.extend(std::iter::repeat_n("-".to_string(), g)),
        }
        line.push(r.objective.map_or("-".into(), dec3));
        line.push(r.max_abs_delta.map_or("-".into(), |d| d.to_string()));
        line.push(r.status.clone());
        cells.push(line);
    }
    Ok(format!("{}{}", run.provenance.banner(), columns(&cells)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateOutput {
    pub provenance: Provenance,
    pub allocation: Vec<usize>,
    pub stats: EstimatorStats,
}

pub fn render_estimate(out: &EstimateOutput) -> String {
    let s = &out.stats;
    let mut cells = vec![vec![
        "characteristic".to_string(),
        "Var".into(),
        "E[Var]".into(),
        "Var[Var]".into(),
    ]];
    for j in 0..s.vhat.len() {
        cells.push(vec![
            (j + 1).to_string(),
            dec3(s.vhat[j]),
            dec3(s.ehat[j]),
            s.vvar.as_ref().map_or("-".into(), |v| dec3(v[j])),
        ]);
    }
    let mut text = out.provenance.banner();
    let _ = writeln!(text, "# allocation: {:?}", out.allocation);
    text.push_str(&columns(&cells));
    if let Some(cov) = &s.vcov {
        text.push_str("\nCov of the variance vector\n");
        let rows: Vec<Vec<String>> = cov
            .iter()
            .enumerate()
            .map(|(j, r)| std::iter::once((j + 1).to_string()).chain(r.iter().copied().map(dec3)).collect())
            .collect();
        text.push_str(&columns(&rows));
    }
    text
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumSimulation {
    pub stratum: String,
    pub seed: u64,
    pub result: SimResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateOutput {
    pub tool: String,
    pub source: String,
    pub strata: Vec<StratumSimulation>,
}

impl SimulateOutput {
    pub fn new(source: String, strata: Vec<StratumSimulation>) -> Self {
        Self {
            tool: tool(),
            source,
            strata,
        }
    }
}

/// Acceptance level for the Mardia bands in the table.
const MARDIA_LEVEL: f64 = 0.999;

pub fn render_simulation(out: &SimulateOutput) -> String {
    let mut text = format!("# {}\n# population: {}\n", out.tool, out.source);
    for s in &out.strata {
        let r = &s.result;
        let _ = writeln!(
            text,
            "\nstratum {}: N = {}, n = {}, reps = {}, seed = {}",
            s.stratum, r.population_size, r.n, r.reps, s.seed
        );
        let mut cells = vec![vec![
            "characteristic".to_string(),
            "E[rho]".into(),
            "mean rho".into(),
            "z".into(),
            "mean |s2 - rho|".into(),
            "hajek ratio".into(),
        ]];
        for j in 0..r.theoretical_mean.len() {
            let z = (r.empirical_mean[j] - r.theoretical_mean[j]) / r.standard_errors[j];
            cells.push(vec![
                (j + 1).to_string(),
                dec3(r.theoretical_mean[j]),
                dec3(r.empirical_mean[j]),
                if z.is_finite() { dec3(z) } else { "-".into() },
                dec3(r.mean_abs_gap[j]),
                r.hajek.as_ref().map_or("-".into(), |h| format!("{:.6}", h[j].ratio)),
            ]);
        }
        text.push_str(&columns(&cells));
        let _ = writeln!(text, "covariance relative error: {:.4}", r.cov_relative_error());
        match &r.mardia {
            Some(m) => {
                let _ = writeln!(
                    text,
                    "mardia skewness: {:.4} (statistic {:.3}, critical {:.3}, df {})",
                    m.skewness,
                    m.skew_statistic,
                    m.skew_critical(MARDIA_LEVEL),
                    m.df
                );
                let _ = writeln!(
                    text,
                    "mardia kurtosis: {:.4} (z {:.3}, critical ±{:.3})",
                    m.kurtosis,
                    m.kurt_statistic,
                    m.kurt_critical(MARDIA_LEVEL)
                );
            }
            None => text.push_str("mardia: undefined (singular covariance)\n"),
        }
    }
    text
}
