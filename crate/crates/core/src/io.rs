//! CSV encoding of stratum summaries.
//!
//! Header: `stratum,N_h,c_h,s2_1..s2_G` followed by optional upper-triangle
//! covariance columns `cov_k_l` (k < l) and optional fourth-moment columns
//! `m4_k_l` (k ≤ l). Indices are 1-based. A blank `m4` cell leaves that
//! stratum's fourth moments unset.

use std::collections::HashMap;
use std::io::Read;

use nalgebra::DMatrix;

use crate::design::{Constraint, MomentSource, StratumSummary, SurveyDesign};
use crate::error::{Error, Result};

/// Parses strata from CSV text and validates them into a design.
pub fn parse_design(text: &str, constraint: Constraint, overhead: f64) -> Result<SurveyDesign> {
    let strata = parse_strata(text.as_bytes())?;
    SurveyDesign::with_overhead(strata, overhead, constraint)
}

pub fn parse_strata<R: Read>(reader: R) -> Result<Vec<StratumSummary>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let layout = Layout::from_header(&header)?;

    let mut out: Vec<StratumSummary> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let perr = |reason: String| Error::Parse { line, reason };
        let field = |i: usize| record.get(i).unwrap_or("");
        let number = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| perr(format!("column `{}`: `{}` is not a finite number", header[i], field(i))))
        };

        let id = field(layout.stratum).to_string();
        if id.is_empty() {
            return Err(perr("empty stratum id".into()));
        }
        if out.iter().any(|s| s.id() == id) {
            return Err(perr(format!("duplicate stratum id `{id}`")));
        }
        let size: usize = field(layout.size)
            .parse()
            .map_err(|_| perr(format!("N_h `{}` is not a positive integer", field(layout.size))))?;
        let cost = number(layout.cost)?;

        let g = layout.s2.len();
        let mut cov = DMatrix::zeros(g, g);
        for (j, &col) in layout.s2.iter().enumerate() {
            let v = number(col)?;
            if v < 0.0 {
                return Err(perr(format!("stratum `{id}`: s2_{} = {v} is negative", j + 1)));
            }
            cov[(j, j)] = v;
        }
        for (&(k, l), &col) in &layout.cov {
            let v = number(col)?;
            cov[(k, l)] = v;
            cov[(l, k)] = v;
        }

        let mut stratum = StratumSummary::new(id.clone(), size, cost, cov).map_err(|e| perr(e.to_string()))?;
        if !layout.m4.is_empty() {
            let blank = layout.m4.values().all(|&c| field(c).is_empty());
            if !blank {
                let mut m4 = DMatrix::zeros(g, g);
                for (&(k, l), &col) in &layout.m4 {
                    let v = number(col)?;
                    m4[(k, l)] = v;
                    m4[(l, k)] = v;
                }
                stratum = stratum
                    .with_m4(m4, MomentSource::Supplied)
                    .map_err(|e| perr(e.to_string()))?;
            }
        }
        out.push(stratum);
    }
    if out.is_empty() {
        return Err(Error::EmptyDesign);
    }
    Ok(out)
}

struct Layout {
    stratum: usize,
    size: usize,
    cost: usize,
    s2: Vec<usize>,
    cov: HashMap<(usize, usize), usize>,
    m4: HashMap<(usize, usize), usize>,
}

impl Layout {
    fn from_header(header: &[String]) -> Result<Self> {
        let herr = |reason: String| Error::Parse { line: 1, reason };
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| herr(format!("missing column `{name}`")))
        };
        let stratum = find("stratum")?;
        let size = find("N_h")?;
        let cost = find("c_h")?;

        let mut s2 = Vec::new();
        while let Some(pos) = header.iter().position(|h| *h == format!("s2_{}", s2.len() + 1)) {
            s2.push(pos);
        }
        if s2.is_empty() {
            return Err(herr("missing column `s2_1`".into()));
        }
        let g = s2.len();
        let pair = |h: &str, prefix: &str| -> Result<Option<(usize, usize)>> {
            let Some(rest) = h.strip_prefix(prefix) else {
                return Ok(None);
            };
            let mut it = rest.split('_').map(|p| p.parse::<usize>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(k)), Some(Ok(l)), None) if k >= 1 && l >= 1 && k <= g && l <= g => {
                    Ok(Some((k.min(l) - 1, k.max(l) - 1)))
                }
                _ => Err(herr(format!("bad column name `{h}`"))),
            }
        };
        let mut cov = HashMap::new();
        let mut m4 = HashMap::new();
        for (i, h) in header.iter().enumerate() {
            if let Some((k, l)) = pair(h, "cov_")? {
                if k == l {
                    return Err(herr(format!("`{h}` duplicates a variance column")));
                }
                if cov.insert((k, l), i).is_some() {
                    return Err(herr(format!("duplicate column `{h}`")));
                }
            } else if let Some(kl) = pair(h, "m4_")? {
                if m4.insert(kl, i).is_some() {
                    return Err(herr(format!("duplicate column `{h}`")));
                }
            } else if h.starts_with("s2_") && !s2.contains(&i) {
                return Err(herr(format!("variance column `{h}` out of sequence")));
            }
        }
        if !m4.is_empty() && m4.len() != g * (g + 1) / 2 {
            return Err(herr(format!(
                "fourth-moment columns must cover all {} pairs k ≤ l",
                g * (g + 1) / 2
            )));
        }
        Ok(Self {
            stratum,
            size,
            cost,
            s2,
            cov,
            m4,
        })
    }
}

/// Reads unit-level data with header `stratum,y_1..y_G`, grouped by stratum
/// in first-seen order.
pub fn parse_units<R: Read>(reader: R) -> Result<Vec<(String, Vec<Vec<f64>>)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let herr = |reason: String| Error::Parse { line: 1, reason };
    let stratum = header
        .iter()
        .position(|h| h == "stratum")
        .ok_or_else(|| herr("missing column `stratum`".into()))?;
    let mut cols = Vec::new();
    while let Some(pos) = header.iter().position(|h| *h == format!("y_{}", cols.len() + 1)) {
        cols.push(pos);
    }
    if cols.is_empty() {
        return Err(herr("missing column `y_1`".into()));
    }

    let mut out: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let id = record.get(stratum).unwrap_or("");
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                reason: "empty stratum id".into(),
            });
        }
        let unit = cols
            .iter()
            .map(|&c| {
                let cell = record.get(c).unwrap_or("");
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                    line,
                    reason: format!("column `{}`: `{cell}` is not a finite number", header[c]),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        match out.iter_mut().find(|(s, _)| s == id) {
            Some((_, rows)) => rows.push(unit),
            None => out.push((id.to_string(), vec![unit])),
        }
    }
    if out.is_empty() {
        return Err(Error::Parse {
            line: 2,
            reason: "no units".into(),
        });
    }
    Ok(out)
}

/// Writes strata in the format read by [`parse_design`].
pub fn emit_design(design: &SurveyDesign) -> String {
    let g = design.characteristics();
    let with_m4 = design.strata().iter().any(|s| s.m4().is_some());
    let mut header = vec!["stratum".to_string(), "N_h".into(), "c_h".into()];
    header.extend((1..=g).map(|j| format!("s2_{j}")));
    for k in 0..g {
        for l in (k + 1)..g {
            header.push(format!("cov_{}_{}", k + 1, l + 1));
        }
    }
    if with_m4 {
        for k in 0..g {
            for l in k..g {
                header.push(format!("m4_{}_{}", k + 1, l + 1));
            }
        }
    }
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(&header).expect("write to memory");
    for s in design.strata() {
        let mut row = vec![s.id().to_string(), s.size().to_string(), s.cost().to_string()];
        row.extend(s.s2().iter().map(|v| v.to_string()));
        for k in 0..g {
            for l in (k + 1)..g {
                row.push(s.cov()[(k, l)].to_string());
            }
        }
        if with_m4 {
            for k in 0..g {
                for l in k..g {
                    row.push(s.m4().map(|m| m[(k, l)].to_string()).unwrap_or_default());
                }
            }
        }
        wtr.write_record(&row).expect("write to memory");
    }
    String::from_utf8(wtr.into_inner().expect("flush to memory")).expect("csv output is utf-8")
}
