//! Bundled example data.

use crate::design::{Constraint, SurveyDesign};
use crate::error::Result;
use crate::io::parse_design;

/// Forest survey summary: nine strata, basal area and net volume per acre,
/// with their within-stratum variances and covariance. Unit costs are 1.
pub const HUMBOLDT_CSV: &str = include_str!("../data/humboldt.csv");

pub fn humboldt(constraint: Constraint) -> Result<SurveyDesign> {
    parse_design(HUMBOLDT_CSV, constraint, 0.0)
}
