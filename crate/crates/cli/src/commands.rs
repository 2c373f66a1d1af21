use std::io::Write;
use std::path::Path;

use stratalloc::allocator::diff_allocation;
use stratalloc::asymptotics::{generate_population, simulate, FinitePopulation};
use stratalloc::estimators::estimator_stats;
use stratalloc::io::{emit_design, parse_strata, parse_units};
use stratalloc::{
    solve, Allocation, Constraint, MomentPolicy, ModelSpec, Objective, SurveyDesign, VarCoefficient,
};

use crate::args::{AllocateArgs, DesignArgs, EstimateArgs, Format, ReportArgs, SimulateArgs};
use crate::config::{read_text, ModelEntry, RunConfig, SimulateConfig};
use crate::error::{CliError, CliResult};
use crate::output::{
    render_estimate, render_simulation, render_table, table_rows, EstimateOutput, ModelOutcome, Provenance,
    RunOutput, SimulateOutput, StratumSimulation,
};

/// A design with its moment policy applied, plus how to label it.
struct LoadedDesign {
    design: SurveyDesign,
    label: String,
    coefficient: VarCoefficient,
}

fn load_design(
    args: &DesignArgs,
    config: Option<&RunConfig>,
    constraint: impl FnOnce(usize) -> CliResult<(Constraint, f64)>,
) -> CliResult<LoadedDesign> {
    let path = args
        .design
        .as_deref()
        .or(config.and_then(|c| c.design.as_deref()))
        .ok_or_else(|| CliError::Invalid("no design: pass --design or set `design` in the config".into()))?;
    let label = path.display().to_string();
    let in_design = |source| CliError::Design {
        path: label.clone(),
        source,
    };
    let strata = parse_strata(read_text(path)?.as_bytes()).map_err(in_design)?;
    let (constraint, overhead) = constraint(strata.len())?;
    let mut design = SurveyDesign::with_overhead(strata, overhead, constraint).map_err(in_design)?;

    let policy = args
        .moment_policy
        .map(MomentPolicy::from)
        .or(config.and_then(|c| c.moment_policy))
        .unwrap_or_default();
    let units = args.units.as_deref().or(config.and_then(|c| c.units.as_deref()));
    match (policy, units) {
        (MomentPolicy::Raw, Some(units)) => {
            let data = parse_units(read_text(units)?.as_bytes()).map_err(|source| CliError::Design {
                path: units.display().to_string(),
                source,
            })?;
            design = design.with_raw_moments(&data)?;
        }
        (MomentPolicy::Raw, None) => {
            return Err(CliError::Invalid("moment policy `raw` needs unit data (--units)".into()));
        }
        (_, Some(_)) => {
            return Err(CliError::Invalid("unit data is only used with moment policy `raw`".into()));
        }
        _ => {}
    }
    let design = design.resolve_moments(policy)?;
    let coefficient = args
        .var_coefficient
        .map(VarCoefficient::from)
        .or(config.and_then(|c| c.var_coefficient))
        .unwrap_or_default();
    Ok(LoadedDesign {
        design,
        label,
        coefficient,
    })
}

fn format_of(arg: Option<Format>, config: Option<&RunConfig>) -> Format {
    arg.or(config.and_then(|c| c.format).map(Format::from)).unwrap_or(Format::Table)
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("results serialize to JSON");
    s.push('\n');
    s
}

fn emit(out: &mut impl Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(|source| CliError::Read {
        path: "<stdout>".into(),
        source,
    })
}

pub fn estimate(args: &EstimateArgs, out: &mut impl Write) -> CliResult<()> {
    let config = args.design.config.as_deref().map(RunConfig::load).transpose()?;
    let n = &args.allocation;
    let loaded = load_design(&args.design, config.as_ref(), |h| {
        if n.len() != h {
            return Err(CliError::Invalid(format!(
                "allocation has {} entries, design has {h} strata",
                n.len()
            )));
        }
        let overhead = config.as_ref().map_or(0.0, |c| c.constraint.overhead);
        Ok((Constraint::TotalSize { n: n.iter().sum() }, overhead))
    })?;
    let design = &loaded.design;
    let allocation = Allocation::new(n.clone(), design)?;
    let result = EstimateOutput {
        provenance: Provenance::new(&loaded.label, design, loaded.coefficient),
        allocation: allocation.as_slice().to_vec(),
        stats: estimator_stats(design, &allocation.to_real(), loaded.coefficient)?,
    };
    let text = match format_of(args.design.format, config.as_ref()) {
        Format::Table => render_estimate(&result),
        Format::Structured => json(&result),
    };
    emit(out, &text)
}

fn preset(name: &str, characteristics: usize, characteristic: usize) -> CliResult<ModelEntry> {
    let equal = vec![1.0 / characteristics as f64; characteristics];
    let spec = match name {
        "weighting-e" => ModelSpec::WeightingE { w: equal },
        "weighting-v" => ModelSpec::WeightingV { w: equal },
        "single-characteristic" => ModelSpec::SingleCharacteristic { characteristic },
        other => {
            return Err(CliError::Invalid(format!(
                "unknown preset `{other}`; without --config use weighting-e, weighting-v or single-characteristic"
            )))
        }
    };
    Ok(ModelEntry {
        name: name.to_string(),
        reference: None,
        spec,
    })
}

pub fn allocate(args: &AllocateArgs, out: &mut impl Write) -> CliResult<()> {
    let config = args.design.config.as_deref().map(RunConfig::load).transpose()?;
    let loaded = load_design(&args.design, config.as_ref(), |_| {
        let base = config.as_ref().map(|c| c.constraint.clone()).unwrap_or_default();
        let overhead = args.overhead.unwrap_or(base.overhead);
        let constraint = match (args.total, args.budget) {
            (Some(n), _) => Constraint::TotalSize { n },
            (None, Some(budget)) => Constraint::Cost { budget },
            (None, None) => base.resolve()?,
        };
        Ok((constraint, overhead))
    })?;
    let design = &loaded.design;

    let mut entries = match &config {
        Some(c) => {
            let mut entries = c.models.clone();
            if let Some(name) = &args.model {
                entries.retain(|e| &e.name == name);
                if entries.is_empty() {
                    return Err(CliError::Invalid(format!("no model named `{name}` in the config")));
                }
            }
            entries
        }
        None => {
            let name = args
                .model
                .as_deref()
                .ok_or_else(|| CliError::Invalid("pass --config or --model".into()))?;
            vec![preset(name, design.characteristics(), args.characteristic)?]
        }
    };
    if entries.is_empty() {
        return Err(CliError::Invalid("the config lists no models".into()));
    }
    if let Some(sense) = args.sense {
        for e in &mut entries {
            if let ModelSpec::WeightingP { sense: s, .. } = &mut e.spec {
                *s = sense.into();
            }
        }
    }
    let mut solver = config.as_ref().map(|c| c.solver.clone()).unwrap_or_default();
    if let Some(seed) = args.seed {
        solver.seed = seed;
    }
    solver.validate()?;

    for e in &entries {
        Objective::new(design, e.spec.clone(), loaded.coefficient)
            .map_err(|err| CliError::Invalid(format!("model `{}`: {err}", e.name)))?;
        if let Some(r) = &e.reference {
            if r.len() != design.num_strata() {
                return Err(CliError::Invalid(format!(
                    "model `{}`: reference has {} entries, design has {} strata",
                    e.name,
                    r.len(),
                    design.num_strata()
                )));
            }
        }
    }

    let models: Vec<ModelOutcome> = entries
        .into_iter()
        .map(|e| {
            let solved = solve(&e.spec, design, &solver, loaded.coefficient);
            let (report, error) = match solved {
                Ok(r) => (Some(r), None),
                Err(err) => (None, Some(err.to_string())),
            };
            let diff = match (&report, &e.reference) {
                (Some(r), Some(reference)) => diff_allocation(&r.allocation, reference).ok(),
                _ => None,
            };
            ModelOutcome {
                name: e.name,
                spec: e.spec,
                reference: e.reference,
                report,
                diff,
                error,
            }
        })
        .collect();

    let run = RunOutput {
        provenance: Provenance::new(&loaded.label, design, loaded.coefficient),
        design_csv: emit_design(design),
        models,
    };
    let text = match format_of(args.design.format, config.as_ref()) {
        Format::Table => render_table(&run)?,
        Format::Structured => json(&run),
    };
    emit(out, &text)?;
    let failed = run.models.iter().filter(|m| !m.converged()).count();
    if failed > 0 {
        return Err(CliError::NonConvergence(failed, run.models.len()));
    }
    Ok(())
}

pub fn simulate_cmd(args: &SimulateArgs, out: &mut impl Write) -> CliResult<()> {
    let config = args.config.as_deref().map(SimulateConfig::load).transpose()?;
    let (source, populations): (String, Vec<(String, FinitePopulation)>) = match (&config, &args.units) {
        (Some(c), _) => {
            let pops = generate_population(&c.population)?;
            let label = format!("generated, seed {}", c.population.seed);
            (label, pops.into_iter().enumerate().map(|(h, p)| ((h + 1).to_string(), p)).collect())
        }
        (None, Some(path)) => {
            let units = parse_units(read_text(path)?.as_bytes()).map_err(|source| CliError::Design {
                path: path.display().to_string(),
                source,
            })?;
            let pops = units
                .into_iter()
                .map(|(id, rows)| Ok((id, FinitePopulation::new(rows)?)))
                .collect::<CliResult<Vec<_>>>()?;
            (path.display().to_string(), pops)
        }
        (None, None) => return Err(CliError::Invalid("pass --config or --units".into())),
    };
    let n = args
        .n
        .or(config.as_ref().map(|c| c.n))
        .ok_or_else(|| CliError::Invalid("sample size missing: pass --n".into()))?;
    let reps = args
        .reps
        .or(config.as_ref().map(|c| c.reps))
        .ok_or_else(|| CliError::Invalid("replicate count missing: pass --reps".into()))?;
    let seed = args.seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(0);

    let strata = populations
        .iter()
        .enumerate()
        .map(|(h, (id, pop))| {
            let stratum_seed = seed.wrapping_add(h as u64);
            let result = simulate(pop, n, reps, stratum_seed)
                .map_err(|e| CliError::Invalid(format!("stratum {id}: {e}")))?;
            Ok(StratumSimulation {
                stratum: id.clone(),
                seed: stratum_seed,
                result,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let result = SimulateOutput::new(source, strata);
    let format = args
        .format
        .or(config.as_ref().and_then(|c| c.format).map(Format::from))
        .unwrap_or(Format::Table);
    let text = match format {
        Format::Table => render_simulation(&result),
        Format::Structured => json(&result),
    };
    emit(out, &text)
}

pub fn report(args: &ReportArgs, out: &mut impl Write) -> CliResult<()> {
    let run = read_run(&args.input)?;
    let text = match args.format.unwrap_or(Format::Table) {
        Format::Table => render_table(&run)?,
        Format::Structured => json(&serde_json::json!({
            "provenance": run.provenance,
            "rows": table_rows(&run)?,
        })),
    };
    emit(out, &text)
}

fn read_run(path: &Path) -> CliResult<RunOutput> {
    serde_json::from_str(&read_text(path)?).map_err(|source| CliError::Json {
        path: path.display().to_string(),
        source,
    })
}
