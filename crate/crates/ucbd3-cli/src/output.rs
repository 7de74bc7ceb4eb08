//! Artifact writers and readers: metric tables, broadcast logs, bound
//! reports, and the broadcast heatmap.
//!
//! Agents, arms, and phases are 1-based in every file. Floats are written
//! in scientific notation with 17 significant digits so values round-trip
//! exactly and reruns are byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use ucbd3_core::analysis::epsilon_nash_bounds;
use ucbd3_core::market::stable_match;
use ucbd3_core::sim::GainEstimate;

use crate::config::CliError;
use crate::experiment::ExperimentOutput;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricRow {
    algorithm: String,
    run: u64,
    checkpoint_t: u64,
    agent: usize,
    cum_regret: f64,
    cum_collision_regret: f64,
    blocked_count: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CommRow {
    algorithm: String,
    run: u64,
    phase: u32,
    agent: usize,
    arm: usize,
}

fn metric_rows(output: &ExperimentOutput) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for result in &output.algorithms {
        for (run, record) in result.runs.iter().enumerate() {
            for (i, &t) in record.series.checkpoints.iter().enumerate() {
                for agent in 0..output.instance.n_agents() {
                    rows.push(MetricRow {
                        algorithm: result.kind.id().to_string(),
                        run: run as u64,
                        checkpoint_t: t,
                        agent: agent + 1,
                        cum_regret: record.series.cum_regret[agent][i],
                        cum_collision_regret: record.series.cum_collision_regret[agent][i],
                        blocked_count: record.series.blocked_count[agent][i],
                    });
                }
            }
        }
    }
    rows
}

fn comm_rows(output: &ExperimentOutput) -> Vec<CommRow> {
    let mut rows = Vec::new();
    for result in &output.algorithms {
        for (run, record) in result.runs.iter().enumerate() {
            for (phase, row) in record.series.comm_arms.iter().enumerate() {
                for (agent, &arm) in row.iter().enumerate() {
                    rows.push(CommRow {
                        algorithm: result.kind.id().to_string(),
                        run: run as u64,
                        phase: phase as u32 + 1,
                        agent: agent + 1,
                        arm: arm + 1,
                    });
                }
            }
        }
    }
    rows
}

pub fn render_metrics(output: &ExperimentOutput, format: OutputFormat) -> String {
    let rows = metric_rows(output);
    match format {
        OutputFormat::Csv => {
            let mut text = String::from(
                "algorithm,run,checkpoint_t,agent,cum_regret,cum_collision_regret,blocked_count\n",
            );
            for r in rows {
                let _ = writeln!(
                    text,
                    "{},{},{},{},{},{},{}",
                    r.algorithm,
                    r.run,
                    r.checkpoint_t,
                    r.agent,
                    fmt_f64(r.cum_regret),
                    fmt_f64(r.cum_collision_regret),
                    r.blocked_count
                );
            }
            text
        }
        OutputFormat::Json => serde_json::to_string_pretty(&rows).expect("rows serialize"),
    }
}

pub fn render_comm_arms(output: &ExperimentOutput, format: OutputFormat) -> String {
    let rows = comm_rows(output);
    match format {
        OutputFormat::Csv => {
            let mut text = String::from("algorithm,run,phase,agent,arm\n");
            for r in rows {
                let _ = writeln!(
                    text,
                    "{},{},{},{},{}",
                    r.algorithm, r.run, r.phase, r.agent, r.arm
                );
            }
            text
        }
        OutputFormat::Json => serde_json::to_string_pretty(&rows).expect("rows serialize"),
    }
}

#[derive(Debug, Serialize)]
struct BoundsFile<'a> {
    gap: f64,
    stabilizing_phase: u32,
    remainder_scale: f64,
    per_agent: Vec<BoundsFileRow<'a>>,
}

#[derive(Debug, Serialize)]
struct BoundsFileRow<'a> {
    agent: usize,
    upper: f64,
    lower: &'a Option<f64>,
    hard_closed_form: f64,
    epsilon_nash: f64,
}

pub fn render_bounds(output: &ExperimentOutput) -> String {
    let sm = stable_match(&output.instance);
    let uppers: Vec<f64> = output.bounds.per_agent.iter().map(|b| b.upper).collect();
    let eps = epsilon_nash_bounds(&output.instance, &sm, &uppers);
    let file = BoundsFile {
        gap: output.bounds.gap,
        stabilizing_phase: output.bounds.stabilizing_phase,
        remainder_scale: output.bounds.remainder_scale,
        per_agent: output
            .bounds
            .per_agent
            .iter()
            .enumerate()
            .map(|(agent, b)| BoundsFileRow {
                agent: agent + 1,
                upper: b.upper,
                lower: &b.lower,
                hard_closed_form: b.hard_closed_form,
                epsilon_nash: eps[agent],
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("bounds serialize")
}

#[derive(Debug, Serialize)]
struct DeviationFile<'a> {
    agent: usize,
    mean_gain: f64,
    ci_half_width: f64,
    per_run: &'a [f64],
}

pub fn render_deviation(agent: usize, estimate: &GainEstimate) -> String {
    serde_json::to_string_pretty(&DeviationFile {
        agent: agent + 1,
        mean_gain: estimate.mean,
        ci_half_width: estimate.half_width,
        per_run: &estimate.per_run,
    })
    .expect("deviation serialize")
}

/// Writes every artifact of an experiment into `dir`:
/// `metrics.{csv|json}`, `comm_arms.{csv|json}`, `bounds.json`, and
/// `deviation.json` when a deviation was run.
pub fn write_experiment(
    output: &ExperimentOutput,
    dir: &Path,
    format: OutputFormat,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let write = |name: &str, text: String| -> Result<(), CliError> {
        let path = dir.join(name);
        std::fs::write(&path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    };
    write(
        &format!("metrics.{}", format.extension()),
        render_metrics(output, format),
    )?;
    write(
        &format!("comm_arms.{}", format.extension()),
        render_comm_arms(output, format),
    )?;
    write("bounds.json", render_bounds(output))?;
    if let Some((agent, estimate)) = &output.deviation {
        write("deviation.json", render_deviation(*agent, estimate))?;
    }
    Ok(())
}

/// One aggregated heatmap cell: how many runs broadcast `arm` at `phase`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HeatmapCell {
    pub phase: u32,
    pub agent: usize,
    pub arm: usize,
    pub count: u64,
}

/// Reads a run directory's broadcast log and aggregates the phased
/// profile's rows into per-cell counts.
pub fn heatmap_from_dir(dir: &Path) -> Result<Vec<HeatmapCell>, CliError> {
    let csv_path = dir.join("comm_arms.csv");
    let json_path = dir.join("comm_arms.json");
    let rows: Vec<CommRow> = if csv_path.exists() {
        let text = std::fs::read_to_string(&csv_path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", csv_path.display())))?;
        parse_comm_csv(&text)?
    } else if json_path.exists() {
        let text = std::fs::read_to_string(&json_path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", json_path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("bad broadcast log: {e}")))?
    } else {
        return Err(CliError::Io(format!(
            "no comm_arms.csv or comm_arms.json under {}",
            dir.display()
        )));
    };

    let mut counts: std::collections::BTreeMap<(u32, usize, usize), u64> =
        std::collections::BTreeMap::new();
    for row in rows.iter().filter(|r| r.algorithm == "ucb_d3") {
        *counts.entry((row.phase, row.agent, row.arm)).or_insert(0) += 1;
    }
    if counts.is_empty() {
        return Err(CliError::Validation(
            "the run directory holds no phased-profile broadcasts".into(),
        ));
    }
    Ok(counts
        .into_iter()
        .map(|((phase, agent, arm), count)| HeatmapCell {
            phase,
            agent,
            arm,
            count,
        })
        .collect())
}

fn parse_comm_csv(text: &str) -> Result<Vec<CommRow>, CliError> {
    let bad = |line: &str| CliError::Validation(format!("bad broadcast row: {line}"));
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let mut fields = line.split(',');
            let mut next = || fields.next().ok_or_else(|| bad(line));
            Ok(CommRow {
                algorithm: next()?.to_string(),
                run: next()?.parse().map_err(|_| bad(line))?,
                phase: next()?.parse().map_err(|_| bad(line))?,
                agent: next()?.parse().map_err(|_| bad(line))?,
                arm: next()?.parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}

pub fn render_heatmap(cells: &[HeatmapCell], format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => {
            let mut text = String::from("phase,agent,arm,count\n");
            for c in cells {
                let _ = writeln!(text, "{},{},{},{}", c.phase, c.agent, c.arm, c.count);
            }
            text
        }
        OutputFormat::Json => serde_json::to_string_pretty(cells).expect("cells serialize"),
    }
}
