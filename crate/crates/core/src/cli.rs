//! Command-line front end. Every subcommand reads files, calls one library
//! operation and prints or writes its result.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use crate::graph::{OpCategory, Taxonomy};
use crate::metrics::{compare, coverage, render_comparison, render_coverage, report_json, OpTimeline};
use crate::pipeline::{analyze, plan_from_trace, recorded_timeline, render_analysis, PlanOptions};
use crate::plan::{
    load_plan, match_collectives, save_plan, scale_comm, AlphaBetaModel, CommCostModel, IdentityModel, MatchOutcome,
    PlanConfig, Registry, ReplayPlan, ZeroModel,
};
use crate::profile::{parse_profiler_trace, CorrelateOptions, ProfilerEvent};
use crate::sim::{simulate, timeline_to_trace_events, SimConfig};
use crate::trace::{decode_trace, parse_trace, validate, ExecutionTrace};

#[derive(Parser, Debug)]
#[command(name = "etreplay", version, about = "Execution-trace analysis, replay planning and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check trace invariants; exits 1 if any are violated.
    Validate { trace: PathBuf },
    /// Operator selection, tensor classification and category breakdown.
    Analyze {
        trace: PathBuf,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        overrides: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Build a replay plan from a trace and its profiler timeline.
    Plan {
        trace: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Replay only the subtree under the node with this name.
        #[arg(long)]
        subtrace: Option<String>,
        /// Comma-separated categories to keep (aten, comm, fused, custom).
        #[arg(long, value_delimiter = ',')]
        keep: Option<Vec<OpCategory>>,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        plan_config: Option<PathBuf>,
        #[arg(long)]
        overrides: Option<PathBuf>,
        /// Minimum fraction of operators that must align with profiler events.
        #[arg(long, default_value_t = 0.9)]
        min_aligned: f64,
    },
    /// Simulate one plan per rank; prints makespan and exposed comm time.
    Simulate {
        #[arg(required = true)]
        plans: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the simulated timeline as trace-event JSON.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Replace communication durations with a cost model at a new world size.
    Scale {
        plan: PathBuf,
        #[arg(long)]
        world: u32,
        /// `identity`, `zero`, or a TOML alpha-beta model file.
        #[arg(long)]
        cost_model: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Check that collectives line up across rank plans.
    Match {
        #[arg(required = true)]
        plans: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Compare an original and a replay timeline (trace-event JSON).
    Compare {
        original: PathBuf,
        replay: PathBuf,
        plan: PathBuf,
        /// Trace the original profile was recorded with; when given, the
        /// original is attributed to plan ops by correlation instead of
        /// `args.node_id`.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        /// Rows of per-op deltas in the text report.
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
    /// Fraction of operators the plan replays, by count and by time.
    Coverage {
        plan: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_trace(path: &Path) -> Result<ExecutionTrace> {
    parse_trace(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_events(path: &Path) -> Result<Vec<ProfilerEvent>> {
    Ok(parse_profiler_trace(&read(path)?).with_context(|| format!("parsing {}", path.display()))?.events)
}

fn load_plan_file(path: &Path) -> Result<ReplayPlan> {
    load_plan(&read(path)?).with_context(|| format!("loading {}", path.display()))
}

fn taxonomy(path: &Option<PathBuf>) -> Result<Taxonomy> {
    match path {
        Some(p) => Ok(Taxonomy::parse_overrides(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => Ok(Taxonomy::default()),
    }
}

fn exec(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Validate { trace } => {
            let t = decode_trace(&read(&trace)?).with_context(|| format!("parsing {}", trace.display()))?;
            let violations = validate(&t);
            for v in &violations {
                writeln!(out, "{v}")?;
            }
            if violations.is_empty() {
                writeln!(out, "ok: {} nodes", t.nodes.len())?;
                Ok(0)
            } else {
                Ok(1)
            }
        }
        Command::Analyze { trace, profile, overrides, json } => {
            let t = load_trace(&trace)?;
            let events = profile.as_deref().map(load_events).transpose()?;
            let a = analyze(&t, events.as_deref(), &taxonomy(&overrides)?, CorrelateOptions::default())?;
            if json {
                out.write_all(report_json(&a).as_bytes())?;
            } else {
                out.write_all(render_analysis(&a).as_bytes())?;
            }
            Ok(0)
        }
        Command::Plan { trace, profile, output, subtrace, keep, registry, plan_config, overrides, min_aligned } => {
            let t = load_trace(&trace)?;
            let events = load_events(&profile)?;
            let opts = PlanOptions {
                subtrace,
                keep: keep.map(|k| k.into_iter().collect::<BTreeSet<_>>()),
                registry: match registry {
                    Some(p) => Registry::parse(&read_text(&p)?).with_context(|| format!("parsing {}", p.display()))?,
                    None => Registry::default(),
                },
                taxonomy: taxonomy(&overrides)?,
                config: match plan_config {
                    Some(p) => PlanConfig::from_toml(&read_text(&p)?)
                        .map_err(anyhow::Error::msg)
                        .with_context(|| format!("parsing {}", p.display()))?,
                    None => PlanConfig::default(),
                },
                correlate: CorrelateOptions { min_aligned },
            };
            let plan = plan_from_trace(&t, &events, &opts)?;
            write(&output, &save_plan(&plan))?;
            let skipped = plan.ops.iter().filter(|o| o.skip).count();
            writeln!(out, "plan: {} ops ({} skipped) -> {}", plan.ops.len(), skipped, output.display())?;
            Ok(0)
        }
        Command::Simulate { plans, config, output } => {
            let plans = plans.iter().map(|p| load_plan_file(p)).collect::<Result<Vec<_>>>()?;
            let cfg = match config {
                Some(p) => SimConfig::from_toml(&read_text(&p)?)
                    .map_err(anyhow::Error::msg)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => SimConfig::default(),
            };
            let timelines = simulate(&plans, &cfg)?;
            for tl in &timelines {
                writeln!(
                    out,
                    "rank {}: makespan_us {} exposed_comm_us {}",
                    tl.rank, tl.makespan_us, tl.exposed_comm_gpu_us
                )?;
            }
            if let Some(path) = output {
                let mut bytes = serde_json::to_vec_pretty(&timeline_to_trace_events(&timelines))?;
                bytes.push(b'\n');
                write(&path, &bytes)?;
            }
            Ok(0)
        }
        Command::Scale { plan, world, cost_model, output } => {
            if world == 0 {
                bail!("--world must be at least 1");
            }
            let p = load_plan_file(&plan)?;
            let model: Box<dyn CommCostModel> = match cost_model.as_str() {
                "identity" => Box::new(IdentityModel),
                "zero" => Box::new(ZeroModel),
                path => Box::new(AlphaBetaModel::from_toml(&read_text(Path::new(path))?)?),
            };
            let scaled = scale_comm(&p, model.as_ref(), world);
            write(&output, &save_plan(&scaled))?;
            writeln!(out, "scaled to world size {world} -> {}", output.display())?;
            Ok(0)
        }
        Command::Match { plans, json } => {
            let plans = plans.iter().map(|p| load_plan_file(p)).collect::<Result<Vec<_>>>()?;
            let outcome = match_collectives(&plans)?;
            if json {
                out.write_all(report_json(&outcome).as_bytes())?;
                return Ok(0);
            }
            match outcome {
                MatchOutcome::Matched(m) => {
                    writeln!(out, "matched {} collective(s)", m.len())?;
                    for c in m {
                        let nodes: Vec<String> = c.ops.iter().map(|o| format!("{}:{}", o.rank, o.node_id)).collect();
                        writeln!(
                            out,
                            "  group {} #{} {} {} [{}]",
                            c.group,
                            c.position,
                            c.collective,
                            c.dtype,
                            nodes.join(" ")
                        )?;
                    }
                }
                MatchOutcome::Deadlock(d) => writeln!(out, "{d}")?,
            }
            Ok(0)
        }
        Command::Compare { original, replay, plan, trace, json, top } => {
            let p = load_plan_file(&plan)?;
            let rank = Some(i64::from(p.rank));
            let original = load_events(&original)?;
            let a = match trace {
                Some(t) => recorded_timeline(&load_trace(&t)?, &p, &original, CorrelateOptions::default())?,
                None => OpTimeline::from_events(&original, rank),
            };
            let b = OpTimeline::from_events(&load_events(&replay)?, rank);
            let report = compare(&a, &b, &p)?;
            if json {
                out.write_all(report_json(&report).as_bytes())?;
            } else {
                out.write_all(render_comparison(&report, top).as_bytes())?;
            }
            Ok(0)
        }
        Command::Coverage { plan, json } => {
            let report = coverage(&load_plan_file(&plan)?)?;
            if json {
                out.write_all(report_json(&report).as_bytes())?;
            } else {
                out.write_all(render_coverage(&report).as_bytes())?;
            }
            Ok(0)
        }
    }
}

/// Runs the tool; returns the process exit code (0 ok, 1 failure, 2 usage).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match exec(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}
