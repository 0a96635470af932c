//! Scenario-driven front end: build or load a graph, apply a labeling
//! scheme, run the algorithm, and emit labels, traces, metrics and
//! verification evidence as files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use radiolab_core::coloring::Coloring;
use radiolab_core::gossip::{gossip_full, labeling_gossip, GossipRun, GossipScheme};
use radiolab_core::graph::NodeId;
use radiolab_core::kb::{kb_programs, labeling_kb, KBScheme};
use radiolab_core::primes::DelayPolicy;
use radiolab_core::sim::{run, RunConfig, Trace};
use radiolab_core::tn::{build_tn, tn_program, tn_schedule_oracle, verify_tn_trace, TnLabel};
use radiolab_core::verify::{
    check_completion, demo_automorphism_histories, demo_duplicate_labels_kn,
    demo_identical_labels_cycle4, find_preserved_automorphism, gossip_invariants,
    CompletionReport, DEMO_KINDS,
};
use radiolab_core::Graph;

const SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// scenario schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum GraphSpec {
    /// adjacency-list text file (one `u: v w ...` line per node)
    File { path: String },
    /// uniform random labeled tree: a seeded ChaCha8 stream drives a
    /// uniformly drawn generator sequence of length n-2
    RandomTree { n: usize, seed: u64 },
    Complete { n: usize },
    /// triangular tree family member with x arms of lengths 1..=x
    Tn { x: u64 },
    Star { m: usize },
    Path { n: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum SourceSpec {
    All(String), // the literal "all"
    Explicit(Vec<NodeId>),
    Sampled { count: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum PolicySpec {
    Faithful { bound: u64 },
    Registry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Scenario {
    schema_version: u32,
    graph: GraphSpec,
    #[serde(default = "default_sources")]
    sources: SourceSpec,
    /// one of "kb", "gossip", "tn"
    algorithm: String,
    #[serde(default)]
    policy: Option<PolicySpec>,
    #[serde(default = "default_horizon")]
    horizon: u64,
    #[serde(default)]
    offsets: Option<Vec<u64>>,
}

fn default_sources() -> SourceSpec {
    SourceSpec::All("all".into())
}

fn default_horizon() -> u64 {
    1_000_000
}

// ---------------------------------------------------------------------------
// command line
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "radiolab", about = "deterministic radio-network simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the labeling for a scenario and write the label file
    Label(Common),
    /// Label, simulate, and write trace, metrics and a completion report
    Run(Common),
    /// Run and check the algorithm-specific invariant suite
    Verify(Common),
    /// Run the indistinguishability demo battery
    Demo(DemoArgs),
    /// Run and print a human-readable summary
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// scenario JSON file
    #[arg(long)]
    scenario: PathBuf,
    /// output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// override the scenario horizon
    #[arg(long)]
    horizon: Option<u64>,
    /// override the delay policy: "registry" or "faithful[:bound]"
    #[arg(long)]
    policy: Option<String>,
    /// override every seed in the scenario
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DemoArgs {
    /// output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 1_000)]
    horizon: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Label(a) => with_scenario(a, cmd_label),
        Cmd::Run(a) => with_scenario(a, cmd_run),
        Cmd::Verify(a) => with_scenario(a, cmd_verify),
        Cmd::Demo(a) => cmd_demo(&a),
        Cmd::Report(a) => with_scenario(a, cmd_report),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn with_scenario(
    args: Common,
    f: fn(&Scenario, &Prepared, &Path) -> Result<ExitCode, AnyError>,
) -> Result<ExitCode, AnyError> {
    let text = fs::read_to_string(&args.scenario)?;
    let mut scenario: Scenario = serde_json::from_str(&text)?;
    if scenario.schema_version != SCHEMA_VERSION {
        return Err(format!(
            "unsupported schema version {} (expected {SCHEMA_VERSION})",
            scenario.schema_version
        )
        .into());
    }
    if let Some(h) = args.horizon {
        scenario.horizon = h;
    }
    if let Some(p) = &args.policy {
        scenario.policy = Some(parse_policy(p)?);
    }
    if let Some(seed) = args.seed {
        match &mut scenario.graph {
            GraphSpec::RandomTree { seed: s, .. } => *s = seed,
            _ => {}
        }
        if let SourceSpec::Sampled { seed: s, .. } = &mut scenario.sources {
            *s = seed;
        }
    }
    let prepared = prepare(&scenario)?;
    fs::create_dir_all(&args.out)?;
    f(&scenario, &prepared, &args.out)
}

fn parse_policy(s: &str) -> Result<PolicySpec, AnyError> {
    match s {
        "registry" => Ok(PolicySpec::Registry),
        "faithful" => Ok(PolicySpec::Faithful {
            bound: radiolab_core::primes::DEFAULT_PRIME_BOUND,
        }),
        _ => match s.strip_prefix("faithful:") {
            Some(b) => Ok(PolicySpec::Faithful { bound: b.parse()? }),
            None => Err(format!("unknown policy {s:?}").into()),
        },
    }
}

// ---------------------------------------------------------------------------
// scenario resolution
// ---------------------------------------------------------------------------

/// Everything derived from the scenario before a command acts on it.
struct Prepared {
    graph: Graph,
    sources: Vec<NodeId>,
    offsets: Vec<u64>,
    policy: DelayPolicy,
    /// set when the graph came from the triangular family
    tn_x: Option<u64>,
}

fn prepare(s: &Scenario) -> Result<Prepared, AnyError> {
    let (graph, tn_x) = match &s.graph {
        GraphSpec::File { path } => (Graph::from_text(&fs::read_to_string(path)?)?, None),
        GraphSpec::RandomTree { n, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (Graph::random_tree(*n, &mut rng), None)
        }
        GraphSpec::Complete { n } => (Graph::complete(*n), None),
        GraphSpec::Tn { x } => (build_tn(*x)?.0, Some(*x)),
        GraphSpec::Star { m } => (Graph::star(*m), None),
        GraphSpec::Path { n } => (Graph::path(*n), None),
    };
    let n = graph.node_count();
    let sources: Vec<NodeId> = match &s.sources {
        SourceSpec::All(word) if word == "all" => graph.nodes().collect(),
        SourceSpec::All(word) => return Err(format!("bad source spec {word:?}").into()),
        SourceSpec::Explicit(v) => v.clone(),
        SourceSpec::Sampled { count, seed } => {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut all: Vec<NodeId> = graph.nodes().collect();
            all.shuffle(&mut rng);
            all.truncate(*count);
            all.sort_unstable();
            all
        }
    };
    let offsets = match &s.offsets {
        Some(o) if o.len() == n => o.clone(),
        Some(_) => return Err("offsets length does not match the graph".into()),
        None => vec![0; n],
    };
    let policy = match s.policy {
        Some(PolicySpec::Faithful { bound }) => DelayPolicy::FaithfulPrime { bound },
        Some(PolicySpec::Registry) => DelayPolicy::RegistryPrime,
        None => DelayPolicy::RegistryPrime,
    };
    match s.algorithm.as_str() {
        "kb" | "gossip" | "tn" => {}
        other => return Err(format!("unknown algorithm {other:?}").into()),
    }
    if s.algorithm == "gossip" && !graph.is_tree() {
        return Err("gossip requires a tree".into());
    }
    if s.algorithm == "tn" && tn_x.is_none() {
        return Err("the tn algorithm requires a tn(x) graph".into());
    }
    Ok(Prepared {
        graph,
        sources,
        offsets,
        policy,
        tn_x,
    })
}

// ---------------------------------------------------------------------------
// labeling, shared by label/run/verify/report
// ---------------------------------------------------------------------------

enum Labeled {
    Kb(KBScheme),
    Gossip(GossipScheme),
    Tn(Vec<TnLabel>),
}

fn build_labels(s: &Scenario, p: &Prepared) -> Result<Labeled, AnyError> {
    Ok(match s.algorithm.as_str() {
        "kb" => Labeled::Kb(labeling_kb(&p.graph, &p.sources, None)?),
        "gossip" => Labeled::Gossip(labeling_gossip(&p.graph, p.policy)?),
        "tn" => Labeled::Tn(build_tn(p.tn_x.unwrap())?.2),
        _ => unreachable!(),
    })
}

fn label_file(l: &Labeled, p: &Prepared) -> String {
    let mut out = String::new();
    match l {
        Labeled::Kb(s) => {
            out.push_str(&format!(
                "# algorithm kb strat={} coordinator={} sources={:?} max_bits={}\n",
                s.strat as u8,
                s.coordinator,
                s.sources,
                s.max_label_bits()
            ));
            for (v, lab) in s.labels.iter().enumerate() {
                out.push_str(&format!("{v} {}\n", lab.bits_string()));
            }
        }
        Labeled::Gossip(s) => {
            out.push_str(&format!(
                "# algorithm gossip coordinator={} term_node={} distinguishing={} max_bits={}\n",
                s.coordinator,
                s.term_node,
                s.d_number,
                s.max_label_bits()
            ));
            for (v, lab) in s.labels.iter().enumerate() {
                out.push_str(&format!("{v} {}\n", lab.bits_string()));
            }
        }
        Labeled::Tn(labels) => {
            out.push_str(&format!("# algorithm tn n={} max_bits=2\n", p.graph.node_count()));
            for (v, lab) in labels.iter().enumerate() {
                out.push_str(&format!("{v} {}\n", lab.bits()));
            }
        }
    }
    out
}

fn cmd_label(s: &Scenario, p: &Prepared, out: &Path) -> Result<ExitCode, AnyError> {
    let labeled = build_labels(s, p)?;
    fs::write(out.join("labels.txt"), label_file(&labeled, p))?;
    println!("wrote {}", out.join("labels.txt").display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RunReport {
    algorithm: String,
    nodes: usize,
    sources: Vec<NodeId>,
    horizon: u64,
    completion: CompletionReport,
    rounds_recorded: usize,
    collisions: usize,
}

struct RunArtifacts {
    report: RunReport,
    trace_json: String,
    metrics_csv: String,
    labeled: Labeled,
    /// gossip runs keep their full result for invariant checking
    gossip: Option<GossipRun>,
}

fn execute(s: &Scenario, p: &Prepared) -> Result<RunArtifacts, AnyError> {
    let labeled = build_labels(s, p)?;
    let n = p.graph.node_count();
    let cfg = RunConfig::new(s.horizon);
    let (trace_json, metrics_csv, completion, rounds, collisions, gossip) = match &labeled {
        Labeled::Kb(scheme) => {
            let mut progs = kb_programs(scheme);
            let trace = run(&p.graph, &mut progs, &p.offsets, &cfg);
            pack(&trace, &p.sources, None)
        }
        Labeled::Gossip(scheme) => {
            let grun = gossip_full(&p.graph, scheme)?;
            let all: Vec<NodeId> = p.graph.nodes().collect();
            let packed = pack(&grun.trace, &all, None);
            (packed.0, packed.1, packed.2, packed.3, packed.4, Some(grun))
        }
        Labeled::Tn(labels) => {
            let mut progs: Vec<_> = (0..n)
                .map(|v| tn_program(labels[v], v as NodeId))
                .collect();
            let trace = run(&p.graph, &mut progs, &p.offsets, &cfg);
            let all: Vec<NodeId> = p.graph.nodes().collect();
            pack(&trace, &all, None)
        }
    };
    Ok(RunArtifacts {
        report: RunReport {
            algorithm: s.algorithm.clone(),
            nodes: n,
            sources: p.sources.clone(),
            horizon: s.horizon,
            completion,
            rounds_recorded: rounds,
            collisions,
        },
        trace_json,
        metrics_csv,
        labeled,
        gossip,
    })
}

#[allow(clippy::type_complexity)]
fn pack<M: Clone + Serialize>(
    trace: &Trace<M>,
    sources: &[NodeId],
    gossip: Option<GossipRun>,
) -> (String, String, CompletionReport, usize, usize, Option<GossipRun>) {
    (
        serde_json::to_string_pretty(trace).unwrap(),
        trace.metrics_csv(),
        check_completion(trace, sources),
        trace.rounds.len(),
        trace.collision_count(),
        gossip,
    )
}

fn write_artifacts(a: &RunArtifacts, p: &Prepared, out: &Path) -> Result<(), AnyError> {
    fs::write(out.join("labels.txt"), label_file(&a.labeled, p))?;
    fs::write(out.join("trace.json"), &a.trace_json)?;
    fs::write(out.join("metrics.csv"), &a.metrics_csv)?;
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&a.report)?,
    )?;
    Ok(())
}

fn cmd_run(s: &Scenario, p: &Prepared, out: &Path) -> Result<ExitCode, AnyError> {
    let a = execute(s, p)?;
    write_artifacts(&a, p, out)?;
    if a.report.completion.acknowledged {
        println!(
            "solved: all {} nodes hold all {} source messages by round {}",
            a.report.nodes,
            a.report.sources.len(),
            a.report.completion.completion_round.unwrap()
        );
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("incomplete at horizon {}", s.horizon);
        Ok(ExitCode::FAILURE)
    }
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct Evidence {
    algorithm: String,
    suite: String,
    violations: Vec<String>,
    passed: bool,
}

fn cmd_verify(s: &Scenario, p: &Prepared, out: &Path) -> Result<ExitCode, AnyError> {
    let a = execute(s, p)?;
    write_artifacts(&a, p, out)?;
    let mut violations: Vec<String> = Vec::new();
    if !a.report.completion.solved {
        violations.push("completion: some node is missing a source message".into());
    }
    let suite = match (&a.labeled, &a.gossip) {
        (Labeled::Tn(labels), _) => {
            let x = p.tn_x.unwrap();
            let schedule = tn_schedule_oracle(x)?;
            let (g, spec, _) = build_tn(x)?;
            let mut progs: Vec<_> = (0..spec.n)
                .map(|v| tn_program(labels[v], v as NodeId))
                .collect();
            let trace = run(&g, &mut progs, &p.offsets, &RunConfig::new(s.horizon));
            if let Err(e) = verify_tn_trace(&g, &spec, &schedule, &trace) {
                violations.push(format!("exact schedule: {e}"));
            }
            "exact round schedule"
        }
        (Labeled::Gossip(scheme), Some(grun)) => {
            let report = gossip_invariants(&p.graph, scheme, grun)?;
            violations.extend(report.violations);
            "aggregation invariants"
        }
        _ => "completion",
    };
    let passed = violations.is_empty();
    let evidence = Evidence {
        algorithm: s.algorithm.clone(),
        suite: suite.into(),
        violations: violations.clone(),
        passed,
    };
    fs::write(
        out.join("evidence.json"),
        serde_json::to_string_pretty(&evidence)?,
    )?;
    if passed {
        println!("verify: {suite}: pass");
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &violations {
            eprintln!("verify: violated: {v}");
        }
        Ok(ExitCode::FAILURE)
    }
}

// ---------------------------------------------------------------------------
// demo
// ---------------------------------------------------------------------------

fn cmd_demo(args: &DemoArgs) -> Result<ExitCode, AnyError> {
    fs::create_dir_all(&args.out)?;
    let mut records: Vec<serde_json::Value> = Vec::new();
    let mut all_passed = true;
    for n in 3..=8usize {
        for kind in DEMO_KINDS {
            let ev = demo_duplicate_labels_kn(n, 2, kind, args.horizon)?;
            all_passed &= ev.passed;
            records.push(serde_json::json!({"demo": "duplicate-labels", "evidence": ev}));
        }
    }
    for kind in DEMO_KINDS {
        let ev = demo_identical_labels_cycle4(kind, args.horizon);
        all_passed &= ev.passed;
        records.push(serde_json::json!({"demo": "uniform-labels-cycle", "evidence": ev}));
    }
    let tree = Graph::path(6);
    let coloring = Coloring::all_ones(6);
    let phi = find_preserved_automorphism(&tree, &coloring)?
        .expect("an even path has a reflection");
    for kind in DEMO_KINDS {
        let ev = demo_automorphism_histories(&tree, &coloring, &phi, kind, args.horizon)?;
        all_passed &= ev.passed;
        records.push(serde_json::json!({"demo": "preserved-automorphism", "evidence": ev}));
    }
    fs::write(
        args.out.join("evidence.json"),
        serde_json::to_string_pretty(&records)?,
    )?;
    println!(
        "demo: {} runs, {}",
        records.len(),
        if all_passed { "all passed" } else { "FAILURES" }
    );
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn cmd_report(s: &Scenario, p: &Prepared, out: &Path) -> Result<ExitCode, AnyError> {
    let a = execute(s, p)?;
    write_artifacts(&a, p, out)?;
    let max_bits = match &a.labeled {
        Labeled::Kb(sch) => sch.max_label_bits(),
        Labeled::Gossip(sch) => sch.max_label_bits(),
        Labeled::Tn(_) => 2,
    };
    println!("algorithm:        {}", s.algorithm);
    println!("nodes:            {}", a.report.nodes);
    println!("sources:          {}", a.report.sources.len());
    println!("max label bits:   {max_bits}");
    println!("rounds recorded:  {}", a.report.rounds_recorded);
    println!("collisions:       {}", a.report.collisions);
    match a.report.completion.completion_round {
        Some(r) if a.report.completion.acknowledged => println!("completed:        round {r}"),
        _ => println!("completed:        no (horizon {})", s.horizon),
    }
    Ok(if a.report.completion.acknowledged {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
