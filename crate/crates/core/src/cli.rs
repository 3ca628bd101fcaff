//! Command-line surface: one binary, five subcommands, reproducible
//! artifacts under `--out` with a hash manifest.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical
//! divergence. Every command echoes its resolved configuration to
//! stderr so a run can be audited from its log alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::encoder::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::probe::{embed_nodes, logistic_probe};
use crate::properties::{z_normalize, GraphStats, ZStats};
use crate::rng::Rng;
use crate::synthgen::{generate, DegreeTarget};
use crate::trainer::{pretrain, pretrain_baseline, BaselineOrder, IterRecord, PoolGraph, Variant};

const TAG_GEN: u64 = 0x30;

#[derive(Debug, Parser)]
#[command(
    name = "graph-pretrain",
    version,
    about = "Data-active graph pre-training: property/uncertainty-driven \
             graph selection, contrastive encoding, frozen-embedding probing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Structural properties of graphs, raw and z-scored over the pool
    Props(PropsArgs),
    /// Generate synthetic power-law graphs as edge-list files
    Gen(GenArgs),
    /// Run the selection + contrastive training loop
    Pretrain(PretrainArgs),
    /// Evaluate a frozen checkpoint with a logistic probe
    Probe(ProbeArgs),
    /// Summarize run logs as CSV tables
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PropsArgs {
    /// Edge-list files (one graph each)
    #[arg(required = true)]
    pub graphs: Vec<PathBuf>,
    /// Write props.jsonl and a manifest here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// Output directory for the edge-list files
    #[arg(long)]
    pub out: PathBuf,
    /// Nodes per graph
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Comma-separated target exponents
    #[arg(long, value_delimiter = ',', default_value = "2.2,2.6,3.0")]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub d_min: usize,
    #[arg(long, default_value_t = 100)]
    pub d_max: usize,
    /// Graphs per exponent
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct PretrainArgs {
    /// JSON config file; flags below override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for run log, checkpoints, manifest
    #[arg(long)]
    pub out: PathBuf,
    /// Edge-list file for the pool (repeatable; overrides the config list)
    #[arg(long = "graph")]
    pub graphs: Vec<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 is the reproducibility mode
    #[arg(long)]
    pub threads: Option<usize>,
    /// One of: apt, apt-l2, apt-r, apt-g, apt-p
    #[arg(long)]
    pub variant: Option<String>,
    /// Proximal penalty strength
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Candidate instances sampled per epoch
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Track every pool graph's uncertainty each iteration
    #[arg(long)]
    pub monitor_uncertainty: bool,
    /// Replace adaptive selection with a fixed-order baseline:
    /// all-graphs-uniform, random-order, or reverse-order
    #[arg(long)]
    pub baseline: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Edge-list file to probe on
    #[arg(long)]
    pub graph: PathBuf,
    /// Label file: `node_id label` per line, `#` comments
    #[arg(long)]
    pub labels: PathBuf,
    /// Write probe.json and a manifest here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file; flags below override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub splits: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Run-log JSON-lines files
    #[arg(required = true)]
    pub runlogs: Vec<PathBuf>,
    /// Output directory for the CSV tables
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses the command line, runs it, and returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.cmd {
        Cmd::Props(a) => cmd_props(&a),
        Cmd::Gen(a) => cmd_gen(&a),
        Cmd::Pretrain(a) => cmd_pretrain(&a),
        Cmd::Probe(a) => cmd_probe(&a),
        Cmd::Report(a) => cmd_report(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::BadDegreeTarget(_) | Error::EmptySequence => 1,
        Error::Diverged { .. } | Error::NoConvergence(_) => 3,
        _ => 2,
    }
}

fn audit<T: Serialize>(cmd: &str, cfg: &T) {
    match serde_json::to_string(cfg) {
        Ok(s) => eprintln!("{cmd} resolved config: {s}"),
        Err(e) => eprintln!("{cmd} resolved config unavailable: {e}"),
    }
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Hashes the named artifacts (paths relative to `dir`) and writes
/// `manifest.json` beside them.
fn write_manifest(dir: &Path, artifacts: &[String]) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for rel in artifacts {
        hashes.insert(rel.clone(), sha256_hex(&dir.join(rel))?);
    }
    let manifest = serde_json::json!({ "artifacts": hashes });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct PropsRow {
    path: String,
    nodes: usize,
    edge_lines: usize,
    edges: usize,
    self_loops_removed: usize,
    duplicates_removed: usize,
    lcc_nodes: usize,
    lcc_edges: usize,
    #[serde(flatten)]
    stats: GraphStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    z: Option<ZStats>,
}

fn cmd_props(a: &PropsArgs) -> Result<i32> {
    audit("props", a);
    let mut rows: Vec<PropsRow> = Vec::new();
    let mut failures = 0usize;
    for path in &a.graphs {
        let loaded = Graph::load_edge_list(path).and_then(|(g, report)| {
            let lcc = g.largest_connected_component();
            let stats = GraphStats::compute(&lcc)?;
            Ok((g, report, lcc, stats))
        });
        match loaded {
            Ok((_, report, lcc, stats)) => rows.push(PropsRow {
                path: path.display().to_string(),
                nodes: report.nodes,
                edge_lines: report.edge_lines,
                edges: report.undirected_edges,
                self_loops_removed: report.self_loops_removed,
                duplicates_removed: report.duplicates_removed,
                lcc_nodes: lcc.num_nodes(),
                lcc_edges: lcc.num_edges(),
                stats,
                z: None,
            }),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                failures += 1;
            }
        }
    }
    if rows.len() >= 2 {
        let pool: Vec<GraphStats> = rows.iter().map(|r| r.stats).collect();
        for (row, z) in rows.iter_mut().zip(z_normalize(&pool)) {
            row.z = Some(z);
        }
    } else if rows.len() == 1 {
        eprintln!("warning: single graph, z-scores need a pool of at least 2; emitting raw values only");
    }
    let mut lines = String::new();
    for row in &rows {
        lines.push_str(&serde_json::to_string(row)?);
        lines.push('\n');
    }
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("props.jsonl"), &lines)?;
            write_manifest(dir, &["props.jsonl".into()])?;
        }
        None => print!("{lines}"),
    }
    Ok(if failures > 0 { 2 } else { 0 })
}

fn cmd_gen(a: &GenArgs) -> Result<i32> {
    audit("gen", a);
    fs::create_dir_all(&a.out)?;
    let mut artifacts = Vec::new();
    for (ai, &alpha) in a.alpha.iter().enumerate() {
        let target = DegreeTarget::new(a.n, alpha, a.d_min, a.d_max);
        for c in 0..a.count {
            let mut rng = Rng::stream(a.seed, TAG_GEN, ((ai as u64) << 32) | c as u64);
            let g = generate(&target, &mut rng)?;
            let name = format!("gen_n{}_a{alpha:.2}_i{c}.txt", a.n);
            let comment = format!(
                "synthetic power-law graph: n {}, target alpha {alpha}, degrees [{}, {}], replicate {c}, base seed {}",
                a.n, a.d_min, a.d_max, a.seed
            );
            crate::graph::write_edge_list(&g, a.out.join(&name), &comment)?;
            artifacts.push(name);
        }
    }
    write_manifest(&a.out, &artifacts)?;
    Ok(0)
}

fn parse_variant(s: &str) -> Result<Variant> {
    match s {
        "apt" => Ok(Variant::Apt),
        "apt-l2" => Ok(Variant::AptL2),
        "apt-r" => Ok(Variant::AptR),
        "apt-g" => Ok(Variant::AptG),
        "apt-p" => Ok(Variant::AptP),
        other => Err(Error::Config(format!(
            "unknown variant {other:?} (expected apt, apt-l2, apt-r, apt-g, apt-p)"
        ))),
    }
}

fn parse_baseline(s: &str) -> Result<BaselineOrder> {
    match s {
        "all-graphs-uniform" => Ok(BaselineOrder::AllGraphsUniform),
        "random-order" => Ok(BaselineOrder::RandomOrder),
        "reverse-order" => Ok(BaselineOrder::ReverseOrder),
        other => Err(Error::Config(format!(
            "unknown baseline {other:?} (expected all-graphs-uniform, random-order, reverse-order)"
        ))),
    }
}

/// Loads the pool in listing order; graph names are file stems, made
/// unique by position when stems collide.
fn load_pool(paths: &[PathBuf]) -> Result<Vec<PoolGraph>> {
    let mut seen = BTreeSet::new();
    let mut pool = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let (graph, _) = Graph::load_edge_list(path)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("graph{i}"));
        let name = if seen.contains(&stem) { format!("{stem}_{i}") } else { stem };
        seen.insert(name.clone());
        pool.push(PoolGraph { name, graph });
    }
    Ok(pool)
}

#[derive(Serialize)]
struct SelectionSummary<'a> {
    chosen_history: &'a [String],
    gamma_history: &'a [f64],
}

fn cmd_pretrain(a: &PretrainArgs) -> Result<i32> {
    let mut rc = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        rc.train.seed = s;
    }
    if let Some(t) = a.threads {
        rc.train.threads = t;
    }
    if let Some(v) = &a.variant {
        rc.train.variant = parse_variant(v)?;
    }
    if let Some(l) = a.lambda {
        rc.train.lambda = Some(l);
    }
    if let Some(m) = a.max_iterations {
        rc.train.max_iterations = m;
    }
    if let Some(b) = a.batch_size {
        rc.train.batch_size = b;
    }
    if let Some(p) = a.pool_size {
        rc.train.pool_size = p;
    }
    if a.monitor_uncertainty {
        rc.train.monitor_uncertainty = true;
    }
    if !a.graphs.is_empty() {
        rc.graphs = a.graphs.iter().map(|p| p.display().to_string()).collect();
    }
    if rc.graphs.is_empty() {
        return Err(Error::Config(
            "no input graphs (pass --graph or set graphs in the config file)".into(),
        ));
    }
    let baseline = a.baseline.as_deref().map(parse_baseline).transpose()?;
    audit("pretrain", &rc);

    let paths: Vec<PathBuf> = rc.graphs.iter().map(PathBuf::from).collect();
    let pool = load_pool(&paths)?;
    let ckpt_dir = a.out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    fs::write(
        a.out.join("resolved_config.json"),
        serde_json::to_string_pretty(&rc)? + "\n",
    )?;

    let outcome = match baseline {
        None => pretrain(&pool, &rc.train)?,
        Some(order) => pretrain_baseline(&pool, &rc.train, order)?,
    };

    let mut runlog = String::new();
    for record in &outcome.log.records {
        runlog.push_str(&serde_json::to_string(record)?);
        runlog.push('\n');
    }
    fs::write(a.out.join("runlog.jsonl"), runlog)?;
    let selection = SelectionSummary {
        chosen_history: &outcome.log.chosen_history,
        gamma_history: &outcome.log.gamma_history,
    };
    fs::write(
        a.out.join("selection.json"),
        serde_json::to_string_pretty(&selection)? + "\n",
    )?;

    let mut artifacts = vec![
        "resolved_config.json".to_string(),
        "runlog.jsonl".to_string(),
        "selection.json".to_string(),
    ];
    for (t, params) in &outcome.switch_snapshots {
        let name = format!("checkpoints/iter_{t:04}.ckpt");
        save_checkpoint(params, &CheckpointMeta { iteration: *t as u64 }, a.out.join(&name))?;
        artifacts.push(name);
    }
    let last_t = outcome.log.records.last().map_or(0, |r| r.t);
    save_checkpoint(
        &outcome.params,
        &CheckpointMeta { iteration: last_t as u64 },
        a.out.join("checkpoints/final.ckpt"),
    )?;
    artifacts.push("checkpoints/final.ckpt".into());

    // Wall time is real but not reproducible; it stays out of the
    // hashed artifact set.
    let meta = serde_json::json!({
        "wall_secs": outcome.log.wall_secs,
        "threads": rc.train.threads,
        "iterations": outcome.log.records.len(),
    });
    fs::write(a.out.join("run_meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;

    write_manifest(&a.out, &artifacts)?;
    Ok(0)
}

/// (dense node id, class index) pairs plus the sorted class names.
type LabelAssignment = (Vec<(usize, usize)>, Vec<String>);

/// Reads `node_id label` lines keyed by original file ids.
fn load_labels(path: &Path, ids: &[u64]) -> Result<LabelAssignment> {
    let text = fs::read_to_string(path)?;
    let name = path.display();
    let mut raw: BTreeMap<usize, String> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(id), Some(label), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Labels(format!(
                "{name}:{}: expected `node_id label`, got {line:?}",
                lineno + 1
            )));
        };
        let id: u64 = id.parse().map_err(|_| {
            Error::Labels(format!("{name}:{}: bad node id {id:?}", lineno + 1))
        })?;
        let dense = ids.binary_search(&id).map_err(|_| {
            Error::Labels(format!("{name}:{}: node {id} not in graph", lineno + 1))
        })?;
        if raw.insert(dense, label.to_string()).is_some() {
            return Err(Error::Labels(format!(
                "{name}:{}: node {id} labeled twice",
                lineno + 1
            )));
        }
    }
    if raw.is_empty() {
        return Err(Error::Labels(format!("{name}: no labels")));
    }
    let classes: Vec<String> = raw.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let pairs = raw
        .into_iter()
        .map(|(node, label)| {
            let class = classes.binary_search(&label).unwrap();
            (node, class)
        })
        .collect();
    Ok((pairs, classes))
}

#[derive(Serialize)]
struct ProbeReport {
    checkpoint: String,
    graph: String,
    n_labeled: usize,
    classes: Vec<String>,
    mean_f1: f64,
    std_f1: f64,
    per_split: Vec<f64>,
}

fn cmd_probe(a: &ProbeArgs) -> Result<i32> {
    let mut rc = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        rc.probe.seed = s;
    }
    if let Some(t) = a.threads {
        rc.probe.threads = t;
    }
    if let Some(s) = a.splits {
        rc.probe.splits = s;
    }
    if let Some(s) = a.steps {
        rc.probe.steps = s;
    }
    audit("probe", &rc);

    let (params, _) = load_checkpoint(&a.checkpoint)?;
    let (g, _, ids) = Graph::load_edge_list_ids(&a.graph)?;
    let (labeled, classes) = load_labels(&a.labels, &ids)?;
    // The sampler must emit exactly the feature width the checkpoint
    // was trained with.
    let mut sp = rc.train.sampler;
    sp.d_feat = params.cfg.d_feat;
    let all = embed_nodes(&params, &g, &sp, rc.probe.seed, rc.probe.threads);
    let embeddings: Vec<Vec<f64>> = labeled.iter().map(|&(node, _)| all[node].clone()).collect();
    let labels: Vec<usize> = labeled.iter().map(|&(_, class)| class).collect();
    let result = logistic_probe(&embeddings, &labels, &rc.probe)?;

    let report = ProbeReport {
        checkpoint: a.checkpoint.display().to_string(),
        graph: a.graph.display().to_string(),
        n_labeled: labeled.len(),
        classes,
        mean_f1: result.mean_f1,
        std_f1: result.std_f1,
        per_split: result.per_split,
    };
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("probe.json"), &text)?;
            write_manifest(dir, &["probe.json".into()])?;
        }
        None => print!("{text}"),
    }
    Ok(0)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn cmd_report(a: &ReportArgs) -> Result<i32> {
    audit("report", a);
    let mut runs: Vec<Vec<IterRecord>> = Vec::new();
    for path in &a.runlogs {
        let text = fs::read_to_string(path)?;
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            records.push(serde_json::from_str(line)?);
        }
        runs.push(records);
    }
    fs::create_dir_all(&a.out)?;

    let mut selection = String::from("run,step,t,graph,gamma\n");
    for (run, records) in runs.iter().enumerate() {
        let mut step = 0usize;
        let mut prev: Option<&str> = None;
        for r in records {
            if prev != Some(r.graph.as_str()) {
                selection.push_str(&format!(
                    "{run},{step},{},{},{}\n",
                    r.t,
                    csv_field(&r.graph),
                    opt(r.gamma)
                ));
                step += 1;
                prev = Some(r.graph.as_str());
            }
        }
    }
    fs::write(a.out.join("selection_order.csv"), selection)?;

    let mut loss = String::from("run,t,graph,mean_loss,penalty,graph_uncertainty,kept_instances\n");
    for (run, records) in runs.iter().enumerate() {
        for r in records {
            loss.push_str(&format!(
                "{run},{},{},{},{},{},{}\n",
                r.t,
                csv_field(&r.graph),
                r.mean_loss,
                r.penalty,
                opt(r.graph_uncertainty),
                r.kept_instances
            ));
        }
    }
    fs::write(a.out.join("loss_curve.csv"), loss)?;

    let mut forgetting = String::from("run,t,graph,uncertainty\n");
    for (run, records) in runs.iter().enumerate() {
        for r in records {
            if let Some(m) = &r.monitored {
                for (graph, u) in m {
                    forgetting.push_str(&format!("{run},{},{},{u}\n", r.t, csv_field(graph)));
                }
            }
        }
    }
    fs::write(a.out.join("forgetting.csv"), forgetting)?;

    write_manifest(
        &a.out,
        &[
            "selection_order.csv".into(),
            "loss_curve.csv".into(),
            "forgetting.csv".into(),
        ],
    )?;
    Ok(0)
}
