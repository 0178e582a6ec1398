//! Command-line front end of the simulator: one subcommand per experiment,
//! all writing CSV and plain-text files into an output directory.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dnt_core::caching::{run_cache_sim, write_report_csv, write_trace_csv, Variant};
use dnt_core::cluster::ClusterAssignment;
use dnt_core::config::ExperimentConfig;
use dnt_core::fedsync::{read_checkpoint, write_checkpoint, Checkpoint, GlobalTwin, TwinTimeline};
use dnt_core::metrics::{cost_reduction, CostReport, QualityReport};
use dnt_core::network::build_physical_network;
use dnt_core::pipeline::{
    compare_maintenance_cost, evaluate_twins, htwin_phase, vtwin_phase, HTwinRunOptions, Scenario,
};
use dnt_core::threat::{format_attack_table, run_attack_eval, write_attack_csv, AttackGrid};
use dnt_core::traffic::generate_synthetic_traffic;
use dnt_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "dnt", version, about = "Digital network twin simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the configuration.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory [default: from the configuration, else `out`].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic cell traffic (`traffic.csv`).
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Cluster the cells on their training data (`clusters.csv`).
    Cluster {
        #[command(flatten)]
        common: Common,
    },
    /// Build one twin per cluster with synchronous rounds.
    Vtwin {
        #[command(flatten)]
        common: Common,
        /// Also build a single twin over all cells.
        #[arg(long)]
        no_cluster: bool,
    },
    /// Maintain the V-twin checkpoints asynchronously over the stream split.
    Htwin {
        #[command(flatten)]
        common: Common,
        /// Also maintain the single-twin ablation.
        #[arg(long)]
        no_cluster: bool,
        /// Directory holding the V-twin checkpoints [default: the output directory].
        #[arg(long, value_name = "DIR")]
        from: Option<PathBuf>,
    },
    /// Every aggregation rule under every attack, in both phases.
    AttackEval {
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate the caching policies (`cache_sim.csv`).
    CacheSim {
        #[command(flatten)]
        common: Common,
        /// Also write the request trace of this variant.
        #[arg(long, value_name = "VARIANT")]
        trace: Option<Variant>,
    },
    /// Merge the result CSVs of a run directory into `summary.txt` and `summary.csv`.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directory [default: the output directory].
        run_dir: Option<PathBuf>,
    },
}

/// Loaded configuration and resolved output directory of one invocation.
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(common: &Common) -> Result<Self> {
        let mut config = match &common.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        let out = common
            .out
            .clone()
            .or_else(|| config.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Context { config, out })
    }

    fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Process exit status for an error: 2 for configuration and input format
/// problems, 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Parse { .. } | Error::Schema(_) => 2,
        _ => 1,
    }
}

/// Runs one parsed command, printing a short account to stdout.
pub fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut log = stdout.lock();
    let text = match cli.command {
        Command::GenData { common } => gen_data(&Context::new(&common)?)?,
        Command::Cluster { common } => cluster(&Context::new(&common)?)?,
        Command::Vtwin { common, no_cluster } => vtwin(&Context::new(&common)?, no_cluster)?,
        Command::Htwin {
            common,
            no_cluster,
            from,
        } => {
            let ctx = Context::new(&common)?;
            let from = from.unwrap_or_else(|| ctx.out.clone());
            htwin(&ctx, &from, no_cluster)?
        }
        Command::AttackEval { common } => attack_eval(&Context::new(&common)?)?,
        Command::CacheSim { common, trace } => cache_sim(&Context::new(&common)?, trace)?,
        Command::Report { common, run_dir } => {
            let ctx = Context::new(&common)?;
            let dir = run_dir.unwrap_or_else(|| ctx.out.clone());
            report(&ctx, &dir)?
        }
    };
    log.write_all(text.as_bytes()).map_err(|e| Error::io("stdout", e))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(path)?))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e))
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn gen_data(ctx: &Context) -> Result<String> {
    let cfg = &ctx.config;
    cfg.validate()?;
    let network = build_physical_network(&cfg.network.grid())?;
    let data = generate_synthetic_traffic(&network, cfg.seed, cfg.network.horizon, &cfg.network.traffic)?;
    ctx.prepare()?;
    let path = ctx.path("traffic.csv");
    data.write_csv(std::io::BufWriter::new(create(&path)?))?;
    let rows = data.n_cells() * data.horizon();
    Ok(format!("wrote {rows} rows to {}\n", path.display()))
}

fn write_assignment(path: &Path, scn: &Scenario, assignment: &ClusterAssignment) -> Result<()> {
    let rows: Vec<Vec<String>> = scn
        .network
        .objects
        .iter()
        .map(|o| {
            vec![
                o.id.to_string(),
                o.position.0.to_string(),
                o.position.1.to_string(),
                assignment.assignment[&o.id].to_string(),
            ]
        })
        .collect();
    write_rows(path, &["cell_id", "x", "y", "cluster"], &rows)
}

pub fn cluster(ctx: &Context) -> Result<String> {
    let scn = Scenario::build(&ctx.config)?;
    let assignment = scn.cluster(ctx.config.clustering.k)?;
    ctx.prepare()?;
    let path = ctx.path("clusters.csv");
    write_assignment(&path, &scn, &assignment)?;
    Ok(format!(
        "k={} cluster sizes {:?}; wrote {}\n",
        assignment.k,
        assignment.sizes(),
        path.display()
    ))
}

/// File stem of a twin artifact: `{phase}_c{cluster}` or, for the
/// single-twin ablation, `{phase}_nocluster_c0`.
fn stem(phase: &str, clustered: bool, cluster: usize) -> String {
    if clustered {
        format!("{phase}_c{cluster}")
    } else {
        format!("{phase}_nocluster_c{cluster}")
    }
}

fn save_twin(ctx: &Context, name: &str, twin: &GlobalTwin, timeline: &TwinTimeline) -> Result<()> {
    let ck = Checkpoint {
        cluster_id: twin.cluster_id as u64,
        version: twin.version,
        window: ctx.config.forecaster.window as u64,
        params: twin.params.clone(),
    };
    write_bytes(&ctx.path(&format!("{name}.ckpt")), &write_checkpoint(&ck))?;
    let path = ctx.path(&format!("{name}_timeline.csv"));
    timeline.write_csv(std::io::BufWriter::new(create(&path)?))
}

fn quality_cells(q: &QualityReport<f64>) -> [String; 3] {
    [
        format!("{:.6}", q.mae.reported),
        format!("{:.6}", q.mse.reported),
        q.nrmse.map_or(String::new(), |m| format!("{:.6}", m.reported)),
    ]
}

fn cost_cells(c: &CostReport) -> [String; 3] {
    [
        c.comm_units.to_string(),
        c.raw_data_units.to_string(),
        c.compute_units.to_string(),
    ]
}

fn run_label(clustered: bool) -> &'static str {
    if clustered {
        "clustered"
    } else {
        "unclustered"
    }
}

pub fn vtwin(ctx: &Context, no_cluster: bool) -> Result<String> {
    let scn = Scenario::build(&ctx.config)?;
    let rule = scn.rule(ctx.config.fedsync.rule);
    ctx.prepare()?;
    let mut rows = Vec::new();
    let mut log = String::new();
    let variants: &[bool] = if no_cluster { &[true, false] } else { &[true] };
    for &clustered in variants {
        let k = if clustered { ctx.config.clustering.k } else { 1 };
        let assignment = scn.cluster(k)?;
        let runs = vtwin_phase(&scn, &assignment, &rule, &mut |_, _| Ok(()))?;
        for run in &runs {
            save_twin(
                ctx,
                &stem("vtwin", clustered, run.twin.cluster_id),
                &run.twin,
                &run.timeline,
            )?;
        }
        let twins: Vec<GlobalTwin> = runs.into_iter().map(|r| r.twin).collect();
        let quality = evaluate_twins(&scn, &twins, &assignment.assignment)?;
        let cost = twins.iter().fold(CostReport::default(), |acc, t| acc + t.cost);
        if clustered {
            write_assignment(&ctx.path("clusters.csv"), &scn, &assignment)?;
        }
        let mut row = vec![run_label(clustered).to_string(), k.to_string()];
        row.extend(quality_cells(&quality));
        row.extend(cost_cells(&cost));
        rows.push(row);
        writeln!(
            log,
            "V-twin {} (k={k}): test MAE {:.4}, {} checkpoints",
            run_label(clustered),
            quality.mae.reported,
            twins.len()
        )
        .expect("string write");
    }
    write_rows(
        &ctx.path("vtwin.csv"),
        &[
            "run",
            "k",
            "mae",
            "mse",
            "nrmse",
            "comm_units",
            "raw_data_units",
            "compute_units",
        ],
        &rows,
    )?;
    Ok(log)
}

fn load_twins(ctx: &Context, from: &Path, clustered: bool, k: usize) -> Result<Vec<GlobalTwin>> {
    let window = ctx.config.forecaster.window as u64;
    (0..k)
        .map(|c| {
            let path = from.join(format!("{}.ckpt", stem("vtwin", clustered, c)));
            let bytes = fs::read(&path).map_err(|_| {
                Error::State(format!(
                    "missing V-twin checkpoint {}; run `dnt vtwin{}` first",
                    path.display(),
                    if clustered { "" } else { " --no-cluster" }
                ))
            })?;
            let ck = read_checkpoint(&bytes)
                .map_err(|e| Error::State(format!("unreadable checkpoint {}: {e}", path.display())))?;
            if ck.cluster_id != c as u64 || ck.window != window {
                return Err(Error::State(format!(
                    "checkpoint {} holds cluster {} with window {}, expected cluster {c} with window {window}",
                    path.display(),
                    ck.cluster_id,
                    ck.window
                )));
            }
            Ok(GlobalTwin {
                cluster_id: c,
                params: ck.params,
                version: ck.version,
                cost: CostReport::default(),
            })
        })
        .collect()
}

pub fn htwin(ctx: &Context, from: &Path, no_cluster: bool) -> Result<String> {
    let scn = Scenario::build(&ctx.config)?;
    let rule = scn.rule(ctx.config.fedsync.rule);
    let variants: &[bool] = if no_cluster { &[true, false] } else { &[true] };
    let mut loaded = Vec::new();
    for &clustered in variants {
        let k = if clustered { ctx.config.clustering.k } else { 1 };
        let assignment = scn.cluster(k)?;
        let twins = load_twins(ctx, from, clustered, k)?;
        loaded.push((clustered, assignment, twins));
    }
    ctx.prepare()?;
    let mut rows = Vec::new();
    let mut cost_rows = Vec::new();
    let mut log = String::new();
    for (clustered, assignment, twins) in loaded {
        let out = htwin_phase(
            &scn,
            &assignment,
            twins.clone(),
            &rule,
            HTwinRunOptions {
                recluster: true,
                ..Default::default()
            },
            &mut |_, _| Ok(()),
        )?;
        for (twin, timeline) in out.twins.iter().zip(&out.timelines) {
            save_twin(ctx, &stem("htwin", clustered, twin.cluster_id), twin, timeline)?;
        }
        let quality = evaluate_twins(&scn, &out.twins, &out.assignment)?;
        let mut row = vec![
            run_label(clustered).to_string(),
            assignment.k.to_string(),
            out.events.to_string(),
            out.applied.to_string(),
        ];
        row.extend(quality_cells(&quality));
        row.extend(cost_cells(&out.cost));
        rows.push(row);
        writeln!(
            log,
            "H-twin {} (k={}): {} arrivals, {} aggregations, test MAE {:.4}",
            run_label(clustered),
            assignment.k,
            out.events,
            out.applied,
            quality.mae.reported
        )
        .expect("string write");

        if clustered {
            let cmp = compare_maintenance_cost(&scn, twins, &assignment)?;
            for (run, role, cost) in [
                ("htwin", "candidate", &cmp.htwin),
                ("centralized", "baseline", &cmp.centralized),
            ] {
                let mut r = vec![
                    run.to_string(),
                    role.to_string(),
                    cmp.events.to_string(),
                    cmp.period.0.to_string(),
                    cmp.period.1.to_string(),
                ];
                r.extend(cost_cells(cost));
                cost_rows.push(r);
            }
            writeln!(
                log,
                "maintenance over {} arrivals costs {:.1}% less than centralized remapping",
                cmp.events, cmp.reduction
            )
            .expect("string write");
        }
    }
    write_rows(
        &ctx.path("htwin.csv"),
        &[
            "run",
            "k",
            "events",
            "aggregations",
            "mae",
            "mse",
            "nrmse",
            "comm_units",
            "raw_data_units",
            "compute_units",
        ],
        &rows,
    )?;
    write_rows(
        &ctx.path("cost.csv"),
        &[
            "run",
            "role",
            "events",
            "start",
            "end",
            "comm_units",
            "raw_data_units",
            "compute_units",
        ],
        &cost_rows,
    )?;
    Ok(log)
}

pub fn attack_eval(ctx: &Context) -> Result<String> {
    let scn = Scenario::build(&ctx.config)?;
    let results = run_attack_eval(&scn, &AttackGrid::default())?;
    ctx.prepare()?;
    write_attack_csv(&results, std::io::BufWriter::new(create(&ctx.path("attack_eval.csv"))?))?;
    let table = format_attack_table(&results);
    write_bytes(&ctx.path("attack_eval.txt"), table.as_bytes())?;
    Ok(table)
}

pub fn cache_sim(ctx: &Context, trace: Option<Variant>) -> Result<String> {
    let out = run_cache_sim(&ctx.config.caching, ctx.config.seed, trace)?;
    ctx.prepare()?;
    write_report_csv(
        &out.reports,
        std::io::BufWriter::new(create(&ctx.path("cache_sim.csv"))?),
    )?;
    if trace.is_some() {
        write_trace_csv(
            &out.trace,
            std::io::BufWriter::new(create(&ctx.path("cache_trace.csv"))?),
        )?;
    }
    let mut log = String::new();
    for r in &out.reports {
        writeln!(
            log,
            "{:<16} hit rate {:.4}  interventions {:>6}  load cv {:.4}",
            r.variant.to_string(),
            r.hit_rate,
            r.interventions,
            r.load_cv
        )
        .expect("string write");
    }
    Ok(log)
}

/// Result files `report` knows how to summarize, in output order.
pub const REPORT_INPUTS: [&str; 5] = ["vtwin.csv", "htwin.csv", "cost.csv", "attack_eval.csv", "cache_sim.csv"];

struct Table {
    name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let schema = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line());
        Error::Schema(format!("{} line {line}: {e}", path.display()))
    };
    let header = r.headers().map_err(schema)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()).map_err(schema))
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok(Table {
        name: path.file_name().expect("file path").to_string_lossy().into_owned(),
        header,
        rows,
    })
}

fn render(table: &Table, out: &mut String) {
    let mut widths: Vec<usize> = table.header.iter().map(String::len).collect();
    for row in &table.rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    writeln!(out, "== {} ==", table.name).expect("string write");
    writeln!(out, "{}", line(&table.header)).expect("string write");
    for row in &table.rows {
        writeln!(out, "{}", line(row)).expect("string write");
    }
    out.push('\n');
}

fn column(table: &Table, name: &str) -> Result<usize> {
    table
        .header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("{} has no `{name}` column", table.name)))
}

/// Candidate/baseline ledgers from `cost.csv`.
fn cost_pair(table: &Table) -> Result<(CostReport, CostReport)> {
    let role = column(table, "role")?;
    let cols = [
        column(table, "comm_units")?,
        column(table, "raw_data_units")?,
        column(table, "compute_units")?,
    ];
    let parse = |row: &Vec<String>, line: usize| -> Result<CostReport> {
        let v = cols
            .iter()
            .map(|&c| {
                row[c]
                    .parse::<u64>()
                    .map_err(|e| Error::Schema(format!("{} line {line}: {e}", table.name)))
            })
            .collect::<Result<Vec<u64>>>()?;
        Ok(CostReport {
            comm_units: v[0],
            raw_data_units: v[1],
            compute_units: v[2],
            wall_time: 0.0,
        })
    };
    let find = |want: &str| -> Result<CostReport> {
        let (i, row) = table
            .rows
            .iter()
            .enumerate()
            .find(|(_, r)| r[role] == want)
            .ok_or_else(|| Error::Schema(format!("{} has no {want} row", table.name)))?;
        parse(row, i + 2)
    };
    Ok((find("candidate")?, find("baseline")?))
}

pub fn report(ctx: &Context, dir: &Path) -> Result<String> {
    let mut tables = Vec::new();
    for name in REPORT_INPUTS {
        let path = dir.join(name);
        if path.is_file() {
            tables.push(read_table(&path)?);
        }
    }
    let mut timelines: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .is_some_and(|n| n.to_string_lossy().ends_with("_timeline.csv"))
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    timelines.sort();
    if tables.is_empty() && timelines.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!(
                    "no results to summarize; expected any of {} or *_timeline.csv",
                    REPORT_INPUTS.join(", ")
                ),
            ),
        ));
    }
    for path in &timelines {
        tables.push(read_table(path)?);
    }

    let mut text = String::new();
    let mut machine = vec![];
    if let Some(cost) = tables.iter().find(|t| t.name == "cost.csv") {
        let (candidate, baseline) = cost_pair(cost)?;
        let reduction = cost_reduction(&candidate, &baseline, &ctx.config.cost)?;
        writeln!(
            text,
            "cost_reduction: {reduction:.2}% (candidate htwin vs baseline centralized)\n"
        )
        .expect("string write");
        machine.push(vec![
            "cost.csv".into(),
            "0".into(),
            "cost_reduction".into(),
            format!("{reduction:.6}"),
        ]);
    }
    for table in &tables {
        render(table, &mut text);
        for (i, row) in table.rows.iter().enumerate() {
            for (h, v) in table.header.iter().zip(row) {
                machine.push(vec![table.name.clone(), i.to_string(), h.clone(), v.clone()]);
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_bytes(&dir.join("summary.txt"), text.as_bytes())?;
    write_rows(
        &dir.join("summary.csv"),
        &["source", "row", "column", "value"],
        &machine,
    )?;
    Ok(text)
}
