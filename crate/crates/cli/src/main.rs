use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lsk_core::fmaps::DifferenceKind;
use lsk_core::io::config::Config;
use lsk_core::io::manifest::Manifest;
use lsk_core::latent::NeighborChoice;
use lsk_core::mesh::MeshFormat;
use lsk_core::network::TopologyKind;
use lsk_core::pipeline::{self, GenerateRequest, MapSource, OpRequest, Workspace};
use lsk_core::synthetic::{SphereBumpSpec, TwoClusterSpec};
use lsk_core::variability::VariabilityMode;

/// Latent shape differences over functional map networks.
#[derive(Parser)]
#[command(name = "lsk", version)]
struct Cli {
    /// Workspace directory holding manifest.json and derived artifacts.
    #[arg(short, long, global = true, default_value = ".")]
    workspace: PathBuf,

    /// JSON configuration file (dimensions and tolerances).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute Laplacian spectra and Shape-DNA for every mesh in a directory.
    Spectra {
        #[arg(long)]
        meshes: PathBuf,
        /// Eigenbasis size per shape.
        #[arg(long)]
        k: Option<usize>,
        /// Restrict to one mesh format.
        #[arg(long, value_parser = parse_format)]
        format: Option<MeshFormat>,
    },
    /// Build the network topology and its functional maps.
    Fmn {
        /// mst, knn:K, clique or chain.
        #[arg(long, default_value = "mst", value_parser = parse_topology)]
        topology: TopologyKind,
        #[arg(long, default_value = "correspondence", value_parser = parse_source)]
        maps: MapSource,
        /// Directory of `<from>__<to>.txt` correspondence files.
        #[arg(long)]
        correspondences: PathBuf,
    },
    /// Consistent latent basis, canonical form and latent differences.
    Latent {
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, value_enum, default_value_t = KindArg::Both)]
        kind: KindArg,
        /// Use normalized conformal differences.
        #[arg(long)]
        normalized: bool,
    },
    /// Distinctive functions of the collection.
    Variability {
        #[arg(long, value_enum, default_value_t = ModeArg::Global)]
        mode: ModeArg,
        /// JSON file with `cluster_a` and `cluster_b` id lists.
        #[arg(long, required_if_eq("mode", "cross"))]
        partition: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        /// Write per-vertex fields for every shape.
        #[arg(long)]
        emit_fields: bool,
        #[arg(long, value_enum, default_value_t = SingleKind::Area)]
        kind: SingleKind,
    },
    /// Operator algebra on latent differences.
    Ops {
        #[command(subcommand)]
        op: OpCommand,
    },
    /// Attach a new shape to an existing latent basis.
    Extend {
        #[arg(long)]
        mesh: PathBuf,
        /// `neighbor_vertex new_vertex` pairs.
        #[arg(long)]
        correspondence: PathBuf,
        /// `auto` or a member id.
        #[arg(long, default_value = "auto")]
        neighbor: String,
    },
    /// Write a synthetic family to a directory.
    Generate {
        #[command(subcommand)]
        family: FamilyCommand,
    },
}

#[derive(Args)]
struct OpCommon {
    #[arg(long, value_enum, default_value_t = SingleKind::Area)]
    kind: SingleKind,
    /// Output name under ops/.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Subcommand)]
enum OpCommand {
    /// `B A^-1 C`: A is to B as C is to X.
    Analogy {
        a: String,
        b: String,
        c: String,
        #[command(flatten)]
        common: OpCommon,
    },
    /// Linear interpolation `(1 - t) A + t B`.
    Interp {
        a: String,
        b: String,
        #[arg(long)]
        t: f64,
        #[command(flatten)]
        common: OpCommon,
    },
    /// Replace the region part of A by that of B.
    Mix {
        a: String,
        b: String,
        /// Vertex indices on the member given by `--on` (default A).
        #[arg(long)]
        region: PathBuf,
        #[arg(long)]
        on: Option<String>,
        #[command(flatten)]
        common: OpCommon,
    },
    /// Spectrum descriptors of every shape.
    Descriptors {
        #[arg(long, value_enum, default_value_t = SingleKind::Area)]
        kind: SingleKind,
    },
    /// Nearest-neighbor pairing against another workspace.
    Align {
        #[arg(long)]
        other: PathBuf,
        /// ground_truth.json with a `pairing` list.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SingleKind::Area)]
        kind: SingleKind,
    },
}

#[derive(Subcommand)]
enum FamilyCommand {
    /// Spheres with a horizontal bump varying across all shapes and a vertical bump varying between clusters.
    SphereBump {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        subdiv: Option<u32>,
        #[arg(long)]
        horizontal_height: Option<f64>,
        /// Comma separated, one per cluster.
        #[arg(long, value_delimiter = ',')]
        vertical_heights: Option<Vec<f64>>,
        #[arg(long)]
        shapes_per_cluster: Option<usize>,
        #[arg(long)]
        jitter: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Frames of a one-parameter deformation.
    Chain {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 23)]
        count: usize,
        #[arg(long)]
        cycle: bool,
        #[arg(long, default_value_t = 2)]
        subdiv: u32,
    },
    /// Two clusters paired one to one, written to `a/` and `b/`.
    TwoCluster {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_per_cluster: Option<usize>,
        #[arg(long)]
        intra_spread: Option<f64>,
        #[arg(long)]
        inter_gap: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        subdiv: Option<u32>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Area,
    Conformal,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SingleKind {
    Area,
    Conformal,
}

impl From<SingleKind> for DifferenceKind {
    fn from(k: SingleKind) -> Self {
        match k {
            SingleKind::Area => DifferenceKind::Area,
            SingleKind::Conformal => DifferenceKind::Conformal,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Global,
    Cross,
}

fn parse_format(s: &str) -> Result<MeshFormat, String> {
    s.parse().map_err(|_| format!("unknown mesh format '{s}' (off, obj, ply)"))
}

fn parse_topology(s: &str) -> Result<TopologyKind, String> {
    s.parse().map_err(|e: lsk_core::Error| e.to_string())
}

fn parse_source(s: &str) -> Result<MapSource, String> {
    s.parse().map_err(|e: lsk_core::Error| e.to_string())
}

enum Failure {
    Usage(String),
    Compute(lsk_core::Error),
}

impl From<lsk_core::Error> for Failure {
    fn from(e: lsk_core::Error) -> Self {
        Failure::Compute(e)
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Explicit `--config`, else the config echoed in an existing manifest, else defaults.
fn effective_config(cli: &Cli) -> Result<Config, Failure> {
    if let Some(path) = &cli.config {
        return Config::load(path).map_err(|e| Failure::Usage(e.to_string()));
    }
    Ok(Manifest::read(&cli.workspace).map(|m| m.config).unwrap_or_default())
}

fn run(cli: Cli) -> CliResult {
    let ws = Workspace::new(&cli.workspace);
    match &cli.command {
        Command::Spectra { meshes, k, format } => {
            let mut config = effective_config(&cli)?;
            if let Some(k) = k {
                if *k == 0 {
                    return Err(Failure::Usage("--k must be positive".into()));
                }
                config.k = *k;
            }
            if !meshes.is_dir() {
                return Err(Failure::Usage(format!("{} is not a directory", meshes.display())));
            }
            let s = pipeline::run_spectra(&ws, meshes, *format, config)?;
            for w in &s.warnings {
                log::warn!("{w}");
            }
            if s.computed.is_empty() && s.failures.is_empty() {
                println!("up to date ({} shapes)", s.up_to_date.len());
            } else {
                println!("computed {} shapes, {} up to date", s.computed.len(), s.up_to_date.len());
            }
            if !s.failures.is_empty() {
                for (path, e) in &s.failures {
                    eprintln!("error: {}: {e}", path.display());
                }
                return Err(Failure::Compute(lsk_core::Error::precondition(format!(
                    "{} mesh(es) failed",
                    s.failures.len()
                ))));
            }
        }
        Command::Fmn {
            topology,
            maps,
            correspondences,
        } => {
            let s = pipeline::run_fmn(&ws, topology.clone(), *maps, correspondences)?;
            for n in &s.notes {
                log::info!("{n}");
            }
            println!("topology {}: {} directed edges", s.topology, s.directed_edges);
            println!(
                "consistency over {} cycles: min {:.3e} mean {:.3e} max {:.3e}",
                s.report.cycles.len(),
                s.report.min,
                s.report.mean,
                s.report.max
            );
        }
        Command::Latent { m, kind, normalized } => {
            let config = effective_config(&cli)?;
            let m = m.unwrap_or(config.m);
            let manifest = Manifest::read(&cli.workspace)?;
            let kmin = manifest.shapes.iter().map(|s| s.k).min().unwrap_or(0);
            if m == 0 || m > kmin {
                return Err(Failure::Usage(format!("--m {m} must be in 1..={kmin} (smallest k)")));
            }
            let kinds = match kind {
                KindArg::Area => vec![DifferenceKind::Area],
                KindArg::Conformal => vec![DifferenceKind::Conformal],
                KindArg::Both => vec![DifferenceKind::Area, DifferenceKind::Conformal],
            };
            let s = pipeline::run_latent(&ws, m, &kinds, *normalized)?;
            println!("m = {}", s.m);
            println!("consistency residual {:.3e}", s.consistency_residual);
            println!("constraint residual {:.3e}", s.constraint_residual);
            println!("diagonality residual {:.3e}", s.diagonality_residual);
            let head: Vec<String> = s.spectrum.iter().take(8).map(|v| format!("{v:.6e}")).collect();
            println!("latent spectrum head [{}]", head.join(", "));
            println!("{} difference files", s.difference_files);
        }
        Command::Variability {
            mode,
            partition,
            count,
            emit_fields,
            kind,
        } => {
            let config = effective_config(&cli)?;
            let partition = match partition {
                Some(p) => Some(pipeline::read_partition(p).map_err(|e| Failure::Usage(e.to_string()))?),
                None => None,
            };
            let mode = match mode {
                ModeArg::Global => VariabilityMode::Global,
                ModeArg::Cross => VariabilityMode::CrossCollection,
            };
            let count = count.unwrap_or(config.variability_count);
            if count == 0 {
                return Err(Failure::Usage("--count must be positive".into()));
            }
            let r = pipeline::run_variability(&ws, mode, partition.as_ref(), count, *emit_fields, (*kind).into())?;
            for (i, f) in r.result.functions.iter().enumerate() {
                println!("function {i}: eigenvalue {:.6e}", f.eigenvalue);
            }
            if r.result.degenerate {
                log::warn!("top eigenvalue is repeated; the leading function is not unique");
            }
            println!("embedding {}", r.embedding_file);
            if *emit_fields {
                println!("{} field files", r.field_files.len());
            }
        }
        Command::Ops { op } => run_op(&ws, op)?,
        Command::Extend {
            mesh,
            correspondence,
            neighbor,
        } => {
            if !correspondence.exists() {
                return Err(Failure::Usage(format!("correspondence {} not found", correspondence.display())));
            }
            let choice = if neighbor == "auto" {
                NeighborChoice::Auto
            } else {
                NeighborChoice::Id(neighbor.clone())
            };
            let s = pipeline::run_extend(&ws, mesh, correspondence, choice)?;
            println!("extended {} via neighbor {}", s.id, s.neighbor);
        }
        Command::Generate { family } => run_generate(family)?,
    }
    Ok(())
}

fn run_op(ws: &Workspace, op: &OpCommand) -> CliResult {
    let (req, common, default_name) = match op {
        OpCommand::Analogy { a, b, c, common } => (OpRequest::Analogy { a, b, c }, common, format!("analogy_{}_{}_{}", stem(a), stem(b), stem(c))),
        OpCommand::Interp { a, b, t, common } => (OpRequest::Interpolate { a, b, t: *t }, common, format!("interp_{}_{}_{t}", stem(a), stem(b))),
        OpCommand::Mix { a, b, region, on, common } => (
            OpRequest::Mix {
                a,
                b,
                region: region.as_path(),
                on: on.as_deref(),
            },
            common,
            format!("mix_{}_{}", stem(a), stem(b)),
        ),
        OpCommand::Descriptors { kind } => {
            for (id, d) in pipeline::descriptors(ws, (*kind).into())? {
                let head: Vec<String> = d.values.iter().take(6).map(|v| format!("{v:.4e}")).collect();
                println!("{id}: [{}]{}", head.join(", "), if d.symmetrized { " (symmetrized)" } else { "" });
            }
            return Ok(());
        }
        OpCommand::Align { other, truth, kind } => {
            let truth = match truth {
                Some(p) => Some(pipeline::read_pairing(p).map_err(|e| Failure::Usage(e.to_string()))?),
                None => None,
            };
            let other = Workspace::new(other);
            let a = pipeline::align(ws, &other, (*kind).into(), truth.as_deref())?;
            for (x, y) in &a.pairs {
                println!("{x} -> {y}");
            }
            if let Some(acc) = a.accuracy {
                println!("pairing accuracy {:.1}%", 100.0 * acc);
            }
            return Ok(());
        }
    };
    let name = common.name.clone().unwrap_or(default_name);
    let (expr, path) = pipeline::run_op(ws, req, common.kind.into(), &name)?;
    println!("{name}: {}x{} operator -> {}", expr.result.nrows(), expr.result.ncols(), path.display());
    Ok(())
}

fn stem(s: &str) -> String {
    Path::new(s)
        .file_stem()
        .and_then(|x| x.to_str())
        .unwrap_or(s)
        .to_string()
}

fn run_generate(family: &FamilyCommand) -> CliResult {
    let (req, out) = match family {
        FamilyCommand::SphereBump {
            out,
            subdiv,
            horizontal_height,
            vertical_heights,
            shapes_per_cluster,
            jitter,
            seed,
        } => {
            let d = SphereBumpSpec::default();
            let spec = SphereBumpSpec {
                subdiv: subdiv.unwrap_or(d.subdiv),
                horizontal_height: horizontal_height.unwrap_or(d.horizontal_height),
                vertical_heights: vertical_heights.clone().unwrap_or(d.vertical_heights),
                shapes_per_cluster: shapes_per_cluster.unwrap_or(d.shapes_per_cluster),
                radius: d.radius,
                jitter: jitter.unwrap_or(d.jitter),
                seed: seed.unwrap_or(d.seed),
            };
            if spec.shapes_per_cluster == 0 || spec.vertical_heights.is_empty() {
                return Err(Failure::Usage("need at least one cluster with one shape".into()));
            }
            (GenerateRequest::SphereBump(spec), out)
        }
        FamilyCommand::Chain { out, count, cycle, subdiv } => {
            if *count < 3 {
                return Err(Failure::Usage("--count must be at least 3".into()));
            }
            (
                GenerateRequest::Chain {
                    count: *count,
                    cycle: *cycle,
                    subdiv: *subdiv,
                },
                out,
            )
        }
        FamilyCommand::TwoCluster {
            out,
            n_per_cluster,
            intra_spread,
            inter_gap,
            seed,
            subdiv,
        } => {
            let d = TwoClusterSpec::default();
            let spec = TwoClusterSpec {
                n_per_cluster: n_per_cluster.unwrap_or(d.n_per_cluster),
                intra_spread: intra_spread.unwrap_or(d.intra_spread),
                inter_gap: inter_gap.unwrap_or(d.inter_gap),
                seed: seed.unwrap_or(d.seed),
                subdiv: subdiv.unwrap_or(d.subdiv),
            };
            if spec.n_per_cluster < 2 {
                return Err(Failure::Usage("--n-per-cluster must be at least 2".into()));
            }
            (GenerateRequest::TwoCluster(spec), out)
        }
    };
    pipeline::generate(&req, out)?;
    println!("wrote {}", out.display());
    Ok(())
}
