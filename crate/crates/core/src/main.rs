use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use diematch::diegraph::{import_clusters, ExportFormat};
use diematch::evalmetrics::{ari, fmi, pair_confusion, FaceCategory};
use diematch::pipeline::{
    default_workers, export_at, generate_corpus, graph_from_scores, ingest_directory, load_graph, persist_graph,
    run_pairwise, run_registration_benchmark, serve, train_from_manifest, BenchMethod, CorpusManifest,
    PairCache, PairwiseConfig, ServiceOptions, ServiceState, SynthCorpusSpec,
};
use diematch::simscore::{read_model, read_scores_csv, write_model, TrainConfig};

type CliResult<T = ()> = Result<T, String>;

fn fail<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> String + '_ {
    move |e| format!("{context}: {e}")
}

#[derive(Parser)]
#[command(name = "diematch", version, about = "Coin-die analysis from 3D scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// JSON file with pairwise/registration settings (missing fields keep
    /// their defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Registration method: icp_rand, fpfh or external.
    #[arg(long)]
    method: Option<String>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl PipelineArgs {
    fn load(&self) -> CliResult<(PairwiseConfig, usize)> {
        let mut config = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(fail("reading config"))?;
                serde_json::from_str(&text).map_err(fail("parsing config"))?
            }
            None => PairwiseConfig::default(),
        };
        if let Some(m) = &self.method {
            config.method = m.parse().map_err(fail("--method"))?;
        }
        let workers = self.workers.unwrap_or_else(default_workers).max(1);
        Ok((config, workers))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a manifest from a directory of PLY scans.
    Ingest {
        #[arg(long)]
        dir: PathBuf,
        /// Face used when the id suffix does not tell (reverse,
        /// obverse_beard, obverse_no_beard).
        #[arg(long)]
        face: Option<FaceCategory>,
        /// Defaults to <dir>/manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the same-die model on the manifest's training pairs.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Score every pair of scans.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Resumable result cache (JSON lines).
        #[arg(long, env = "DIEMATCH_CACHE_DIR", value_parser = cache_file)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the similarity graph document.
        #[arg(long)]
        graph_out: Option<PathBuf>,
        /// Record wall-clock timings in the output (makes it
        /// non-reproducible).
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Threshold the similarity graph and export clusters.
    Cluster {
        /// Pair scores CSV.
        #[arg(long, conflicts_with = "graph", required_unless_present = "graph")]
        scores: Option<PathBuf>,
        /// Graph document (keeps manual edits).
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Adds scans without any scored pair as singletons.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        tau: f64,
        #[arg(long, default_value = "csv")]
        format: String,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the graph document built from --scores.
        #[arg(long)]
        graph_out: Option<PathBuf>,
    },
    /// Registration benchmark over intra-die pairs with known poses.
    BenchReg {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated: gt, icp_rand, fpfh, external.
        #[arg(long, default_value = "icp_rand,fpfh")]
        methods: String,
        /// Write the table here instead of standard output.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also write per-pair results as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Generate a synthetic corpus (PLY files and manifest).
    Synth {
        #[arg(long, default_value_t = 5)]
        dies: usize,
        #[arg(long, default_value_t = 6)]
        coins_per_die: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "reverse")]
        face: FaceCategory,
        /// Assign train/validation/test splits round-robin within dies.
        #[arg(long)]
        splits: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a clustering with the truth.
    Metrics {
        /// Predicted clusters (CSV or JSON export).
        #[arg(long)]
        pred: PathBuf,
        /// True clusters (CSV or JSON export) or a manifest with die ids.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Serve the graph over HTTP for the review UI.
    Serve {
        /// Defaults to $DIEMATCH_DATA_DIR/graph.json.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, env = "DIEMATCH_DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Bearer token required for edits.
        #[arg(long, env = "DIEMATCH_TOKEN")]
        token: String,
        /// Scan manifest (enables point and preview endpoints). Defaults to
        /// $DIEMATCH_DATA_DIR/manifest.json when present.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Result cache holding pair details.
        #[arg(long, env = "DIEMATCH_CACHE_DIR", value_parser = cache_file)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
}

/// A directory (existing or not) names the cache file inside it; an
/// existing file or a `.jsonl` path is used as is.
fn cache_file(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    let is_file = p.is_file() || p.extension().is_some_and(|e| e == "jsonl");
    Ok(if is_file { p } else { p.join("pairs.jsonl") })
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(fail("creating output directory"))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| format!("creating {}: {e}", path.display()))
}

fn format_of(path: &Path) -> ExportFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => ExportFormat::Json,
        _ => ExportFormat::Csv,
    }
}

fn read_labels(path: &Path) -> CliResult<std::collections::BTreeMap<String, usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    if format_of(path) == ExportFormat::Json {
        if let Ok(m) = serde_json::from_str::<CorpusManifest>(&text) {
            let mut dies: Vec<&String> = Vec::new();
            let mut out = std::collections::BTreeMap::new();
            for e in &m.entries {
                let d = e.die.as_ref().ok_or_else(|| format!("scan {} has no die id", e.id))?;
                let k = dies.iter().position(|x| *x == d).unwrap_or_else(|| {
                    dies.push(d);
                    dies.len() - 1
                });
                out.insert(e.id.clone(), k);
            }
            return Ok(out);
        }
    }
    let c = import_clusters(text.as_bytes(), format_of(path)).map_err(fail("reading clusters"))?;
    Ok(c.assignment().clone())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Ingest { dir, face, out } => {
            let mut m = ingest_directory(&dir, face).map_err(fail("ingest"))?;
            let out = out.unwrap_or_else(|| dir.join("manifest.json"));
            m.rebase(out.parent().unwrap_or(Path::new(""))).map_err(fail("ingest"))?;
            m.save(&out).map_err(fail("writing manifest"))?;
            eprintln!("{} scans -> {}", m.len(), out.display());
        }
        Command::Train { manifest, out, pipeline } => {
            let (config, workers) = pipeline.load()?;
            let m = CorpusManifest::load(&manifest).map_err(fail("manifest"))?;
            let (model, report) =
                train_from_manifest(&m, &config, &TrainConfig::default(), workers).map_err(fail("training"))?;
            write_model(&model, create(&out)?).map_err(fail("writing model"))?;
            eprintln!(
                "trained on {} pairs ({} failed registration), training accuracy {:.4}",
                report.n_pairs, report.n_failed, report.train_accuracy
            );
        }
        Command::Score {
            manifest,
            model,
            cache,
            out,
            graph_out,
            timings,
            pipeline,
        } => {
            let (mut config, workers) = pipeline.load()?;
            config.record_timings = timings;
            let m = CorpusManifest::load(&manifest).map_err(fail("manifest"))?;
            let model = read_model(BufReader::new(File::open(&model).map_err(fail("opening model"))?))
                .map_err(fail("reading model"))?;
            let mut cache = match cache {
                Some(p) => {
                    let fp = config.fingerprint(&model).map_err(fail("fingerprint"))?;
                    Some(PairCache::open(&p, fp).map_err(fail("opening cache"))?)
                }
                None => None,
            };
            let report = run_pairwise(&m, &model, &config, workers, cache.as_mut()).map_err(fail("scoring"))?;
            let mut w = create(&out)?;
            report.write_csv(&mut w).map_err(fail("writing scores"))?;
            w.flush().map_err(fail("writing scores"))?;
            if let Some(g) = graph_out {
                let graph = graph_from_scores(&m.ids(), &report.records()).map_err(fail("graph"))?;
                persist_graph(&graph, &g).map_err(fail("writing graph"))?;
            }
            eprintln!(
                "{} pairs scheduled, {} from cache, {} computed, {} failed",
                report.scheduled,
                report.cache_hits,
                report.computed,
                report.failures.len()
            );
            if !report.failures.is_empty() {
                eprint!("{}", report.failure_summary());
            }
        }
        Command::Cluster {
            scores,
            graph,
            manifest,
            tau,
            format,
            out,
            graph_out,
        } => {
            let format: ExportFormat = format.parse().map_err(fail("--format"))?;
            if !(0.0..=1.0).contains(&tau) {
                return Err(format!("--tau must be in [0, 1], got {tau}"));
            }
            let g = match (scores, graph) {
                (Some(s), _) => {
                    let records = read_scores_csv(File::open(&s).map_err(fail("opening scores"))?)
                        .map_err(fail("reading scores"))?;
                    let roster = match manifest {
                        Some(p) => CorpusManifest::load(p).map_err(fail("manifest"))?.ids(),
                        None => Vec::new(),
                    };
                    graph_from_scores(&roster, &records).map_err(fail("graph"))?
                }
                (None, Some(g)) => load_graph(&g).map_err(fail("reading graph"))?,
                (None, None) => unreachable!("clap requires one source"),
            };
            if let Some(p) = graph_out {
                persist_graph(&g, &p).map_err(fail("writing graph"))?;
            }
            let text = export_at(&g, tau, format).map_err(fail("export"))?;
            match out {
                Some(p) => {
                    let mut w = create(&p)?;
                    w.write_all(text.as_bytes()).map_err(fail("writing clusters"))?;
                    w.flush().map_err(fail("writing clusters"))?;
                }
                None => print!("{text}"),
            }
        }
        Command::BenchReg {
            manifest,
            methods,
            report,
            json,
            timings,
            pipeline,
        } => {
            let (config, workers) = pipeline.load()?;
            let m = CorpusManifest::load(&manifest).map_err(fail("manifest"))?;
            let methods = methods
                .split(',')
                .map(|s| s.trim().parse::<BenchMethod>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(fail("--methods"))?;
            let res = run_registration_benchmark(&m, None, &methods, &config.registration, timings, workers)
                .map_err(fail("benchmark"))?;
            let table = res.table();
            match report {
                Some(p) => {
                    let mut w = create(&p)?;
                    w.write_all(table.as_bytes()).map_err(fail("writing report"))?;
                    w.flush().map_err(fail("writing report"))?;
                }
                None => print!("{table}"),
            }
            if let Some(p) = json {
                let mut w = create(&p)?;
                serde_json::to_writer_pretty(&mut w, &res).map_err(fail("writing json"))?;
                writeln!(w).map_err(fail("writing json"))?;
            }
            for mb in &res.methods {
                if mb.n_failed() > 0 {
                    eprintln!("{}: {} pairs failed (scored as identity)", mb.method, mb.n_failed());
                }
            }
        }
        Command::Synth {
            dies,
            coins_per_die,
            seed,
            face,
            splits,
            out,
        } => {
            let spec = SynthCorpusSpec {
                seed,
                coins_per_die: vec![coins_per_die; dies],
                face,
                ..Default::default()
            };
            let mut corpus = generate_corpus(&spec).map_err(fail("synth"))?;
            if splits {
                corpus.assign_splits();
            }
            corpus.write(&out).map_err(fail("writing corpus"))?;
            eprintln!("{} scans -> {}", corpus.manifest.len(), out.display());
        }
        Command::Metrics { pred, truth } => {
            let p = read_labels(&pred)?;
            let t = read_labels(&truth)?;
            let c = pair_confusion(&p, &t).map_err(fail("metrics"))?;
            println!("fmi {:.6}", fmi(&p, &t).map_err(fail("metrics"))?);
            println!("ari {:.6}", ari(&p, &t).map_err(fail("metrics"))?);
            println!("tp {} fp {} fn {} tn {}", c.tp, c.fp, c.fn_, c.tn);
        }
        Command::Serve {
            graph,
            data_dir,
            port,
            host,
            token,
            manifest,
            cache,
            pipeline,
        } => {
            let (config, _) = pipeline.load()?;
            let graph_path = graph
                .or_else(|| data_dir.as_ref().map(|d| d.join("graph.json")))
                .ok_or("--graph or DIEMATCH_DATA_DIR is required")?;
            let g = load_graph(&graph_path).map_err(fail("reading graph"))?;
            let manifest = manifest.or_else(|| {
                data_dir
                    .as_ref()
                    .map(|d| d.join("manifest.json"))
                    .filter(|p| p.is_file())
            });
            let manifest = match manifest {
                Some(p) => Some(CorpusManifest::load(p).map_err(fail("manifest"))?),
                None => None,
            };
            let scores = match cache.filter(|p| p.is_file()) {
                Some(p) => diematch::pipeline::cache::read_all_scores(&p).map_err(fail("reading cache"))?,
                None => Vec::new(),
            };
            let addr: SocketAddr = format!("{host}:{port}").parse().map_err(fail("address"))?;
            let state = Arc::new(ServiceState::new(
                g,
                ServiceOptions {
                    graph_path: Some(graph_path),
                    token: Some(token),
                    manifest,
                    scores,
                    config,
                },
            ));
            let rt = tokio::runtime::Runtime::new().map_err(fail("runtime"))?;
            rt.block_on(serve(state, addr)).map_err(fail("serve"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
