use std::io::{BufRead, Read, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use sourcebridge::bioflow::{execute, parse_bioflow, LiveSource, Registry};
use sourcebridge::engine::{Engine, FileStore, MemoryStore, Run, RunState, RunStore};
use sourcebridge::eval::{build_run, parse_query_file, parse_run_file, write_run_file, MetricsReport};
use sourcebridge::process::{parse_pd_with, render_pd};
use sourcebridge::wrapper::{FixtureWeb, WrapContext};
use sourcebridge::DataTable;
use sourcebridge_server::api::{self, table_json, AppState};
use sourcebridge_server::fixture_server::{serve_sites, DEFAULT_STALL};
use sourcebridge_server::setup::{load_index, EngineOptions};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "sourcebridge", version, about = "Find data sources in the literature, wrap them and integrate their tables")]
struct Cli {
    #[command(flatten)]
    opts: EngineOptions,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus index management.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Answer a question end to end.
    Query {
        question: String,
        /// Extra context for the assistant.
        #[arg(long)]
        knowledge: Option<String>,
        /// Stop at each choice point and ask on the terminal.
        #[arg(long)]
        guided: bool,
        #[arg(long, value_enum, default_value = "table")]
        format: OutputFormat,
        /// Persist runs in this directory.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Process descriptions.
    Pd {
        #[command(subcommand)]
        command: PdCommand,
    },
    /// Integration queries.
    Bioflow {
        #[command(subcommand)]
        command: BioflowCommand,
    },
    /// Retrieval metrics for a run file, or for queries ranked over the corpus.
    Eval {
        /// Run file: JSON lines with query_id, relevant_doc_id, ranked.
        #[arg(long, conflicts_with = "queries")]
        run: Option<PathBuf>,
        /// Query file: JSON lines with query_id, relevant_doc_id, query.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Rank cutoff.
        #[arg(long, default_value_t = 4)]
        cutoff: usize,
        /// Documents ranked per query when building a run.
        #[arg(long, default_value_t = 10)]
        depth: usize,
        /// Write the built run here.
        #[arg(long, requires = "queries")]
        write_run: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        label: String,
        #[arg(long)]
        json: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Persist runs in this directory; in memory otherwise.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Runs executing at once.
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
    },
    /// Fixture sites.
    Fixtures {
        #[command(subcommand)]
        command: FixturesCommand,
    },
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Embed a JSON-lines corpus and save the index.
    Build {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PdCommand {
    /// Check a description and print it in canonical form.
    Parse { file: PathBuf },
    /// Check a description and store it in the kb.
    Add { file: PathBuf },
    /// List the kb.
    List,
}

#[derive(Subcommand)]
enum BioflowCommand {
    /// Execute a query file (`-` for stdin) against live sources.
    Run {
        file: PathBuf,
        /// Search term for sources without a bound predicate.
        #[arg(long, default_value = "")]
        term: String,
        #[arg(long, value_enum, default_value = "table")]
        format: OutputFormat,
    },
    /// Check a query and print it in canonical form.
    Parse { file: PathBuf },
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// Serve every site under a directory, one port each.
    Serve {
        /// Directory of sites; defaults to `<fixtures>/sites`.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        /// First port; sites take consecutive ports.
        #[arg(long, default_value_t = 9100)]
        port: u16,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Table,
    Csv,
    Tsv,
    Json,
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("SOURCEBRIDGE_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let opts = cli.opts;
    match cli.command {
        Command::Index {
            command: IndexCommand::Build { out },
        } => index_build(&opts, &out),
        Command::Query {
            question,
            knowledge,
            guided,
            format,
            store,
        } => query(&opts, &question, knowledge.as_deref(), guided, format, store.as_deref()),
        Command::Pd { command } => pd(&opts, command),
        Command::Bioflow { command } => bioflow(&opts, command),
        Command::Eval {
            run,
            queries,
            cutoff,
            depth,
            write_run,
            label,
            json,
        } => eval(&opts, run, queries, cutoff, depth, write_run, &label, json),
        Command::Serve {
            bind,
            port,
            store,
            concurrency,
        } => serve(&opts, SocketAddr::new(bind, port), store.as_deref(), concurrency),
        Command::Fixtures {
            command: FixturesCommand::Serve { dir, bind, port },
        } => fixtures_serve(&opts, dir, bind, port),
    }
}

fn read_input(path: &Path) -> Result<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn index_build(opts: &EngineOptions, out: &Path) -> Result<()> {
    let Some(corpus) = opts.corpus_path() else {
        bail!("no corpus: pass --corpus or --fixtures");
    };
    let embedder = opts.embedder()?;
    let index = load_index(&corpus, &*embedder)?;
    index.save(out).with_context(|| format!("writing {}", out.display()))?;
    println!("{} documents indexed with {} into {}", index.len(), index.embedder_id(), out.display());
    Ok(())
}

fn open_store(dir: Option<&Path>) -> Result<Arc<dyn RunStore>> {
    Ok(match dir {
        Some(d) => Arc::new(FileStore::open(d).with_context(|| format!("opening store {}", d.display()))?),
        None => Arc::new(MemoryStore::new()),
    })
}

fn engine(opts: &EngineOptions, store: Option<&Path>) -> Result<Engine> {
    Ok(Engine::new(opts.parts()?, opts.config(), open_store(store)?))
}

fn print_table(t: &DataTable, format: OutputFormat) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match format {
        OutputFormat::Csv => write!(out, "{}", t.to_delimited(b','))?,
        OutputFormat::Tsv => write!(out, "{}", t.to_delimited(b'\t'))?,
        OutputFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(&table_json(t))?)?,
        OutputFormat::Table => {
            let header = t.column_names();
            let rows: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(|c| c.render()).collect()).collect();
            let widths: Vec<usize> = (0..header.len())
                .map(|i| rows.iter().map(|r| r[i].chars().count()).chain([header[i].chars().count()]).max().unwrap_or(0))
                .collect();
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
            writeln!(out, "{}", line(&header))?;
            writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "))?;
            for r in &rows {
                writeln!(out, "{}", line(r))?;
            }
        }
    }
    Ok(())
}

fn report_steps(run: &Run, from: usize) -> usize {
    for s in run.steps.iter().skip(from) {
        eprintln!("[{}] {}", s.seq, serde_json::to_value(s.stage).unwrap_or_default().as_str().unwrap_or("?"));
    }
    run.steps.len()
}

fn ask(run: &Run) -> Result<usize> {
    let choice = run.choice.as_ref().context("run awaits a choice but has none")?;
    eprintln!();
    eprintln!("choose a {}:", serde_json::to_value(choice.kind)?.as_str().unwrap_or("option"));
    for o in &choice.options {
        let mark = if o.id == choice.default_option { "*" } else { " " };
        eprintln!(" {mark}{}. {}", o.id, o.label);
        if !o.summary.is_empty() {
            eprintln!("     {}", o.summary);
        }
    }
    let stdin = std::io::stdin();
    loop {
        eprint!("option [{}]: ", choice.default_option);
        std::io::stderr().flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            bail!("no choice made");
        }
        let line = line.trim();
        if line.is_empty() {
            return Ok(choice.default_option);
        }
        match line.parse::<usize>() {
            Ok(n) if (1..=choice.options.len()).contains(&n) => return Ok(n),
            _ => eprintln!("enter a number from 1 to {}", choice.options.len()),
        }
    }
}

fn query(
    opts: &EngineOptions,
    question: &str,
    knowledge: Option<&str>,
    guided: bool,
    format: OutputFormat,
    store: Option<&Path>,
) -> Result<()> {
    let engine = engine(opts, store)?;
    let mut run = if guided {
        engine.run_guided(question, knowledge)?
    } else {
        engine.run_auto(question, knowledge)?
    };
    let mut shown = report_steps(&run, 0);
    while run.state == RunState::AwaitingChoice {
        let option = ask(&run)?;
        run = engine.choose(&run.id, option)?;
        shown = report_steps(&run, shown);
    }
    eprintln!("run {} {}", run.id, serde_json::to_value(run.state)?.as_str().unwrap_or("?"));
    if let Some(plan) = &run.plan {
        eprintln!("{plan}");
    }
    match (&run.result, &run.error) {
        (Some(t), _) if run.state == RunState::Done => print_table(t, format),
        (_, Some(e)) => bail!("{}: {}", serde_json::to_value(e.kind)?.as_str().unwrap_or("error"), e.message),
        _ => bail!("run ended without a result"),
    }
}

fn pd(opts: &EngineOptions, command: PdCommand) -> Result<()> {
    let synonyms = opts.synonyms()?;
    match command {
        PdCommand::Parse { file } => {
            let text = read_input(&file)?;
            let pd = parse_pd_with(&text, &synonyms).map_err(|d| anyhow::anyhow!("{}:{d}", file.display()))?;
            print!("{}", render_pd(&pd));
        }
        PdCommand::Add { file } => {
            if opts.kb_path().is_none() {
                bail!("no kb: pass --kb or --fixtures");
            }
            let text = read_input(&file)?;
            let pd = parse_pd_with(&text, &synonyms).map_err(|d| anyhow::anyhow!("{}:{d}", file.display()))?;
            let name = pd.name.clone();
            let mut kb = opts.open_kb(&synonyms)?;
            kb.insert(pd)?;
            println!("stored {name}");
        }
        PdCommand::List => {
            let kb = opts.open_kb(&synonyms)?;
            for pd in kb.iter() {
                println!("{}\t{}\t{}", pd.name, pd.url, pd.column_names().join(","));
            }
        }
    }
    Ok(())
}

fn bioflow(opts: &EngineOptions, command: BioflowCommand) -> Result<()> {
    match command {
        BioflowCommand::Parse { file } => {
            let text = read_input(&file)?;
            let q = parse_bioflow(&text).map_err(|d| anyhow::anyhow!("{}:{d}", file.display()))?;
            println!("{}", sourcebridge::bioflow::render_bioflow(&q));
            Ok(())
        }
        BioflowCommand::Run { file, term, format } => {
            let text = read_input(&file)?;
            let q = parse_bioflow(&text).map_err(|d| anyhow::anyhow!("{}:{d}", file.display()))?;
            let parts = opts.parts()?;
            let kb = parts.kb.read();
            let source = LiveSource {
                ctx: WrapContext {
                    fetcher: &*parts.fetcher,
                    embedder: &*parts.embedder,
                    assistant: &*parts.assistant,
                    config: opts.config().wrap,
                },
                kb: &kb,
                synonyms: &parts.synonyms,
                default_term: term,
            };
            let ex = execute(&q, &source, &Registry::default(), &parts.synonyms)?;
            for f in &ex.failures {
                eprintln!("source {} failed ({}): {}", f.alias, f.error_class, f.error);
            }
            print_table(&ex.table, format)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn eval(
    opts: &EngineOptions,
    run: Option<PathBuf>,
    queries: Option<PathBuf>,
    cutoff: usize,
    depth: usize,
    write_run: Option<PathBuf>,
    label: &str,
    json: bool,
) -> Result<()> {
    let retrieval = match (run, queries) {
        (Some(path), _) => parse_run_file(&read_input(&path)?, cutoff)?,
        (None, Some(path)) => {
            let qs = parse_query_file(&read_input(&path)?)?;
            let embedder = opts.embedder()?;
            let index = opts.load_index(&*embedder)?;
            let r = build_run(&index, &*embedder, &qs, depth, cutoff)?;
            if let Some(out) = write_run {
                std::fs::write(&out, write_run_file(&r)).with_context(|| format!("writing {}", out.display()))?;
            }
            r
        }
        (None, None) => bail!("pass --run or --queries"),
    };
    let report = MetricsReport::compute(&retrieval)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_table(label));
    }
    Ok(())
}

async fn ctrl_c() {
    let _ = tokio::signal::ctrl_c().await;
}

fn serve(opts: &EngineOptions, addr: SocketAddr, store: Option<&Path>, concurrency: usize) -> Result<()> {
    let engine = Arc::new(engine(opts, store)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}/api/v1", listener.local_addr()?);
        api::serve(AppState::new(engine, concurrency), listener, ctrl_c()).await?;
        Ok(())
    })
}

fn fixtures_serve(opts: &EngineOptions, dir: Option<PathBuf>, bind: IpAddr, port: u16) -> Result<()> {
    let dir = dir
        .or_else(|| opts.sites.clone())
        .or_else(|| opts.fixtures.as_ref().map(|f| f.join("sites")))
        .context("pass --dir, --sites or --fixtures")?;
    let web = FixtureWeb::load_dir(&dir).with_context(|| format!("loading sites {}", dir.display()))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let (sites, handle) = serve_sites(&web, bind, port, DEFAULT_STALL, ctrl_c()).await?;
        for s in &sites {
            println!("{}\t{}\t--rewrite {}={}", s.base_url, s.origin, s.host, s.origin);
        }
        handle.await?;
        Ok(())
    })
}
