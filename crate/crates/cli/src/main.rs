use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gs_core::ingest::{AutoExtractor, CommandExtractor, UploadRequest};
use gs_core::lsp_bridge::{parse_lsp_config, LspPool};
use gs_core::service::tools::ToolRegistry;
use gs_core::service::{self, AppState, ServiceConfig};
use gs_core::service::wire::WireResponse;
use gs_core::skills::{self, SystemClock, TemplateExecutor};
use gs_core::{Analyzer, AnalyzerConfig, Bm25Params, Engine, EngineConfig, SearchQuery};

#[derive(Parser)]
#[command(name = "gs", version, about = "Ground coding agents in technical documents")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Directory holding the document store.
    #[arg(long, global = true, env = "GS_DATA_DIR", default_value = "gs-data")]
    data_dir: PathBuf,
    /// Stopword list, one term per line ('#' starts a comment).
    #[arg(long, global = true, env = "GS_STOPWORDS")]
    stopwords: Option<PathBuf>,
    #[arg(long, global = true, env = "GS_K1", default_value_t = 1.2)]
    k1: f64,
    #[arg(long, global = true, env = "GS_B", default_value_t = 0.75)]
    b: f64,
    /// Command that converts a PDF on stdin to text on stdout, e.g. "pdftotext - -".
    #[arg(long, global = true, env = "GS_PDF_COMMAND")]
    pdf_command: Option<String>,
    /// TOML file with [lsp.<language>] sections.
    #[arg(long, global = true, env = "GS_LSP_CONFIG")]
    lsp_config: Option<PathBuf>,
    /// Directory of skill files.
    #[arg(long, global = true, env = "GS_SKILLS_DIR", default_value = "skills")]
    skills_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long, env = "GS_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "GS_BIND", default_value = "127.0.0.1")]
        bind: String,
        /// Require this bearer token on every request.
        #[arg(long, env = "GS_TOKEN")]
        token: Option<String>,
        #[arg(long, env = "GS_INGEST_WORKERS", default_value_t = 2)]
        ingest_workers: usize,
    },
    /// Ingest a file synchronously.
    Ingest {
        file: PathBuf,
        #[arg(long)]
        markdown: bool,
    },
    /// Search the ingested documents.
    Search {
        query: String,
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 10)]
        max_results: usize,
    },
    /// Print the tool descriptors as JSON.
    Tools,
    /// Work with skill workflows.
    Skill {
        #[command(subcommand)]
        command: SkillCommand,
    },
}

#[derive(Subcommand)]
enum SkillCommand {
    /// Run a skill with the deterministic template executor.
    Run {
        name: String,
        #[arg(long)]
        query: String,
        /// Write the transcript JSON here instead of stdout.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// List loadable skills.
    List,
    /// Validate one skill file.
    Check { file: PathBuf },
}

impl Common {
    fn engine_config(&self) -> Result<EngineConfig> {
        let analyzer = match &self.stopwords {
            Some(path) => AnalyzerConfig::from_stopword_file(path)
                .with_context(|| format!("reading stopwords from {}", path.display()))?,
            None => AnalyzerConfig::default(),
        };
        let bm25 = Bm25Params::new(self.k1, self.b)?;
        let pdf = match &self.pdf_command {
            Some(cmd) => Some(CommandExtractor::parse(cmd).context("empty --pdf-command")?),
            None => None,
        };
        Ok(EngineConfig {
            analyzer,
            bm25,
            extractor: AutoExtractor { pdf },
        })
    }

    fn engine(&self) -> Result<Arc<Engine>> {
        let engine = Engine::open(&self.data_dir, self.engine_config()?)
            .with_context(|| format!("opening store at {}", self.data_dir.display()))?;
        Ok(Arc::new(engine))
    }

    fn lsp_pool(&self) -> Result<Option<Arc<LspPool>>> {
        let Some(path) = &self.lsp_config else { return Ok(None) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let entries = parse_lsp_config(&text)?;
        Ok(Some(Arc::new(LspPool::new(entries))))
    }

    fn tools(&self, engine: Arc<Engine>) -> Result<ToolRegistry> {
        Ok(ToolRegistry::standard(engine, self.lsp_pool()?))
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn print_results(response: &WireResponse) {
    if response.results.is_empty() {
        println!("no matches");
        return;
    }
    println!("tier: {}", response.tier.as_str());
    for (rank, r) in response.results.iter().enumerate() {
        let pages: Vec<String> = r.pages.iter().map(u32::to_string).collect();
        println!("{:>2}. {} [{}] score {:.4} pages {}", rank + 1, r.filename, r.doc_id, r.score, pages.join(","));
        for s in &r.snippets {
            println!("      p{}: {}", s.page, s.text.split_whitespace().collect::<Vec<_>>().join(" "));
        }
        for f in &r.figures {
            println!("      figure p{}: {}", f.page, f.caption);
        }
        for t in &r.tables {
            println!("      table p{}: {}", t.page, t.caption.as_deref().unwrap_or("(no caption)"));
        }
    }
}

fn load_skills(dir: &Path) -> Result<skills::SkillRegistry> {
    let report = skills::load_skills(dir)?;
    for d in &report.diagnostics {
        eprintln!("warning: {d}");
    }
    Ok(report.registry)
}

async fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match &cli.command {
        Command::Serve {
            port,
            bind,
            token,
            ingest_workers,
        } => {
            let engine = common.engine()?;
            let tools = common.tools(engine.clone())?;
            let config = ServiceConfig {
                bearer_token: token.clone(),
                ingest_workers: *ingest_workers,
            };
            let listener = tokio::net::TcpListener::bind((bind.as_str(), *port)).await?;
            eprintln!("listening on http://{}", listener.local_addr()?);
            let state = AppState::new(engine, tools, &config);
            tokio::select! {
                res = service::serve(listener, state) => res?,
                _ = tokio::signal::ctrl_c() => eprintln!("shutting down"),
            }
        }
        Command::Ingest { file, markdown } => {
            let engine = common.engine()?;
            let bytes = std::fs::read(file).with_context(|| format!("reading {}", file.display()))?;
            let filename = file
                .file_name()
                .and_then(|n| n.to_str())
                .context("file name is not valid UTF-8")?;
            let mut request = UploadRequest::new(filename, bytes);
            request.markdown_mode = *markdown;
            let outcome = engine.ingest_document(request)?;
            println!(
                "{} {} pages={} chunks={} figures={} tables={}{}",
                outcome.doc_id,
                filename,
                outcome.content.total_pages,
                outcome.content.chunks.len(),
                outcome.content.figures.len(),
                outcome.content.tables.len(),
                if outcome.replaced { " (replaced)" } else { "" }
            );
        }
        Command::Search { query, json, max_results } => {
            if query.trim().is_empty() {
                bail!("query must not be empty");
            }
            let engine = common.engine()?;
            let response = WireResponse::from(engine.search(&SearchQuery::new(query).with_max_results(*max_results))?);
            if *json {
                print_json(&response)?;
            } else {
                print_results(&response);
            }
        }
        Command::Tools => {
            let engine = common.engine()?;
            print_json(&common.tools(engine)?.descriptors())?;
        }
        Command::Skill { command } => match command {
            SkillCommand::List => {
                for skill in load_skills(&common.skills_dir)?.iter() {
                    println!("{}\t{}", skill.name, skill.description);
                }
            }
            SkillCommand::Check { file } => match skills::check_skill_file(file) {
                Ok(skill) => println!("ok: {} ({} steps)", skill.name, skill.steps.len()),
                Err(diags) => {
                    for d in &diags {
                        eprintln!("{d}");
                    }
                    bail!("{} problem(s) in {}", diags.len(), file.display());
                }
            },
            SkillCommand::Run { name, query, transcript } => {
                let registry = load_skills(&common.skills_dir)?;
                let skill = registry
                    .get(name)
                    .with_context(|| format!("no skill named `{name}` in {}", common.skills_dir.display()))?;
                let engine = common.engine()?;
                let tools = common.tools(engine.clone())?;
                let analyzer = Analyzer::new(common.engine_config()?.analyzer);
                let result = skills::execute(skill, query, &tools, &TemplateExecutor, &SystemClock, &analyzer)?;
                match transcript {
                    Some(path) => {
                        std::fs::write(path, serde_json::to_vec_pretty(&result)?)?;
                        eprintln!("transcript written to {}", path.display());
                    }
                    None => print_json(&result)?,
                }
                if let skills::RunStatus::Halted { step, reason } = &result.status {
                    bail!("halted at `{step}`: {reason}");
                }
            }
        },
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("GS_LOG"))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
