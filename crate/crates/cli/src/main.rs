use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use knoll_core::chunker::{self, DEFAULT_CHUNK_BUDGET};
use knoll_core::clustering::{self, MergeMap};
use knoll_core::config::KnollConfig;
use knoll_core::evalkit::{
    self, planted, run_ablation, BarePipeline, KnollPipeline, LabeledQuery, PairwiseRecord, Variant,
};
use knoll_core::proxy::{self, build_injection_prompt, chips_for, ProxyState, Upstream};
use knoll_core::registry::{
    ClippingFormat, ModuleId, NewModule, ShareToken, Visibility, DEFAULT_OWNER,
};
use knoll_core::router::{ConversationId, ConversationState, QueryContext, Router};
use knoll_core::service::Knoll;
use knoll_core::sources::SourceLocator;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "knoll",
    version,
    about = "Route user-curated knowledge modules into LLM chats"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "KNOLL_CONFIG")]
    config: Option<PathBuf>,
    /// Registry directory; overrides `data_dir` from the config.
    #[arg(long, global = true, env = "KNOLL_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manage knowledge modules.
    #[command(subcommand)]
    Module(ModuleCmd),
    /// Manage the Personal Module's clippings.
    #[command(subcommand)]
    Clip(ClipCmd),
    /// Print how a Markdown file would be chunked.
    Chunk {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CHUNK_BUDGET)]
        budget: usize,
        #[arg(long, default_value = "Doc")]
        name: String,
    },
    /// Route one query against the active modules and print the result.
    Route {
        query: String,
        /// Conversation to continue; its state is kept in the data directory.
        #[arg(long)]
        conversation: Option<String>,
        /// Print the prompt that would be sent upstream.
        #[arg(long)]
        show_prompt: bool,
    },
    /// Run the chat-completions proxy and registry API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Base URL of the OpenAI-compatible upstream, e.g. https://api.openai.com/v1
        #[arg(long)]
        upstream: Option<String>,
    },
    /// Evaluation tools.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Group queries into tasks with k-means and summarize each group.
    Cluster {
        /// JSON Lines with a "query" field, or one query per line.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON object from group name to the cluster indices merged into it.
        #[arg(long)]
        merge_map: Option<PathBuf>,
    },
    /// Load-test the proxy against a mock upstream.
    Stress {
        #[arg(long, default_value_t = 100)]
        users: usize,
        #[arg(long, default_value_t = 10)]
        requests: usize,
    },
}

#[derive(Subcommand)]
enum ModuleCmd {
    /// Create a module from a file, a URL, or inline text.
    Add {
        #[arg(long)]
        name: String,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long, default_value = "private")]
        visibility: Visibility,
        #[arg(long, default_value = DEFAULT_OWNER)]
        owner: String,
    },
    /// List your modules, or search public ones.
    List {
        #[arg(long, default_value = DEFAULT_OWNER)]
        owner: String,
        #[arg(long)]
        query: Option<String>,
    },
    /// Switch a module on or off.
    Toggle {
        id: String,
        #[arg(value_parser = ["on", "off"])]
        state: String,
    },
    /// Issue a share token.
    Share {
        id: String,
        #[arg(long, default_value = DEFAULT_OWNER)]
        owner: String,
    },
    /// Change who can see a module.
    Visibility { id: String, visibility: Visibility },
    /// Re-fetch a module from its source.
    Refresh { id: String },
    /// Copy a shared module into your own scope.
    Import {
        token: String,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value = DEFAULT_OWNER)]
        owner: String,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct SourceArgs {
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long)]
    url: Option<String>,
    #[arg(long)]
    text: Option<String>,
}

#[derive(Subcommand)]
enum ClipCmd {
    /// Save a clipping.
    Add {
        text: String,
        #[arg(long)]
        source_url: Option<String>,
    },
    /// Print all clippings.
    Export {
        #[arg(long, default_value = "plain_text")]
        format: ClippingFormat,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Capped recall of a router variant on a labeled dataset over the active modules.
    Recall {
        /// JSON Lines of {"query", "relevant_module_ids"}; ids may also be module names.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "retrieve_rerank")]
        variant: Variant,
    },
    /// Every variant on the built-in synthetic corpus with an oracle reranker.
    Planted {
        #[arg(long, default_value_t = planted::PLANTED_SEED)]
        seed: u64,
    },
    /// Write side-by-side answers (with and without knowledge) for raters.
    Pairwise {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Win rate with a 95% Wald interval from a rated annotation file.
    Score {
        #[arg(long)]
        choices: PathBuf,
        #[arg(long, default_value = "knoll")]
        pipeline: String,
    },
    /// Fleiss's kappa for a JSON subjects × categories count table.
    Kappa {
        #[arg(long)]
        table: PathBuf,
    },
}

struct Ctx {
    config: KnollConfig,
    data_dir: PathBuf,
}

impl Ctx {
    fn load(cli: &Cli) -> Result<Self> {
        let config = match &cli.config {
            Some(path) => KnollConfig::load(path)?,
            None => KnollConfig::default(),
        };
        let data_dir = cli
            .data_dir
            .clone()
            .or_else(|| config.data_dir.clone())
            .unwrap_or_else(|| PathBuf::from("knoll-data"));
        Ok(Self { config, data_dir })
    }

    fn knoll(&self) -> Result<Arc<Knoll>> {
        let knoll = Knoll::from_config(&self.config, &self.data_dir)
            .with_context(|| format!("opening registry at {}", self.data_dir.display()))?;
        Ok(Arc::new(knoll))
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if line.starts_with('{') {
            let v: serde_json::Value = serde_json::from_str(line)?;
            let q = v["query"]
                .as_str()
                .context("JSON line without a \"query\" string")?;
            out.push(q.to_owned());
        } else {
            out.push(line.to_owned());
        }
    }
    Ok(out)
}

fn conversation_path(data_dir: &Path, id: &str) -> PathBuf {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    data_dir.join("conversations").join(format!("{safe}.json"))
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "knoll_core=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let ctx = Ctx::load(&cli)?;
    match cli.command {
        Command::Module(cmd) => module(&ctx, cmd).await,
        Command::Clip(cmd) => clip(&ctx, cmd),
        Command::Chunk { file, budget, name } => {
            let text = std::fs::read_to_string(&file)?;
            let chunks = chunker::split_text(&ModuleId::from("local"), &name, &text, budget)?;
            let rows: Vec<_> = chunks
                .iter()
                .map(|c| {
                    json!({
                        "index": c.index,
                        "breadcrumb": c.breadcrumb,
                        "token_estimate": c.token_estimate,
                        "oversized": c.oversized,
                        "content_hash": c.content_hash,
                    })
                })
                .collect();
            print_json(&rows)
        }
        Command::Route {
            query,
            conversation,
            show_prompt,
        } => route(&ctx, query, conversation, show_prompt).await,
        Command::Serve {
            port,
            host,
            upstream,
        } => serve(&ctx, &host, port, upstream).await,
        Command::Eval(cmd) => eval(&ctx, cmd).await,
        Command::Cluster {
            queries,
            seed,
            merge_map,
        } => {
            let queries = read_lines(&queries)?;
            let merge: Option<MergeMap> = match merge_map {
                Some(path) => Some(serde_json::from_str(&std::fs::read_to_string(path)?)?),
                None => None,
            };
            let llm = ctx.config.llm()?;
            let embedder = ctx.config.embedder();
            let report = clustering::cluster_queries(
                &queries,
                llm.as_ref(),
                embedder.as_ref(),
                seed,
                merge.as_ref(),
            )
            .await?;
            print_json(&report)
        }
        Command::Stress { users, requests } => {
            let knoll = ctx.knoll()?;
            let queries = vec!["How should I structure my study notes?".to_owned()];
            let report = proxy::stress::stress_test(knoll, users, requests, &queries).await?;
            print_json(&report)
        }
    }
}

async fn module(ctx: &Ctx, cmd: ModuleCmd) -> Result<()> {
    let knoll = ctx.knoll()?;
    let registry = knoll.registry();
    match cmd {
        ModuleCmd::Add {
            name,
            source,
            description,
            visibility,
            owner,
        } => {
            let mut new =
                NewModule::inline(name, visibility, source.text.clone().unwrap_or_default())
                    .description(description)
                    .owner(owner);
            if let Some(file) = source.file {
                let path = std::fs::canonicalize(&file)
                    .with_context(|| format!("resolving {}", file.display()))?;
                new = new.source(SourceLocator::local_file(path));
            } else if let Some(url) = source.url {
                new = new.source(SourceLocator::http_raw(&url)?);
            }
            let module = knoll.create_module(new).await?;
            print_json(&module.summary())
        }
        ModuleCmd::List { owner, query } => match query {
            Some(q) => print_json(&registry.search_modules(&q)),
            None => print_json(&registry.list_modules(&owner)),
        },
        ModuleCmd::Toggle { id, state } => {
            print_json(&registry.toggle_module(&ModuleId::from(id), state == "on")?)
        }
        ModuleCmd::Share { id, owner } => {
            let token = registry.share_module(&ModuleId::from(id), &owner)?;
            print_json(&json!({ "token": token }))
        }
        ModuleCmd::Visibility { id, visibility } => print_json(
            &registry
                .set_visibility(&ModuleId::from(id), visibility)?
                .summary(),
        ),
        ModuleCmd::Refresh { id } => print_json(&knoll.refresh_module(&ModuleId::from(id)).await?),
        ModuleCmd::Import { token, name, owner } => {
            let module =
                registry.import_by_token(&ShareToken::from(token.as_str()), &owner, name)?;
            print_json(&module.summary())
        }
    }
}

fn clip(ctx: &Ctx, cmd: ClipCmd) -> Result<()> {
    let knoll = ctx.knoll()?;
    match cmd {
        ClipCmd::Add { text, source_url } => {
            print_json(&knoll.registry().add_clipping(&text, source_url)?)
        }
        ClipCmd::Export { format } => {
            println!("{}", knoll.registry().export_clippings(format));
            Ok(())
        }
    }
}

async fn route(
    ctx: &Ctx,
    query: String,
    conversation: Option<String>,
    show_prompt: bool,
) -> Result<()> {
    let knoll = ctx.knoll()?;
    let store = knoll.router().conversations();
    let conv = conversation.map(|c| {
        (
            ConversationId::from(c.as_str()),
            conversation_path(&ctx.data_dir, &c),
        )
    });
    let mut qc = QueryContext::new(query.clone());
    if let Some((id, path)) = &conv {
        if path.exists() {
            let state: ConversationState = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            store.restore(id.clone(), state);
        }
        qc = qc
            .in_conversation(id.clone())
            .with_previous(store.previous_query(id));
    }

    let result = knoll.route(&qc).await?;

    if let Some((id, path)) = &conv {
        store.set_previous_query(id, query.clone());
        let state = store.state(id).unwrap_or_default();
        std::fs::create_dir_all(
            path.parent()
                .expect("conversation files live in a directory"),
        )?;
        std::fs::write(path, serde_json::to_string_pretty(&state)?)?;
    }

    let injected: Vec<_> = result
        .injected
        .iter()
        .map(|d| json!({ "breadcrumb": d.doc.breadcrumb, "score": d.score }))
        .collect();
    let selected: Vec<_> = result
        .selected
        .iter()
        .map(|d| json!({ "breadcrumb": d.doc.breadcrumb, "score": d.score }))
        .collect();
    let mut out = json!({
        "modules": chips_for(&result),
        "selected": selected,
        "injected": injected,
        "pool_size": result.pool.len(),
    });
    if show_prompt {
        out["prompt"] = json!(build_injection_prompt(&result.injected, &query));
    }
    print_json(&out)
}

async fn serve(ctx: &Ctx, host: &str, port: u16, upstream: Option<String>) -> Result<()> {
    let configured = ctx.config.upstream();
    let upstream = match (upstream, configured) {
        (Some(url), configured) => Upstream {
            base_url: url,
            api_key: configured.and_then(|u| u.api_key).or_else(|| {
                std::env::var(knoll_core::config::UPSTREAM_KEY_ENV)
                    .ok()
                    .filter(|k| !k.is_empty())
            }),
        },
        (None, Some(u)) => u,
        (None, None) => bail!("no upstream: pass --upstream or set [upstream] in the config"),
    };
    let knoll = ctx.knoll()?;
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .context("invalid host or port")?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!(
        "knoll listening on http://{} (upstream {})",
        listener.local_addr()?,
        upstream.base_url
    );
    proxy::serve(listener, ProxyState::new(knoll, upstream)).await?;
    Ok(())
}

async fn eval(ctx: &Ctx, cmd: EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::Recall { dataset, variant } => {
            let knoll = ctx.knoll()?;
            let corpus = knoll.registry().active_modules();
            let text = std::fs::read_to_string(&dataset)?;
            let mut queries = Vec::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let mut q: LabeledQuery = serde_json::from_str(line)?;
                q.relevant_module_ids = q
                    .relevant_module_ids
                    .into_iter()
                    .map(|r| {
                        corpus
                            .iter()
                            .find(|m| m.name == r)
                            .map(|m| m.id.to_string())
                            .unwrap_or(r)
                    })
                    .collect();
                queries.push(q);
            }
            let llm = match variant {
                Variant::LlmClassifier => Some(ctx.config.llm()?),
                _ => None,
            };
            let run =
                run_ablation(variant, knoll.router(), &corpus, &queries, llm.as_deref()).await?;
            print_json(&json!({
                "variant": run.variant,
                "recall": run.report.recall,
                "n_queries": run.report.n_queries,
                "relevance_at_1": evalkit::context_relevance_at_k(&run.dataset, 1),
                "relevance_at_5": evalkit::context_relevance_at_k(&run.dataset, 5),
                "parse_failures": run.parse_failures,
            }))
        }
        EvalCmd::Planted { seed } => {
            let corpus = planted::planted_corpus(seed);
            let router = Router::new(
                ctx.config.router.clone(),
                ctx.config.embedder(),
                Arc::new(corpus.oracle.clone()),
            )?;
            let mut rows = Vec::new();
            for variant in [
                Variant::RetrieveRerank,
                Variant::RetrieveOnly,
                Variant::AlwaysEmpty,
            ] {
                let run =
                    run_ablation(variant, &router, &corpus.modules, &corpus.queries, None).await?;
                rows.push(json!({ "variant": variant, "recall": run.report.recall }));
            }
            print_json(&rows)
        }
        EvalCmd::Pairwise { queries, out, seed } => {
            let queries = read_lines(&queries)?;
            let llm = ctx.config.llm()?;
            let with = KnollPipeline {
                knoll: ctx.knoll()?,
                llm: llm.clone(),
            };
            let without = BarePipeline { llm };
            let records = evalkit::export_pairwise(&queries, &with, &without, seed).await?;
            std::fs::write(&out, evalkit::to_jsonl(&records))?;
            eprintln!("wrote {} records to {}", records.len(), out.display());
            Ok(())
        }
        EvalCmd::Score { choices, pipeline } => {
            let text = std::fs::read_to_string(&choices)?;
            let records: Vec<PairwiseRecord> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<_, _>>()?;
            print_json(&evalkit::score_choices(&records, &pipeline)?)
        }
        EvalCmd::Kappa { table } => {
            let counts: Vec<Vec<usize>> = serde_json::from_str(&std::fs::read_to_string(table)?)?;
            print_json(&json!({ "kappa": evalkit::fleiss_kappa(&counts)? }))
        }
    }
}
