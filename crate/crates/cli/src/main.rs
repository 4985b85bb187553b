use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use fedfeed_core::pipeline::{self, ClientAssignment};
use fedfeed_core::storage::{self, IngestPaths};
use fedfeed_core::synth::{self, SynthConfig};
use fedfeed_core::{CategorySet, Config, Store};
use fedfeed_service::AppState;

#[derive(Parser)]
#[command(name = "fedfeed", version, about = "Federated content filtering and feed ranking")]
struct Cli {
    /// TOML config file (defaults to $FEDFEED_CONFIG, then built-in defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load JSONL users, posts and interactions into a state file.
    Ingest {
        #[arg(long)]
        users: PathBuf,
        #[arg(long)]
        posts: PathBuf,
        #[arg(long)]
        interactions: PathBuf,
        #[arg(long)]
        state: Option<PathBuf>,
        /// Comma-separated category names; inferred from post labels when omitted.
        #[arg(long, value_delimiter = ',')]
        categories: Option<Vec<String>>,
    },
    /// Generate a labeled synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 40)]
        users: usize,
        #[arg(long, default_value_t = 25)]
        posts_per_user: usize,
        #[arg(long, default_value_t = 4)]
        categories: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        friend_prob: f64,
        #[arg(long)]
        events_per_user: Option<usize>,
        /// Planted preference, e.g. `u1:sports=0.7,politics=0.3`. Repeatable.
        #[arg(long)]
        plant: Vec<String>,
    },
    /// Run federated training over the stored labeled posts and save the model.
    Train {
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        clients: Option<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        rounds: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// How posts are assigned to clients: user, iid or skew.
        #[arg(long, default_value = "user")]
        partition: ClientAssignment,
    },
    /// Print a user's ranked feed.
    Feed {
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        user: String,
        #[arg(long, default_value_t = fedfeed_service::DEFAULT_FEED_LIMIT as u64,
              value_parser = clap::value_parser!(u64).range(1..=fedfeed_service::MAX_FEED_LIMIT as u64))]
        limit: u64,
        /// Emit the same JSON body as `GET /api/feed/{user}`.
        #[arg(long)]
        json: bool,
    },
    /// Print a user's persona distribution.
    Persona {
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        user: String,
        /// Emit the same JSON body as `GET /api/persona/{user}`.
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP service until SIGINT or SIGTERM.
    Serve {
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

enum CliError {
    Usage(String),
    Data(String),
}

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let config = Config::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { users, posts, interactions, state, categories } => {
            let state = state_path(state, &config)?;
            let categories = categories.map(CategorySet::new).transpose().map_err(|e| CliError::Usage(e.to_string()))?;
            let now = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs() as i64)
                .unwrap_or(i64::MAX);
            let snap = storage::ingest(&IngestPaths { users, posts, interactions }, categories, now)?;
            storage::persist(&snap, &state)?;
            println!("{}", snap.counts());
        }
        Command::Synth { users, posts_per_user, categories, seed, out, friend_prob, events_per_user, plant } => {
            let mut cfg = SynthConfig { users, posts_per_user, categories, seed, friend_prob, ..SynthConfig::default() };
            if let Some(n) = events_per_user {
                cfg.events_per_user = n;
            }
            for spec in &plant {
                let (user, weights) = synth::parse_plant(spec).map_err(|e| CliError::Usage(e.to_string()))?;
                cfg.planted.insert(user, weights);
            }
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let corpus = synth::generate(&cfg)?;
            synth::write_corpus(&corpus, &out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
            println!(
                "users: {}, posts: {}, interactions: {}",
                corpus.users.len(),
                corpus.posts.len(),
                corpus.interactions.len()
            );
        }
        Command::Train { state, clients, rounds, lr, seed, partition } => {
            let state = state_path(state, &config)?;
            let mut train = config.train.clone();
            if let Some(n) = clients {
                train.num_clients = n as usize;
            }
            if let Some(r) = rounds {
                train.rounds = r as usize;
            }
            if let Some(a) = lr {
                train.learning_rate = a;
            }
            if let Some(s) = seed {
                train.seed = s;
            }
            train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let mut snap = storage::restore(&state)?;
            let outcome = pipeline::train_on_snapshot(&snap, &train, partition)?;
            let mut out = std::io::stdout().lock();
            for r in &outcome.reports {
                writeln!(out, "{}", serde_json::to_string(r)?)?;
            }
            let acc = outcome.reports.last().map(|r| r.eval_acc);
            snap.swap_model(outcome.params, outcome.reports.len() as u64, acc)?;
            storage::persist(&snap, &state)?;
        }
        Command::Feed { state, user, limit, json } => {
            let snap = storage::restore(&state_path(state, &config)?)?;
            let res = config.text_resources()?;
            let feed = pipeline::feed_for(&snap, &user, &config, &config.filter, &res, limit as usize)?;
            if json {
                println!("{}", serde_json::to_string(&feed)?);
                return Ok(());
            }
            let mut out = std::io::stdout().lock();
            writeln!(out, "feed for {} (snapshot {}, model {})", feed.user_id, feed.snapshot_version, feed.model_version)?;
            writeln!(out, "{:>4}  {:<10} {:<10} {:<20} {:>12} {:>10} {:>8} {:>6}", "rank", "post", "author", "category", "score", "P", "delta", "R")?;
            for e in &feed.items {
                let i = &e.item;
                writeln!(
                    out,
                    "{:>4}  {:<10} {:<10} {:<20} {:>12.6} {:>10.3} {:>8.2} {:>6.3}",
                    i.rank,
                    i.post_id,
                    i.author_id,
                    if i.general { format!("{} (general)", i.category) } else { i.category.clone() },
                    i.final_score,
                    i.importance,
                    i.friend_delta,
                    i.readability
                )?;
            }
            for w in &feed.warnings {
                writeln!(out, "warning: {w}")?;
            }
        }
        Command::Persona { state, user, json } => {
            let snap = storage::restore(&state_path(state, &config)?)?;
            let res = config.text_resources()?;
            let p = pipeline::persona_for(&snap, &user, &config, &res)?;
            if json {
                println!("{}", serde_json::to_string(&p)?);
                return Ok(());
            }
            let mut out = std::io::stdout().lock();
            writeln!(out, "persona for {} (updated {})", p.user_id, p.last_updated)?;
            writeln!(out, "{:<20} {:>10} {:>12}", "category", "beta", "share")?;
            for (cat, share) in &p.distribution {
                writeln!(out, "{:<20} {:>10.4} {:>12.6}", cat, p.beta[cat], share)?;
            }
        }
        Command::Serve { state, port, host } => {
            let state = state_path(state, &config)?;
            let store = Arc::new(Store::open(&state)?);
            let port = port.unwrap_or(config.port);
            let app = AppState::new(store, config, Some(state))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                println!("listening on http://{}", listener.local_addr()?);
                std::io::stdout().flush()?;
                fedfeed_service::serve(listener, app, fedfeed_service::shutdown_signal()).await
            })?;
        }
    }
    Ok(())
}

fn state_path(flag: Option<PathBuf>, config: &Config) -> Result<PathBuf, CliError> {
    flag.or_else(|| config.state_path.clone())
        .ok_or_else(|| CliError::Usage("no state file: pass --state or set FEDFEED_STATE_PATH".into()))
}
