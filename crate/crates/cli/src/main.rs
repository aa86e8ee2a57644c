use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relatape_cli::{exit_code, PipelineConfig};

#[derive(Parser)]
#[command(name = "relatape", version, about = "Relational workflow pipeline tool")]
struct Cli {
    /// Store root directory (or RELATAPE_STORE)
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Object store root (default: <store>/objects)
    #[arg(long, global = true)]
    objects: Option<PathBuf>,
    /// Worker identity (or RELATAPE_WORKER_ID; default hostname:pid)
    #[arg(long, global = true)]
    worker_id: Option<String>,
    /// Emit machine-readable JSON where supported
    #[arg(long, global = true)]
    format_json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create store roots and an empty registry manifest
    Init,
    /// Parse a directory of .djt files and declare them in dependency order
    Declare {
        dir: PathBuf,
        /// Schema name (default: directory name)
        #[arg(long)]
        schema: Option<String>,
    },
    /// Insert canonical JSON rows from a file (one object per line)
    Insert { table: String, rows_file: PathBuf },
    /// Compute pending keys of an auto-populated table
    Populate {
        table: String,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Evaluate a pipeline query and print rows
    Query { pipeline: String },
    /// Delete matching rows and everything that depends on them
    Delete {
        table: String,
        /// Restrictions as attr=value
        restriction: Vec<String>,
    },
    /// Remove unreferenced objects
    Gc,
    /// Job-table status of an auto-populated table
    Status { table: String },
    /// Emit a DOT diagram of the registry
    Diagram {
        #[arg(long)]
        schema: Option<String>,
        /// Include attribute lists in node labels
        #[arg(long)]
        attrs: bool,
    },
    /// Print the origin set of table.attribute
    Lineage { target: String },
    /// Clear error records (and optionally stale reservations)
    ClearErrors {
        table: String,
        /// Restrict to keys matching attr=value
        restriction: Vec<String>,
        /// Also clear reservations older than this many seconds
        #[arg(long)]
        stale_after: Option<f64>,
    },
    /// Workflow-normalization lint over the declared schema
    Lint,
    /// Print the deterministic store snapshot
    Snapshot,
    /// Run the bundled LC-MS demonstration pipeline end to end
    Demo {
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Also write the fixture .djt files to this directory
        #[arg(long)]
        emit_schema: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let config = PipelineConfig::resolve(cli.store, cli.objects, cli.worker_id)?;
    let json = cli.format_json;
    match cli.command {
        Command::Init => relatape_cli::cmd_init(&config),
        Command::Declare { dir, schema } => {
            let mut db = config.open()?;
            relatape_cli::cmd_declare(&mut db, &dir, schema.as_deref())
        }
        Command::Insert { table, rows_file } => {
            let db = config.open()?;
            relatape_cli::cmd_insert(&db, &table, &rows_file)
        }
        Command::Populate { table, limit, workers } => {
            let db = config.open()?;
            relatape_cli::cmd_populate(&db, &table, &config.worker_id, workers, limit, json)
        }
        Command::Query { pipeline } => {
            let db = config.open()?;
            relatape_cli::cmd_query(&db, &pipeline, json)
        }
        Command::Delete { table, restriction } => {
            let db = config.open()?;
            relatape_cli::cmd_delete(&db, &table, &restriction, json)
        }
        Command::Gc => {
            let db = config.open()?;
            relatape_cli::cmd_gc(&db, json)
        }
        Command::Status { table } => {
            let db = config.open()?;
            relatape_cli::cmd_status(&db, &table, json)
        }
        Command::Diagram { schema, attrs } => {
            let db = config.open()?;
            relatape_cli::cmd_diagram(&db, schema, attrs)
        }
        Command::Lineage { target } => {
            let db = config.open()?;
            relatape_cli::cmd_lineage(&db, &target)
        }
        Command::ClearErrors { table, restriction, stale_after } => {
            let db = config.open()?;
            relatape_cli::cmd_clear_errors(&db, &table, &restriction, stale_after)
        }
        Command::Lint => {
            let db = config.open()?;
            relatape_cli::cmd_lint(&db)
        }
        Command::Snapshot => {
            let db = config.open()?;
            relatape_cli::cmd_snapshot(&db)
        }
        Command::Demo { workers, emit_schema } => {
            relatape_cli::cmd_demo(&config, workers, emit_schema.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(output) => {
            if !output.is_empty() {
                println!("{}", output.trim_end_matches('\n'));
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
