use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use subkam::config::{parse_config, RunConfig, Task};
use subkam::instances::INSTANCE_NAMES;
use subkam::run::{execute, EXIT_ERROR};

/// Weak KAM experiments on sub-Riemannian control systems.
#[derive(Parser)]
#[command(name = "subkam", version)]
struct Cli {
    /// Configuration file.
    #[arg(long, required_unless_present = "list")]
    config: Option<PathBuf>,
    /// Overrides `task` in the file.
    #[arg(long)]
    task: Option<String>,
    /// Overrides `out_dir` in the file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print the effective configuration and exit without running.
    #[arg(long)]
    echo: bool,
    /// List the built-in instances and tasks.
    #[arg(long)]
    list: bool,
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("SUBKAM_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("SUBKAM_THREADS must be a positive integer, got `{v}`"))?;
    if n == 0 {
        return Err("SUBKAM_THREADS must be positive".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn load(cli: &Cli) -> Result<RunConfig, String> {
    let path = cli.config.as_ref().ok_or("missing --config")?;
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg = parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(t) = &cli.task {
        cfg.task = t.parse().map_err(|e: subkam::KamError| e.to_string())?;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn real_main() -> Result<i32, String> {
    let cli = Cli::parse();
    configure_threads()?;
    if cli.list {
        println!("instances: {}", INSTANCE_NAMES.join(", "));
        println!("tasks: {}", Task::ALL.map(Task::as_str).join(", "));
        return Ok(0);
    }
    let cfg = load(&cli)?;
    if cli.echo {
        print!("{}", cfg.echo());
        return Ok(0);
    }
    let outcome = execute(&cfg);
    let m = &outcome.manifest;
    println!("status: {}", m["status"].as_str().unwrap_or("unknown"));
    if let Some(c) = m.get("critical_value") {
        println!("critical value: {} ({})", c["value"], c["source"].as_str().unwrap_or(""));
    }
    for f in m["flags"].as_array().into_iter().flatten() {
        println!("flag: {}", f.as_str().unwrap_or(""));
    }
    if let Some(e) = m.get("error") {
        eprintln!("error: {}", e.as_str().unwrap_or(""));
    }
    println!("output: {}", cfg.out_dir.display());
    Ok(outcome.exit_code)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
