use clap::Parser;
use fnirvar_cli::{init_thread_pool, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = init_thread_pool().and_then(|()| run(&cli));
    if let Err(e) = result {
        let line = serde_json::json!({
            "error": e.kind(),
            "command": cli.command.name(),
            "message": e.to_string(),
        });
        eprintln!("{line}");
        std::process::exit(e.exit_code());
    }
}
