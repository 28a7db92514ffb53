use clap::Parser;

use structhash_cli::{exit_code, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage and flag errors exit 1; --help/--version exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    setup_threads(cli.threads);

    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

#[cfg(feature = "parallel")]
fn setup_threads(flag: Option<usize>) {
    let from_env = std::env::var("STRUCTHASH_THREADS").ok().and_then(|v| v.parse().ok());
    let threads = flag.or(from_env).unwrap_or(0);
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn setup_threads(flag: Option<usize>) {
    if flag.is_some() || std::env::var("STRUCTHASH_THREADS").is_ok() {
        log::warn!("built without the parallel feature; --threads is ignored");
    }
}
