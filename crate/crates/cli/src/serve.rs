use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use pkgtrace_core::ml::load_model;
use pkgtrace_core::sandbox::DEFAULT_PHASE_TIMEOUT_S;
use pkgtrace_core::BackendSpec;
use pkgtrace_service::{api, Service, ServiceConfig, DEFAULT_MAX_UPLOAD_BYTES, DEFAULT_WORKERS};

use crate::exit;

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WORKERS)]
    pub workers: usize,
    #[arg(long, default_value_t = DEFAULT_PHASE_TIMEOUT_S)]
    pub timeout: u64,
    /// Upload limit in bytes.
    #[arg(long, default_value_t = DEFAULT_MAX_UPLOAD_BYTES)]
    pub max_upload: usize,
    #[arg(long, default_value = "strace")]
    pub strace: PathBuf,
    /// Run live jobs through this wrapper instead of strace directly.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

pub fn run(args: ServeArgs) -> anyhow::Result<u8> {
    let live_backend = match &args.template {
        Some(t) => BackendSpec::CommandTemplate {
            template: shlex::split(t).context("--template is not valid shell quoting")?,
        },
        None => BackendSpec::TracedSubprocess {
            strace_binary_path: args.strace.clone(),
        },
    };
    let model = match &args.model {
        Some(p) => Some(load_model(p).with_context(|| format!("loading model {}", p.display()))?),
        None => None,
    };
    let config = ServiceConfig {
        workers: args.workers,
        phase_timeout_s: args.timeout,
        max_upload_bytes: args.max_upload,
        live_backend,
        model,
        ..ServiceConfig::new(&args.store)
    };
    let service = Service::start(config)?;
    let router = service.router();

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.listen)
            .await
            .with_context(|| format!("binding {}", args.listen))?;
        // Tests pass port 0, so report the bound address.
        eprintln!("listening on http://{}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        api::serve(listener, router, shutdown).await?;
        anyhow::Ok(())
    })?;
    eprintln!("shutting down; waiting for running jobs");
    service.shutdown();
    Ok(exit::OK)
}
