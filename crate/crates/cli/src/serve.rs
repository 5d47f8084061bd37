use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use xraydx_service::{serve_on, ServiceConfig};

/// Settings come from the defaults, then the config file, then flags (or
/// their `XRAYDX_` variables).
#[derive(Debug, Args)]
pub struct ServeArgs {
    /// `key: value` config file (host, port, weights, labels, examples_dir,
    /// static_dir, max_upload_bytes, gradcam_enabled, gradcam_concurrency,
    /// max_image_side)
    #[arg(long, env = "XRAYDX_CONFIG")]
    config: Option<PathBuf>,
    /// Interface to bind
    #[arg(long, env = "XRAYDX_HOST")]
    host: Option<String>,
    /// TCP port; 0 picks a free one
    #[arg(long, env = "XRAYDX_PORT")]
    port: Option<u16>,
    /// Weight file to serve
    #[arg(long, env = "XRAYDX_WEIGHTS")]
    weights: Option<PathBuf>,
    /// Directory of example images listed under /examples
    #[arg(long)]
    examples: Option<PathBuf>,
    /// Web client bundle served under / and /static
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

impl ServeArgs {
    fn config(&self) -> Result<ServiceConfig> {
        let mut c = match &self.config {
            Some(path) => ServiceConfig::from_file(path)?,
            None => ServiceConfig::default(),
        };
        if let Some(h) = &self.host {
            c.host.clone_from(h);
        }
        if let Some(p) = self.port {
            c.port = p;
        }
        if self.weights.is_some() {
            c.weights.clone_from(&self.weights);
        }
        if self.examples.is_some() {
            c.examples_dir.clone_from(&self.examples);
        }
        if self.static_dir.is_some() {
            c.static_dir.clone_from(&self.static_dir);
        }
        c.validate()?;
        Ok(c)
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        () = ctrl_c => {}
        () = term => {}
    }
    tracing::info!("shutting down");
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let config = a.config()?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((config.host.as_str(), config.port))
            .await
            .with_context(|| format!("binding {}:{}", config.host, config.port))?;
        // scripts starting on port 0 read the address from this line
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        serve_on(listener, config, shutdown_signal()).await
    })
}
