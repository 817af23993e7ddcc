use std::process::ExitCode;

use maas_server::{router, ControlPlane, ServerConfig};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cfg = match ServerConfig::from_env() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("maas-server: {e}");
            return ExitCode::from(2);
        }
    };
    let mut plane = match ControlPlane::start(&cfg) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("maas-server: {e}");
            return ExitCode::FAILURE;
        }
    };
    let listener = match tokio::net::TcpListener::bind(cfg.listen_addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("maas-server: cannot bind {}: {e}", cfg.listen_addr);
            return ExitCode::FAILURE;
        }
    };
    tracing::info!(addr = %cfg.listen_addr, strategy = %cfg.strategy, "listening");
    let served = axum::serve(listener, router(plane.api().clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    tokio::task::spawn_blocking(move || plane.stop()).await.ok();
    match served {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("maas-server: {e}");
            ExitCode::FAILURE
        }
    }
}
