//! HTTP server hosting the monitoring control plane: the gateway's public
//! API plus in-process claim and unit controllers.

pub mod config;
pub mod http;
pub mod plane;

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use maas_core::api::ApiService;
use maas_core::bridge::SimulatedCloud;
use tokio::sync::oneshot;

pub use config::{ConfigError, ServerConfig};
pub use http::router;
pub use plane::{ControlPlane, StartError};

/// A server running on its own runtime thread, for tests and embedding.
/// Dropping it shuts the listener and the controllers down.
pub struct BackgroundServer {
    addr: SocketAddr,
    plane: ControlPlane,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl BackgroundServer {
    /// Starts a control plane and binds `cfg.listen_addr` (port 0 picks a
    /// free port).
    pub fn start(cfg: &ServerConfig) -> Result<Self, StartError> {
        let plane = ControlPlane::start(cfg)?;
        let listener = std::net::TcpListener::bind(cfg.listen_addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let app = router(plane.api().clone());
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name("maas-http".into()).spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("tokio runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })?;
        Ok(Self {
            addr,
            plane,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn api(&self) -> &Arc<ApiService> {
        self.plane.api()
    }

    pub fn sim(&self) -> &Arc<SimulatedCloud> {
        self.plane.sim()
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        self.plane.stop();
    }
}
