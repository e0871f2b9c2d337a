//! Serves fixture sites over HTTP, one listener per site.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use sourcebridge::wrapper::{FixtureSite, FixtureWeb, FormMethod, SiteReply};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use url::Url;

/// How long a page marked `timeout` stalls before answering 504.
pub const DEFAULT_STALL: Duration = Duration::from_secs(60);

#[derive(Clone)]
struct SiteState {
    site: Arc<FixtureSite>,
    stall: Duration,
}

async fn respond(State(s): State<SiteState>, method: Method, uri: Uri, body: Bytes) -> Response {
    let method = match method {
        Method::GET | Method::HEAD => FormMethod::Get,
        Method::POST => FormMethod::Post,
        _ => return StatusCode::METHOD_NOT_ALLOWED.into_response(),
    };
    let body = String::from_utf8_lossy(&body);
    let body = (!body.is_empty()).then_some(body.as_ref());
    match s.site.respond(method, uri.path(), uri.query(), body) {
        SiteReply::Body {
            status,
            content_type,
            body,
        } => {
            let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, [(header::CONTENT_TYPE, content_type)], body).into_response()
        }
        SiteReply::Redirect { location } => (StatusCode::FOUND, [(header::LOCATION, location)]).into_response(),
        SiteReply::Timeout => {
            tokio::time::sleep(s.stall).await;
            StatusCode::GATEWAY_TIMEOUT.into_response()
        }
    }
}

pub fn site_router(site: FixtureSite, stall: Duration) -> Router {
    Router::new().fallback(respond).with_state(SiteState {
        site: Arc::new(site),
        stall,
    })
}

/// One served site: requests for `host` belong at `origin`.
#[derive(Debug, Clone)]
pub struct ServedSite {
    pub host: String,
    pub base_url: String,
    pub origin: Url,
}

/// Binds every site of `web` on `ip`, at consecutive ports from `first_port`
/// (ephemeral ports when it is 0), and serves until `shutdown` resolves.
pub async fn serve_sites(
    web: &FixtureWeb,
    ip: std::net::IpAddr,
    first_port: u16,
    stall: Duration,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(Vec<ServedSite>, tokio::task::JoinHandle<()>)> {
    let mut served = Vec::new();
    let mut tasks = Vec::new();
    let (stop_tx, _) = tokio::sync::broadcast::channel::<()>(1);
    for (i, site) in web.sites().enumerate() {
        let port = if first_port == 0 { 0 } else { first_port + i as u16 };
        let listener = TcpListener::bind(SocketAddr::new(ip, port))
            .await
            .with_context(|| format!("binding {ip}:{port} for {}", site.host()))?;
        let addr = listener.local_addr()?;
        served.push(ServedSite {
            host: site.host().to_string(),
            base_url: site.base_url().to_string(),
            origin: Url::parse(&format!("http://{addr}")).expect("socket address forms a url"),
        });
        let app = site_router(site.clone(), stall);
        let mut stop = stop_tx.subscribe();
        tasks.push(tokio::spawn(async move {
            let graceful = async move {
                let _ = stop.recv().await;
            };
            if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(graceful).await {
                tracing::error!(error = %e, "fixture site server failed");
            }
        }));
    }
    let handle = tokio::spawn(async move {
        shutdown.await;
        let _ = stop_tx.send(());
        for t in tasks {
            let _ = t.await;
        }
    });
    Ok((served, handle))
}

/// Fixture sites served from a background thread; stopped on drop.
pub struct BackgroundSites {
    pub sites: Vec<ServedSite>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundSites {
    pub fn start(web: &FixtureWeb, stall: Duration) -> Result<Self> {
        let web = web.clone();
        let (ready_tx, ready_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = match tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build() {
                Ok(rt) => rt,
                Err(e) => {
                    let _ = ready_tx.send(Err(anyhow::Error::from(e)));
                    return;
                }
            };
            rt.block_on(async move {
                let shutdown = async move {
                    let _ = stop_rx.await;
                };
                match serve_sites(&web, [127, 0, 0, 1].into(), 0, stall, shutdown).await {
                    Ok((sites, handle)) => {
                        let _ = ready_tx.send(Ok(sites));
                        let _ = handle.await;
                    }
                    Err(e) => {
                        let _ = ready_tx.send(Err(e));
                    }
                }
            });
        });
        let sites = ready_rx.recv().context("fixture server thread exited")??;
        Ok(Self {
            sites,
            stop: Some(stop_tx),
            thread: Some(thread),
        })
    }

    /// `(host, origin)` pairs for [`sourcebridge::wrapper::HttpFetcher::with_rewrite`].
    pub fn rewrites(&self) -> Vec<(String, Url)> {
        self.sites.iter().map(|s| (s.host.clone(), s.origin.clone())).collect()
    }
}

impl Drop for BackgroundSites {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
