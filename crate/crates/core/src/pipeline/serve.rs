use std::fs;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::publish::RUNS_FILE;
use super::PipelineError;

const WORKERS: usize = 4;

/// Running static server; stops when dropped.
pub struct ServeHandle {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl ServeHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks for the life of the process.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServeHandle {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => "application/json",
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("txt") | Some("tsv") => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// Maps a request target to a file below `root`, refusing anything that
/// climbs out of it.
fn resolve(root: &Path, target: &str) -> Option<PathBuf> {
    let path = target.split(['?', '#']).next().unwrap_or("");
    if path == "/api/runs" {
        return Some(root.join(RUNS_FILE));
    }
    let rel = Path::new(path.trim_start_matches('/'));
    let mut out = root.to_path_buf();
    for c in rel.components() {
        match c {
            Component::Normal(p) => out.push(p),
            Component::CurDir => {}
            _ => return None,
        }
    }
    if out.is_dir() {
        out.push("index.html");
    }
    Some(out)
}

fn respond(root: &Path, req: tiny_http::Request) {
    let text = |code: u16, msg: &str| tiny_http::Response::from_string(msg).with_status_code(code).boxed();
    let resp = if !matches!(req.method(), tiny_http::Method::Get | tiny_http::Method::Head) {
        text(405, "method not allowed\n")
    } else if req.url().contains("..") {
        text(400, "bad path\n")
    } else {
        match resolve(root, req.url()).map(|p| (fs::read(&p), p)) {
            Some((Ok(body), p)) => {
                let header = tiny_http::Header::from_bytes("Content-Type", content_type(&p)).expect("static header");
                tiny_http::Response::from_data(body).with_header(header).boxed()
            }
            Some((Err(_), _)) => text(404, "not found\n"),
            None => text(400, "bad path\n"),
        }
    };
    if let Err(e) = req.respond(resp) {
        log::debug!("serve: {e}");
    }
}

/// Serves the files under `root` read-only over HTTP, plus `/api/runs`
/// for the run history. Paths are resolved per request, so a swapped
/// publish link takes effect immediately.
pub fn serve(root: &Path, addr: &str) -> Result<ServeHandle, PipelineError> {
    let server = tiny_http::Server::http(addr).map_err(|e| PipelineError::Serve(format!("{addr}: {e}")))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| PipelineError::Serve(format!("{addr} is not an IP socket")))?;
    let server = Arc::new(server);
    let workers = (0..WORKERS)
        .map(|_| {
            let server = Arc::clone(&server);
            let root = root.to_path_buf();
            std::thread::spawn(move || {
                while let Ok(req) = server.recv() {
                    respond(&root, req);
                }
            })
        })
        .collect();
    log::info!("serving {} on http://{bound}/", root.display());
    Ok(ServeHandle {
        server,
        addr: bound,
        workers,
    })
}
