//! Minimal threaded JSON-over-HTTP server used by the protocol servers.

use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::Value;
use tiny_http::{Header, Method, Response, Server};

pub(crate) type Handler = dyn Fn(&Method, &str, &[u8]) -> (u16, Value) + Send + Sync;

/// Handle to a running server; dropping it stops the workers.
pub struct ServerHandle {
    addr: SocketAddr,
    server: Arc<Server>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub(crate) fn spawn(bind: &str, workers: usize, handler: Arc<Handler>) -> io::Result<Self> {
        let server = Server::http(bind).map_err(|e| io::Error::other(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("server is not bound to an IP address"))?;
        let server = Arc::new(server);
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..workers.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let stop = Arc::clone(&stop);
                let handler = Arc::clone(&handler);
                std::thread::spawn(move || loop {
                    let mut request = match server.recv() {
                        Ok(r) => r,
                        Err(_) => break,
                    };
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let mut body = Vec::new();
                    let (status, value) = match request.as_reader().read_to_end(&mut body) {
                        Ok(_) => {
                            let path = request.url().split('?').next().unwrap_or("").to_string();
                            handler(request.method(), &path, &body)
                        }
                        Err(e) => (400, serde_json::json!({ "error": e.to_string() })),
                    };
                    let header = Header::from_bytes("Content-Type", "application/json")
                        .expect("static header");
                    let response = Response::from_string(value.to_string())
                        .with_status_code(status)
                        .with_header(header);
                    let _ = request.respond(response);
                })
            })
            .collect();
        Ok(Self {
            addr,
            server,
            stop,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the workers exit, which only happens on shutdown.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if !self.workers.is_empty() {
            self.stop_workers();
        }
    }
}

pub(crate) fn error_body(message: impl std::fmt::Display) -> Value {
    serde_json::json!({ "error": message.to_string() })
}
