use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tiny_http::{Header, Method, Response, Server};

use super::{MockScorer, ScoreRequest, ScoreResponse, ScorerError};

const WORKERS: usize = 4;

/// A running mock server. Dropping the handle stops it.
pub struct MockServerHandle {
    addr: SocketAddr,
    scorer: Arc<MockScorer>,
    stop: Arc<AtomicBool>,
    server: Arc<Server>,
    threads: Vec<JoinHandle<()>>,
}

impl MockServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn scorer(&self) -> &MockScorer {
        &self.scorer
    }

    /// Blocks the calling thread until the server stops.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for _ in 0..self.threads.len() {
            self.server.unblock();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for MockServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn json_header() -> Header {
    Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header")
}

fn handle(scorer: &MockScorer, mut req: tiny_http::Request) {
    let path = req.url().split('?').next().unwrap_or("").to_string();
    let response = if path != "/v1/score" {
        Response::from_string("not found").with_status_code(404)
    } else if *req.method() != Method::Post {
        Response::from_string("method not allowed").with_status_code(405)
    } else {
        let mut body = String::new();
        let reply = match req.as_reader().read_to_string(&mut body) {
            Err(e) => ScoreResponse::error("bad_request", e.to_string()),
            Ok(_) => match serde_json::from_str::<serde_json::Value>(&body) {
                Err(e) => ScoreResponse::error("bad_request", e.to_string()),
                Ok(v) => {
                    let known = v
                        .get("task")
                        .and_then(|t| t.as_str())
                        .map(|t| super::Task::from_name(t).is_some())
                        .unwrap_or(false);
                    if !known {
                        ScoreResponse::error("unknown_task", format!("unknown task {}", v.get("task").unwrap_or(&serde_json::Value::Null)))
                    } else {
                        match serde_json::from_value::<ScoreRequest>(v) {
                            Ok(r) => scorer.respond(&r),
                            Err(e) => ScoreResponse::error("bad_request", e.to_string()),
                        }
                    }
                }
            },
        };
        Response::from_string(reply.to_canonical_json()).with_status_code(200).with_header(json_header())
    };
    if let Err(e) = req.respond(response) {
        log::debug!("mock scorer: failed to respond: {e}");
    }
}

/// Serves the mock on `127.0.0.1:port`; port 0 picks a free port.
pub fn serve_mock(port: u16, seed: u64) -> Result<MockServerHandle, ScorerError> {
    serve_mock_on(&format!("127.0.0.1:{port}"), seed)
}

pub fn serve_mock_on(bind: &str, seed: u64) -> Result<MockServerHandle, ScorerError> {
    let server = Arc::new(Server::http(bind).map_err(|e| ScorerError::Bind(format!("{bind}: {e}")))?);
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| ScorerError::Bind(format!("{bind}: not an IP listener")))?;
    let scorer = Arc::new(MockScorer::new(seed));
    let stop = Arc::new(AtomicBool::new(false));
    let threads = (0..WORKERS)
        .map(|_| {
            let (server, scorer, stop) = (Arc::clone(&server), Arc::clone(&scorer), Arc::clone(&stop));
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match server.recv_timeout(Duration::from_millis(100)) {
                        Ok(Some(req)) => handle(&scorer, req),
                        Ok(None) => {}
                        Err(e) => {
                            log::warn!("mock scorer: accept failed: {e}");
                            break;
                        }
                    }
                }
            })
        })
        .collect();
    log::info!("mock scorer listening on {addr} (seed {seed})");
    Ok(MockServerHandle { addr, scorer, stop, server, threads })
}
