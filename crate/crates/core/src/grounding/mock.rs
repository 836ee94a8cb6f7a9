//! A small HTTP server speaking the grounding wire protocol, for tests and
//! local experiments. Each connection is served on its own thread and
//! closed after one response.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::Value as Json;

use super::{
    Grounder, GroundingError, GroundingRequest, GroundingResponse, OracleGrounder, RequestKind,
    Scene, WireResponse,
};

/// What the server does with one request.
#[derive(Debug, Clone)]
pub enum Reply {
    /// 200 with this JSON body.
    Json(Json),
    /// Any status with a raw body.
    Status(u16, String),
    /// Wait, then drop the connection without answering.
    Stall(Duration),
}

pub type Handler = dyn Fn(&GroundingRequest) -> Reply + Send + Sync;

pub struct MockServer {
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds to an ephemeral localhost port.
    pub fn start(
        handler: impl Fn(&GroundingRequest) -> Reply + Send + Sync + 'static,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let thread = {
            let requests = Arc::clone(&requests);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let handler = Arc::clone(&handler);
                    let requests = Arc::clone(&requests);
                    std::thread::spawn(move || {
                        let _ = serve(stream, &*handler, &requests);
                    });
                }
            })
        };
        Ok(MockServer {
            addr,
            requests,
            stop,
            thread: Some(thread),
        })
    }

    /// A server answering from scene graphs, keyed by `image_ref` (the
    /// empty key serves requests without one).
    pub fn with_scenes(scenes: HashMap<String, Scene>, mode: ScoreMode) -> std::io::Result<Self> {
        Self::start(reference_handler(scenes, mode))
    }

    pub fn url(&self) -> String {
        format!("http://{}/ground", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Well-formed requests received so far.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve(stream: TcpStream, handler: &Handler, requests: &AtomicUsize) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;
    let reply = match serde_json::from_slice::<GroundingRequest>(&body) {
        Ok(req) => {
            requests.fetch_add(1, Ordering::SeqCst);
            handler(&req)
        }
        Err(e) => Reply::Json(serde_json::json!({ "error": format!("bad request: {e}") }))
            .with_status(400),
    };
    let (status, body) = match reply {
        Reply::Json(v) => (200, v.to_string()),
        Reply::Status(code, text) => (code, text),
        Reply::Stall(d) => {
            std::thread::sleep(d);
            return Ok(());
        }
    };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        reason(status),
        body.len()
    )?;
    stream.flush()
}

impl Reply {
    fn with_status(self, code: u16) -> Reply {
        match self {
            Reply::Json(v) => Reply::Status(code, v.to_string()),
            other => other,
        }
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Unknown",
    }
}

/// How the reference handler reports predicate scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreMode {
    Scores,
    /// `(margin, -margin)` for a true predicate, `(-margin, margin)` for a
    /// false one.
    Logits {
        margin: f64,
    },
}

/// Answers every request kind from oracle scene graphs.
pub fn reference_handler(
    scenes: HashMap<String, Scene>,
    mode: ScoreMode,
) -> impl Fn(&GroundingRequest) -> Reply + Send + Sync + 'static {
    let oracles: HashMap<String, OracleGrounder> = scenes
        .into_iter()
        .map(|(k, s)| (k, OracleGrounder::new(s)))
        .collect();
    move |req: &GroundingRequest| {
        let key = req.image_ref.clone().unwrap_or_default();
        let Some(oracle) = oracles.get(&key) else {
            return Reply::Status(
                404,
                serde_json::json!({ "error": format!("unknown image_ref {key:?}") }).to_string(),
            );
        };
        let n = oracle.object_count();
        match answer(oracle, req, mode) {
            Ok(resp) => {
                let arity = (req.kind == RequestKind::Score)
                    .then_some(req.num_objects)
                    .flatten();
                Reply::Json(serde_json::to_value(WireResponse::encode(&resp, arity, n)).unwrap())
            }
            Err(e) => Reply::Json(serde_json::json!({ "error": e.to_string() })),
        }
    }
}

fn answer(
    oracle: &OracleGrounder,
    req: &GroundingRequest,
    mode: ScoreMode,
) -> Result<GroundingResponse, GroundingError> {
    let resp = oracle.ground(req)?;
    Ok(match (resp, mode) {
        (GroundingResponse::Scores(s), ScoreMode::Logits { margin }) => {
            GroundingResponse::YesNoLogits(
                s.iter()
                    .map(|&p| {
                        if p >= 0.5 {
                            (margin, -margin)
                        } else {
                            (-margin, margin)
                        }
                    })
                    .collect(),
            )
        }
        (other, _) => other,
    })
}
