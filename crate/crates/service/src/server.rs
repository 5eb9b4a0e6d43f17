use std::io::{BufRead, BufReader, ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::Value;
use tungstenite::handshake::server::{Request as HttpRequest, Response as HttpResponse};
use tungstenite::Message;

use cantestbed::scenario::Scenario;

use crate::engine::{default_scenario, Engine, EngineMsg, Outbox};
use crate::protocol::{ErrorCode, Op, Request, Response};

/// Environment variable holding the static bearer token.
pub const TOKEN_ENV: &str = "CANTESTBED_TOKEN";
pub const DEFAULT_PORT: u16 = 7878;
pub const DEFAULT_OUTBOX: usize = 4096;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Scenario loaded at start; the built-in network otherwise.
    pub scenario: Option<Scenario>,
    /// Base for relative paths in commands.
    pub root: PathBuf,
    /// Required token; `None` accepts every session.
    pub token: Option<String>,
    /// Serve files from here to plain HTTP requests.
    pub static_dir: Option<PathBuf>,
    /// Outbound records buffered per connection before it is dropped.
    pub outbox_capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            scenario: None,
            root: PathBuf::from("."),
            token: None,
            static_dir: None,
            outbox_capacity: DEFAULT_OUTBOX,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("scenario: {0}")]
    Scenario(String),
}

/// A running service. Dropping the handle leaves it running; call
/// [`ServiceHandle::shutdown`] to stop the engine.
pub struct ServiceHandle {
    addr: SocketAddr,
    engine_tx: Sender<EngineMsg>,
    engine: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        let _ = self.engine_tx.send(EngineMsg::Shutdown);
        if let Some(h) = self.engine.take() {
            let _ = h.join();
        }
    }

    /// Block until the engine thread exits.
    pub fn join(mut self) {
        if let Some(h) = self.engine.take() {
            let _ = h.join();
        }
    }
}

struct Shared {
    engine: Sender<EngineMsg>,
    token: Option<String>,
    static_dir: Option<PathBuf>,
    capacity: usize,
    next_conn: AtomicU64,
}

/// Start the engine and accept connections on `listener`.
pub fn spawn(listener: TcpListener, config: ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    let scenario = match config.scenario {
        Some(s) => s,
        None => Scenario::from_config(default_scenario(), &config.root).map_err(|e| ServiceError::Scenario(e.to_string()))?,
    };
    let engine = Engine::new(scenario, config.root.clone()).map_err(ServiceError::Scenario)?;
    let (tx, rx) = mpsc::channel();
    let engine_thread = thread::Builder::new()
        .name("engine".into())
        .spawn(move || engine.run_loop(rx))?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        engine: tx.clone(),
        token: config.token,
        static_dir: config.static_dir,
        capacity: config.outbox_capacity.max(1),
        next_conn: AtomicU64::new(1),
    });
    thread::Builder::new().name("accept".into()).spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let shared = shared.clone();
            let _ = thread::Builder::new().name("conn".into()).spawn(move || {
                let _ = serve_connection(stream, &shared);
            });
        }
    })?;
    Ok(ServiceHandle { addr, engine_tx: tx, engine: Some(engine_thread) })
}

/// Per-session request handling shared by both transports.
struct Session<'a> {
    conn: u64,
    authed: bool,
    shared: &'a Shared,
    out: Outbox,
}

impl Session<'_> {
    fn reply_now(&self, id: Value, code: ErrorCode, msg: impl Into<String>) {
        let line = serde_json::to_string(&Response::err(id, code, msg)).expect("serialisable");
        let _ = self.out.send(line);
    }

    fn handle_line(&mut self, line: &str) {
        let line = line.trim();
        if line.is_empty() {
            return;
        }
        let req: Request = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<Value>(line).ok().and_then(|v| v.get("id").cloned()).unwrap_or(Value::Null);
                return self.reply_now(id, ErrorCode::BadRequest, e.to_string());
            }
        };
        if !self.authed {
            match (&self.shared.token, &req.token) {
                (Some(want), Some(got)) if want == got => self.authed = true,
                _ => return self.reply_now(req.id, ErrorCode::AuthFailed, "missing or wrong token"),
            }
        }
        let Some(op) = Op::parse(&req.op) else {
            return self.reply_now(req.id, ErrorCode::UnknownOp, format!("unknown op `{}`", req.op));
        };
        let _ = self.shared.engine.send(EngineMsg::Command {
            conn: self.conn,
            id: req.id,
            op,
            args: req.args,
            out: self.out.clone(),
        });
    }
}

impl Drop for Session<'_> {
    fn drop(&mut self) {
        let _ = self.shared.engine.send(EngineMsg::Disconnect { conn: self.conn });
    }
}

fn slow_subscriber_line() -> String {
    serde_json::to_string(&Response::err(
        Value::Null,
        ErrorCode::SlowSubscriber,
        "outbound buffer full; closing connection",
    ))
    .expect("serialisable")
}

fn serve_connection(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    let mut head = [0u8; 4];
    let n = stream.peek(&mut head)?;
    if &head[..n] == b"GET " {
        serve_http(stream, shared)
    } else {
        serve_lines(stream, shared)
    }
}

fn new_session(shared: &Shared, authed: bool) -> (Session<'_>, Receiver<String>, Arc<AtomicBool>) {
    let (tx, rx) = mpsc::sync_channel(shared.capacity);
    let overflow = Arc::new(AtomicBool::new(false));
    let session = Session {
        conn: shared.next_conn.fetch_add(1, Ordering::SeqCst),
        authed: authed || shared.token.is_none(),
        shared,
        out: Outbox::new(tx, overflow.clone()),
    };
    (session, rx, overflow)
}

fn serve_lines(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    let (mut session, rx, overflow) = new_session(shared, false);
    let mut writer = stream.try_clone()?;
    let closer = stream.try_clone()?;
    let writer_thread = thread::spawn(move || {
        loop {
            match rx.recv_timeout(Duration::from_millis(50)) {
                Ok(line) => {
                    if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                        break;
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
            if overflow.load(Ordering::SeqCst) {
                let _ = writeln!(writer, "{}", slow_subscriber_line());
                let _ = closer.shutdown(Shutdown::Both);
                break;
            }
        }
    });
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        match line {
            Ok(l) => session.handle_line(&l),
            Err(_) => break,
        }
    }
    drop(session);
    let _ = writer_thread.join();
    Ok(())
}

fn query_token(uri: &str) -> Option<String> {
    let q = uri.split_once('?')?.1;
    q.split('&').find_map(|kv| kv.strip_prefix("token=")).map(str::to_string)
}

fn serve_http(mut stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    let mut buf = [0u8; 4096];
    let n = stream.peek(&mut buf)?;
    let head = String::from_utf8_lossy(&buf[..n]).to_ascii_lowercase();
    if head.contains("upgrade: websocket") {
        return serve_ws(stream, shared);
    }
    // Plain request: consume the head, answer, close.
    let mut req = Vec::new();
    let mut byte = [0u8; 1];
    while !req.ends_with(b"\r\n\r\n") && req.len() < 16 * 1024 {
        if stream.read(&mut byte)? == 0 {
            break;
        }
        req.push(byte[0]);
    }
    let text = String::from_utf8_lossy(&req);
    let path = text.split_whitespace().nth(1).unwrap_or("/");
    let (status, ctype, body) = match shared.static_dir.as_deref().and_then(|d| static_file(d, path)) {
        Some((ctype, body)) => ("200 OK", ctype, body),
        None => ("404 Not Found", "text/plain", b"not found\n".to_vec()),
    };
    write!(stream, "HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len())?;
    stream.write_all(&body)?;
    let _ = stream.shutdown(Shutdown::Both);
    Ok(())
}

fn static_file(root: &Path, url: &str) -> Option<(&'static str, Vec<u8>)> {
    let path = url.split(['?', '#']).next().unwrap_or("/");
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let mut file = root.join(rel);
    if file.is_dir() || path.ends_with('/') {
        file = file.join("index.html");
    }
    let body = std::fs::read(&file).ok()?;
    let ctype = match file.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    };
    Some((ctype, body))
}

fn serve_ws(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    let mut token = None;
    let callback = |req: &HttpRequest, resp: HttpResponse| {
        token = query_token(&req.uri().to_string());
        Ok(resp)
    };
    let mut ws = tungstenite::accept_hdr(stream, callback).map_err(|e| std::io::Error::other(e.to_string()))?;
    let pre_authed = matches!((&shared.token, &token), (Some(w), Some(g)) if w == g);
    let (mut session, rx, overflow) = new_session(shared, pre_authed);
    ws.get_mut().set_read_timeout(Some(Duration::from_millis(10)))?;
    'conn: loop {
        match ws.read() {
            Ok(Message::Text(t)) => session.handle_line(&t),
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        loop {
            match rx.try_recv() {
                Ok(line) => {
                    if ws.send(Message::Text(line)).is_err() {
                        break 'conn;
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => break 'conn,
            }
        }
        if overflow.load(Ordering::SeqCst) {
            let _ = ws.send(Message::Text(slow_subscriber_line()));
            let _ = ws.close(None);
            let _ = ws.flush();
            break;
        }
    }
    Ok(())
}
