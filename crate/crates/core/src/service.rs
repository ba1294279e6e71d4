//! Length-prefixed enhancement service over TCP.
//!
//! Request: `u32` big-endian payload length, then that many bytes of PPM.
//! Response: the same framing around the enhanced PPM. Failures are answered
//! with a zero length followed by a single UTF-8 error line ending in `\n`.
//! A connection may carry any number of requests. An oversize length is
//! answered with an error frame and the connection is closed without reading
//! the body.

use std::io::{self, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::collections::HashMap;
use std::net::Shutdown;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::cnn::FusionModel;
use crate::image::{load_ppm, save_ppm};

pub const DEFAULT_MAX_PAYLOAD: usize = 32 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_payload: usize,
    pub workers: usize,
    pub read_timeout: Option<Duration>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_payload: DEFAULT_MAX_PAYLOAD,
            workers: 4,
            read_timeout: Some(Duration::from_secs(30)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Image(Vec<u8>),
    Error(String),
}

impl Response {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Response::Image(bytes) => {
                let mut out = Vec::with_capacity(bytes.len() + 4);
                out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
                out.extend_from_slice(bytes);
                out
            }
            Response::Error(msg) => {
                let line: String = msg.chars().map(|c| if c == '\n' { ' ' } else { c }).collect();
                let mut out = vec![0, 0, 0, 0];
                out.extend_from_slice(line.as_bytes());
                out.push(b'\n');
                out
            }
        }
    }
}

/// Enhances one PPM payload. Never panics on malformed input.
pub fn process_payload(model: &FusionModel, payload: &[u8]) -> Response {
    if payload.is_empty() {
        return Response::Error("empty payload".into());
    }
    let img = match load_ppm(payload) {
        Ok(img) => img,
        Err(e) => return Response::Error(e.to_string()),
    };
    match catch_unwind(AssertUnwindSafe(|| model.enhance(&img))) {
        Ok(Ok(out)) => Response::Image(save_ppm(&out.image)),
        Ok(Err(e)) => Response::Error(e.to_string()),
        Err(_) => Response::Error("internal error".into()),
    }
}

/// Serves requests on one connection until the peer closes it.
pub fn handle_connection(mut stream: TcpStream, model: &FusionModel, cfg: &ServiceConfig) -> io::Result<()> {
    stream.set_read_timeout(cfg.read_timeout)?;
    loop {
        let mut len_buf = [0u8; 4];
        match stream.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        }
        let len = u32::from_be_bytes(len_buf) as usize;
        if len == 0 {
            stream.write_all(&Response::Error("empty payload".into()).encode())?;
            continue;
        }
        if len > cfg.max_payload {
            let msg = format!("payload of {len} bytes exceeds limit of {}", cfg.max_payload);
            stream.write_all(&Response::Error(msg).encode())?;
            return Ok(());
        }
        let mut payload = vec![0u8; len];
        stream.read_exact(&mut payload)?;
        let response = process_payload(model, &payload);
        stream.write_all(&response.encode())?;
    }
}

/// Open connections, so shutdown can unblock workers waiting on idle peers.
type Registry = Arc<Mutex<HashMap<u64, TcpStream>>>;

fn worker_loop(
    rx: Arc<Mutex<Receiver<(u64, TcpStream)>>>,
    model: Arc<FusionModel>,
    cfg: Arc<ServiceConfig>,
    active: Registry,
) {
    loop {
        let next = rx.lock().map(|r| r.recv());
        let (id, stream) = match next {
            Ok(Ok(s)) => s,
            _ => return,
        };
        let peer = stream.peer_addr().ok();
        if let Err(e) = handle_connection(stream, &model, &cfg) {
            log::debug!("connection {peer:?} ended: {e}");
        }
        if let Ok(mut map) = active.lock() {
            map.remove(&id);
        }
    }
}

/// A bound listener plus its worker pool.
pub struct Server {
    listener: TcpListener,
    model: Arc<FusionModel>,
    cfg: Arc<ServiceConfig>,
    stop: Arc<AtomicBool>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, model: FusionModel, cfg: ServiceConfig) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            model: Arc::new(model),
            cfg: Arc::new(cfg),
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until stopped, dispatching them to a bounded pool.
    pub fn run(self) -> io::Result<()> {
        let workers = self.cfg.workers.max(1);
        let (tx, rx) = sync_channel::<(u64, TcpStream)>(workers * 2);
        let rx = Arc::new(Mutex::new(rx));
        let active: Registry = Arc::default();
        let pool: Vec<JoinHandle<()>> = (0..workers)
            .map(|_| {
                let (rx, model, cfg, active) = (rx.clone(), self.model.clone(), self.cfg.clone(), active.clone());
                thread::spawn(move || worker_loop(rx, model, cfg, active))
            })
            .collect();
        let mut next_id = 0u64;
        for conn in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let id = next_id;
                    next_id += 1;
                    if let (Ok(clone), Ok(mut map)) = (stream.try_clone(), active.lock()) {
                        map.insert(id, clone);
                    }
                    if tx.send((id, stream)).is_err() {
                        break;
                    }
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
        drop(tx);
        if let Ok(map) = active.lock() {
            for s in map.values() {
                let _ = s.shutdown(Shutdown::Both);
            }
        }
        for h in pool {
            let _ = h.join();
        }
        Ok(())
    }

    /// Runs the server on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = self.stop.clone();
        let thread = thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_inner();
        }
    }
}

/// Reads one response frame.
pub fn read_response(stream: &mut impl Read) -> io::Result<Response> {
    let mut len_buf = [0u8; 4];
    stream.read_exact(&mut len_buf)?;
    let len = u32::from_be_bytes(len_buf) as usize;
    if len == 0 {
        // byte at a time so nothing past the line is consumed
        let mut line = Vec::new();
        let mut byte = [0u8; 1];
        while line.len() < 64 * 1024 {
            stream.read_exact(&mut byte)?;
            if byte[0] == b'\n' {
                break;
            }
            line.push(byte[0]);
        }
        return Ok(Response::Error(String::from_utf8_lossy(&line).into_owned()));
    }
    let mut body = vec![0u8; len];
    stream.read_exact(&mut body)?;
    Ok(Response::Image(body))
}

/// Sends one framed request and waits for the reply.
pub fn request(stream: &mut TcpStream, payload: &[u8]) -> io::Result<Response> {
    let mut frame = Vec::with_capacity(payload.len() + 4);
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(payload);
    stream.write_all(&frame)?;
    read_response(stream)
}
