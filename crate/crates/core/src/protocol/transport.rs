//! Transports carrying encoded frames between the edge loop and the cloud
//! service. The in-process transport still moves real encoded bytes, so
//! frame sizes, privacy checks, and golden files mean the same thing on both
//! transports.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::cloud::CloudService;
use super::ProtocolError;

pub trait CloudTransport {
    /// Sends one newline-terminated frame.
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), ProtocolError>;
    /// Receives the next reply frame (newline included). Blocks.
    fn recv_frame(&mut self) -> Result<Vec<u8>, ProtocolError>;
}

/// Directly feeds frames to a `CloudService`, queueing replies.
pub struct InProcessTransport {
    service: Arc<CloudService>,
    pending: Vec<Vec<u8>>,
}

impl InProcessTransport {
    pub fn new(service: Arc<CloudService>) -> Self {
        Self {
            service,
            pending: Vec::new(),
        }
    }
}

impl CloudTransport for InProcessTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), ProtocolError> {
        if let Some(reply) = self.service.handle_frame(frame) {
            self.pending.push(reply);
        }
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, ProtocolError> {
        if self.pending.is_empty() {
            return Err(ProtocolError::Transport(
                "no pending reply from in-process service".into(),
            ));
        }
        Ok(self.pending.remove(0))
    }
}

/// Line-framed TCP client. Connects lazily on the first send, so a session
/// that never escalates opens no connection at all.
pub struct TcpTransport {
    addr: String,
    conn: Option<(BufReader<TcpStream>, TcpStream)>,
}

impl TcpTransport {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            conn: None,
        }
    }

    fn connect(&mut self) -> Result<(), ProtocolError> {
        if self.conn.is_none() {
            let stream = TcpStream::connect(&self.addr)
                .map_err(|e| ProtocolError::Transport(format!("connect {}: {e}", self.addr)))?;
            stream
                .set_nodelay(true)
                .map_err(|e| ProtocolError::Transport(e.to_string()))?;
            let reader = BufReader::new(
                stream
                    .try_clone()
                    .map_err(|e| ProtocolError::Transport(e.to_string()))?,
            );
            self.conn = Some((reader, stream));
        }
        Ok(())
    }
}

impl CloudTransport for TcpTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), ProtocolError> {
        self.connect()?;
        let (_, writer) = self.conn.as_mut().expect("connected above");
        writer
            .write_all(frame)
            .and_then(|_| writer.flush())
            .map_err(|e| ProtocolError::Transport(format!("send: {e}")))
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, ProtocolError> {
        let (reader, _) = self
            .conn
            .as_mut()
            .ok_or_else(|| ProtocolError::Transport("receive before any send".into()))?;
        let mut line = String::new();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| ProtocolError::Transport(format!("recv: {e}")))?;
        if n == 0 {
            return Err(ProtocolError::Transport("connection closed".into()));
        }
        Ok(line.into_bytes())
    }
}

/// Wrapper that keeps verbatim copies of every frame in both directions.
/// Privacy and golden-file tests inspect these.
pub struct RecordingTransport<T: CloudTransport> {
    inner: T,
    pub sent: Vec<Vec<u8>>,
    pub received: Vec<Vec<u8>>,
}

impl<T: CloudTransport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            sent: Vec::new(),
            received: Vec::new(),
        }
    }
}

impl<T: CloudTransport> CloudTransport for RecordingTransport<T> {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), ProtocolError> {
        self.sent.push(frame.to_vec());
        self.inner.send_frame(frame)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, ProtocolError> {
        let frame = self.inner.recv_frame()?;
        self.received.push(frame.clone());
        Ok(frame)
    }
}

/// Blocking TCP server: one thread per connection, lines handled in arrival
/// order, so requests within a session (one connection per session) are
/// serialized naturally.
pub struct CloudServer;

impl CloudServer {
    /// Binds and serves in background threads. Returns the bound address.
    /// The accept loop runs until the process exits.
    pub fn spawn(
        addr: &str,
        service: Arc<CloudService>,
    ) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let handle = std::thread::spawn(move || {
            Self::serve(listener, service);
        });
        Ok((local, handle))
    }

    /// Accept loop on an already-bound listener. Blocks forever.
    pub fn serve(listener: TcpListener, service: Arc<CloudService>) {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let service = service.clone();
            std::thread::spawn(move || {
                let _ = handle_connection(stream, service);
            });
        }
    }
}

fn handle_connection(stream: TcpStream, service: Arc<CloudService>) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.split(b'\n') {
        let mut frame = line?;
        frame.push(b'\n');
        if let Some(reply) = service.handle_frame(&frame) {
            writer.write_all(&reply)?;
            writer.flush()?;
        }
    }
    Ok(())
}
