//! Transports carrying framed messages: an in-memory channel pair for tests
//! and simulation, and TCP for real deployments. Both move the exact same
//! frame bytes, so behaviour cannot diverge between them.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use super::framing::{frame_message, parse_message, MAX_FRAME_BYTES};
use super::{ProtocolError, ProtocolMessage};

pub trait Connection: Send {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), ProtocolError>;
    fn recv(&mut self, timeout: Duration) -> Result<ProtocolMessage, ProtocolError>;
}

pub trait Listener: Send {
    fn accept(&mut self, timeout: Duration) -> Result<Box<dyn Connection>, ProtocolError>;
}

// ---------------------------------------------------------------- in-memory

pub struct MemoryConnection {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
}

/// A bidirectional in-process link; frames cross it byte-for-byte as on TCP.
pub fn memory_pair() -> (MemoryConnection, MemoryConnection) {
    let (atx, brx) = mpsc::channel();
    let (btx, arx) = mpsc::channel();
    (
        MemoryConnection { tx: atx, rx: arx },
        MemoryConnection { tx: btx, rx: brx },
    )
}

impl Connection for MemoryConnection {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), ProtocolError> {
        let frame = frame_message(msg)?;
        self.tx
            .send(frame)
            .map_err(|_| ProtocolError::Transport("peer hung up".into()))
    }

    fn recv(&mut self, timeout: Duration) -> Result<ProtocolMessage, ProtocolError> {
        match self.rx.recv_timeout(timeout) {
            Ok(frame) => parse_message(&frame),
            Err(mpsc::RecvTimeoutError::Timeout) => {
                Err(ProtocolError::Timeout("no message within deadline".into()))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(ProtocolError::Transport("peer hung up".into()))
            }
        }
    }
}

/// Client-side handle for dialing an in-memory listener.
#[derive(Clone)]
pub struct MemoryConnector {
    tx: mpsc::Sender<MemoryConnection>,
}

impl MemoryConnector {
    pub fn connect(&self) -> Result<MemoryConnection, ProtocolError> {
        let (server_end, client_end) = memory_pair();
        self.tx
            .send(server_end)
            .map_err(|_| ProtocolError::Transport("listener closed".into()))?;
        Ok(client_end)
    }
}

pub struct MemoryListener {
    rx: mpsc::Receiver<MemoryConnection>,
}

pub fn memory_listener() -> (MemoryListener, MemoryConnector) {
    let (tx, rx) = mpsc::channel();
    (MemoryListener { rx }, MemoryConnector { tx })
}

impl Listener for MemoryListener {
    fn accept(&mut self, timeout: Duration) -> Result<Box<dyn Connection>, ProtocolError> {
        match self.rx.recv_timeout(timeout) {
            Ok(conn) => Ok(Box::new(conn)),
            Err(mpsc::RecvTimeoutError::Timeout) => {
                Err(ProtocolError::Timeout("no connection within deadline".into()))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(ProtocolError::Transport("all connectors dropped".into()))
            }
        }
    }
}

// --------------------------------------------------------------------- TCP

pub struct TcpConnection {
    stream: TcpStream,
    buffer: Vec<u8>,
}

impl TcpConnection {
    pub fn new(stream: TcpStream) -> Self {
        TcpConnection {
            stream,
            buffer: Vec::new(),
        }
    }

    pub fn connect(addr: SocketAddr) -> Result<Self, ProtocolError> {
        let stream =
            TcpStream::connect(addr).map_err(|e| ProtocolError::Transport(e.to_string()))?;
        Ok(Self::new(stream))
    }
}

impl Connection for TcpConnection {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), ProtocolError> {
        let frame = frame_message(msg)?;
        self.stream
            .write_all(&frame)
            .and_then(|_| self.stream.flush())
            .map_err(|e| ProtocolError::Transport(e.to_string()))
    }

    fn recv(&mut self, timeout: Duration) -> Result<ProtocolMessage, ProtocolError> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(pos) = self.buffer.iter().position(|&b| b == b'\n') {
                let frame: Vec<u8> = self.buffer.drain(..=pos).collect();
                return parse_message(&frame);
            }
            if self.buffer.len() > MAX_FRAME_BYTES {
                return Err(ProtocolError::Oversize(self.buffer.len()));
            }
            let remaining = deadline
                .checked_duration_since(Instant::now())
                .ok_or_else(|| ProtocolError::Timeout("no message within deadline".into()))?;
            self.stream
                .set_read_timeout(Some(remaining.max(Duration::from_millis(1))))
                .map_err(|e| ProtocolError::Transport(e.to_string()))?;
            let mut chunk = [0u8; 64 * 1024];
            match self.stream.read(&mut chunk) {
                Ok(0) => return Err(ProtocolError::Transport("peer hung up".into())),
                Ok(n) => self.buffer.extend_from_slice(&chunk[..n]),
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    return Err(ProtocolError::Timeout("no message within deadline".into()))
                }
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(ProtocolError::Transport(e.to_string())),
            }
        }
    }
}

pub struct TcpListenerTransport {
    listener: TcpListener,
}

impl TcpListenerTransport {
    pub fn bind(addr: SocketAddr) -> Result<Self, ProtocolError> {
        let listener =
            TcpListener::bind(addr).map_err(|e| ProtocolError::Transport(e.to_string()))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| ProtocolError::Transport(e.to_string()))?;
        Ok(TcpListenerTransport { listener })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, ProtocolError> {
        self.listener
            .local_addr()
            .map_err(|e| ProtocolError::Transport(e.to_string()))
    }
}

impl Listener for TcpListenerTransport {
    fn accept(&mut self, timeout: Duration) -> Result<Box<dyn Connection>, ProtocolError> {
        let deadline = Instant::now() + timeout;
        loop {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream
                        .set_nonblocking(false)
                        .map_err(|e| ProtocolError::Transport(e.to_string()))?;
                    return Ok(Box::new(TcpConnection::new(stream)));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(ProtocolError::Timeout(
                            "no connection within deadline".into(),
                        ));
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(ProtocolError::Transport(e.to_string())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{MessageBody, PROTOCOL_VERSION};

    fn hello(id: &str) -> ProtocolMessage {
        ProtocolMessage {
            body: MessageBody::Hello {
                site_id: id.into(),
                protocol_version: PROTOCOL_VERSION,
            },
            message_id: 1,
        }
    }

    #[test]
    fn memory_pair_exchanges_messages() {
        let (mut a, mut b) = memory_pair();
        a.send(&hello("a")).unwrap();
        assert_eq!(b.recv(Duration::from_secs(1)).unwrap(), hello("a"));
        b.send(&hello("b")).unwrap();
        assert_eq!(a.recv(Duration::from_secs(1)).unwrap(), hello("b"));
    }

    #[test]
    fn memory_recv_times_out() {
        let (mut a, _b) = memory_pair();
        assert!(matches!(
            a.recv(Duration::from_millis(10)),
            Err(ProtocolError::Timeout(_))
        ));
    }

    #[test]
    fn memory_listener_accepts_dials() {
        let (mut listener, connector) = memory_listener();
        let mut client = connector.connect().unwrap();
        let mut server = listener.accept(Duration::from_secs(1)).unwrap();
        client.send(&hello("c")).unwrap();
        assert_eq!(server.recv(Duration::from_secs(1)).unwrap(), hello("c"));
    }

    #[test]
    fn tcp_round_trip_on_loopback() {
        let mut listener =
            TcpListenerTransport::bind("127.0.0.1:0".parse().unwrap()).unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut client = TcpConnection::connect(addr).unwrap();
            client.send(&hello("tcp")).unwrap();
            client.recv(Duration::from_secs(5)).unwrap()
        });
        let mut server = listener.accept(Duration::from_secs(5)).unwrap();
        let got = server.recv(Duration::from_secs(5)).unwrap();
        assert_eq!(got, hello("tcp"));
        server.send(&hello("ack")).unwrap();
        assert_eq!(handle.join().unwrap(), hello("ack"));
    }

    #[test]
    fn tcp_accept_times_out() {
        let mut listener =
            TcpListenerTransport::bind("127.0.0.1:0".parse().unwrap()).unwrap();
        assert!(matches!(
            listener.accept(Duration::from_millis(30)),
            Err(ProtocolError::Timeout(_))
        ));
    }
}
