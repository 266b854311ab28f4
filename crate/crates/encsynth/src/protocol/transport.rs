//! Ordered, reliable message transports: an in-process channel pair and a
//! TCP stream with 4-byte big-endian length framing. Both carry opaque
//! message bodies; the same session over either yields identical bodies.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{channel, Receiver, Sender};

use super::ProtoError;

/// Maximum accepted frame size; guards against garbage length prefixes.
pub const MAX_FRAME: usize = 1 << 28;

pub trait Transport {
    fn send(&mut self, body: &[u8]) -> Result<(), ProtoError>;
    fn recv(&mut self) -> Result<Vec<u8>, ProtoError>;
}

/// In-process endpoint backed by a pair of channels.
pub struct InProcessTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl InProcessTransport {
    /// Two connected endpoints.
    pub fn pair() -> (InProcessTransport, InProcessTransport) {
        let (atx, brx) = channel();
        let (btx, arx) = channel();
        (
            InProcessTransport { tx: atx, rx: arx },
            InProcessTransport { tx: btx, rx: brx },
        )
    }
}

impl Transport for InProcessTransport {
    fn send(&mut self, body: &[u8]) -> Result<(), ProtoError> {
        self.tx.send(body.to_vec()).map_err(|_| ProtoError::Closed)
    }

    fn recv(&mut self) -> Result<Vec<u8>, ProtoError> {
        self.rx.recv().map_err(|_| ProtoError::Closed)
    }
}

/// Stream-socket endpoint: 4-byte big-endian length prefix + body.
pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> Self {
        TcpTransport { stream }
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, body: &[u8]) -> Result<(), ProtoError> {
        let len = (body.len() as u32).to_be_bytes();
        self.stream.write_all(&len)?;
        self.stream.write_all(body)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Vec<u8>, ProtoError> {
        let mut len = [0u8; 4];
        if let Err(e) = self.stream.read_exact(&mut len) {
            // A clean close between frames is an orderly end of session.
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                return Err(ProtoError::Closed);
            }
            return Err(e.into());
        }
        let n = u32::from_be_bytes(len) as usize;
        if n > MAX_FRAME {
            return Err(ProtoError::Malformed {
                offset: 0,
                detail: format!("frame length {n} exceeds limit"),
            });
        }
        let mut body = vec![0u8; n];
        self.stream.read_exact(&mut body)?;
        Ok(body)
    }
}
