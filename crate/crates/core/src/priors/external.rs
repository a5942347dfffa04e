use super::protocol::{
    self, ProtocolError, Tensor, OP_HANDSHAKE, OP_RESTORE, STATUS_OK,
};
use super::{check_input, PriorError, Restorer};
use crate::tensor::Shape;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Where the restoration model lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Program and arguments; frames travel over its stdin/stdout.
    Command(Vec<String>),
    /// `host:port` of a stream socket.
    Socket(String),
}

type Reply = Result<(u8, Tensor), ProtocolError>;

/// A restorer hosted by a peer process.
///
/// A background thread reads replies so that every request can be bounded
/// by `timeout`. After any transport failure the connection is poisoned and
/// later calls fail fast.
pub struct ExternalRestorer {
    input: Shape,
    output: Shape,
    timeout: Duration,
    writer: Box<dyn Write + Send>,
    replies: Receiver<Reply>,
    child: Option<Child>,
    poisoned: bool,
}

impl std::fmt::Debug for ExternalRestorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalRestorer")
            .field("input", &self.input)
            .field("output", &self.output)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl ExternalRestorer {
    /// Connects (or spawns) the peer and performs the handshake.
    pub fn connect(
        endpoint: &Endpoint,
        input: Shape,
        output: Shape,
        timeout: Duration,
    ) -> Result<Self, ProtocolError> {
        let (reader, writer, child): (Box<dyn Read + Send>, Box<dyn Write + Send>, _) =
            match endpoint {
                Endpoint::Command(argv) => {
                    let (program, args) = argv
                        .split_first()
                        .ok_or_else(|| ProtocolError::Handshake("empty peer command".into()))?;
                    let mut child = Command::new(program)
                        .args(args)
                        .stdin(Stdio::piped())
                        .stdout(Stdio::piped())
                        .stderr(Stdio::inherit())
                        .spawn()
                        .map_err(ProtocolError::Spawn)?;
                    let stdin = child.stdin.take().expect("piped stdin");
                    let stdout = child.stdout.take().expect("piped stdout");
                    (Box::new(stdout), Box::new(stdin), Some(child))
                }
                Endpoint::Socket(addr) => {
                    let stream = TcpStream::connect(addr)
                        .map_err(|e| ProtocolError::Handshake(format!("connect {addr}: {e}")))?;
                    stream.set_nodelay(true).ok();
                    let read_half = stream.try_clone()?;
                    (Box::new(read_half), Box::new(stream), None)
                }
            };
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let reply = protocol::read_response(&mut reader);
                let failed = reply.is_err();
                if tx.send(reply).is_err() || failed {
                    break;
                }
            }
        });
        let mut restorer = Self {
            input,
            output,
            timeout,
            writer: Box::new(BufWriter::new(writer)),
            replies: rx,
            child,
            poisoned: false,
        };
        restorer.handshake()?;
        Ok(restorer)
    }

    fn handshake(&mut self) -> Result<(), ProtocolError> {
        let reply = self.round_trip(OP_HANDSHAKE, &Tensor::empty());
        match reply {
            Ok((STATUS_OK, t)) if t == Tensor::empty() => Ok(()),
            Ok((STATUS_OK, t)) => Err(ProtocolError::Handshake(format!(
                "unexpected handshake payload with dims {:?}",
                t.dims
            ))),
            Ok((status, _)) => Err(ProtocolError::Handshake(format!("status {status}"))),
            Err(e) => Err(ProtocolError::Handshake(e.to_string())),
        }
    }

    fn round_trip(&mut self, opcode: u8, tensor: &Tensor) -> Result<(u8, Tensor), ProtocolError> {
        if self.poisoned {
            return Err(ProtocolError::Poisoned);
        }
        let result = self.exchange(opcode, tensor);
        if result.is_err() {
            self.poisoned = true;
        }
        result
    }

    fn exchange(&mut self, opcode: u8, tensor: &Tensor) -> Result<(u8, Tensor), ProtocolError> {
        if let Err(e) = protocol::write_request(&mut self.writer, opcode, tensor) {
            return Err(match e.kind() {
                std::io::ErrorKind::BrokenPipe | std::io::ErrorKind::ConnectionReset => {
                    ProtocolError::PeerCrashed(e.to_string())
                }
                _ => e.into(),
            });
        }
        match self.replies.recv_timeout(self.timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => Err(ProtocolError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(ProtocolError::PeerCrashed("reader stopped".into()))
            }
        }
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }
}

impl Restorer for ExternalRestorer {
    fn input_shape(&self) -> Shape {
        self.input
    }
    fn output_shape(&self) -> Shape {
        self.output
    }
    fn restore(&mut self, s: &[f64]) -> Result<Vec<f64>, PriorError> {
        check_input(self.input.len(), s)?;
        let request = Tensor::from_f64(&self.input.as_array(), s)?;
        let (status, reply) = self.round_trip(OP_RESTORE, &request)?;
        if status != STATUS_OK {
            self.poisoned = true;
            return Err(ProtocolError::PeerStatus(status).into());
        }
        let expected: Vec<u32> = self.output.as_array().iter().map(|&d| d as u32).collect();
        if reply.dims != expected {
            self.poisoned = true;
            return Err(ProtocolError::ShapeMismatch {
                expected,
                found: reply.dims,
            }
            .into());
        }
        Ok(reply.to_f64())
    }
}

impl Drop for ExternalRestorer {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            // Closing stdin lets a well-behaved peer exit on its own.
            self.writer = Box::new(std::io::sink());
            for _ in 0..20 {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(5));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
