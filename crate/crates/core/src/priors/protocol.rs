//! Binary restorer protocol (little-endian).
//!
//! ```text
//! request  = "DRP1" | opcode u8 | ndim u8 | dims u32 × ndim | payload f32 × ∏dims
//! response = "DRP1" | status u8 | ndim u8 | dims u32 × ndim | payload f32 × ∏dims
//! ```
//!
//! Opcode 1 asks the peer to restore the tensor. Opcode 0 is the handshake:
//! the client sends an empty tensor (`ndim = 1`, `dims = [0]`) and expects it
//! echoed back with status 0. A non-zero status carries an empty tensor.
//! Frames are identical over a subprocess's stdin/stdout and over a stream
//! socket.

use std::io::{self, Read, Write};
use std::time::Duration;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"DRP1";
pub const OP_HANDSHAKE: u8 = 0;
pub const OP_RESTORE: u8 = 1;
pub const STATUS_OK: u8 = 0;
pub const STATUS_BAD_REQUEST: u8 = 1;
pub const STATUS_PEER_FAILURE: u8 = 2;

/// Upper bound on payload elements accepted from the wire (1 GiB of f32).
pub const MAX_ELEMENTS: usize = 1 << 28;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("no reply from peer within {0:?}")]
    Timeout(Duration),
    #[error("reply shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch { expected: Vec<u32>, found: Vec<u32> },
    #[error("peer terminated: {0}")]
    PeerCrashed(String),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("peer reported status {0}")]
    PeerStatus(u8),
    #[error("could not start peer: {0}")]
    Spawn(io::Error),
    #[error("connection is unusable after an earlier failure")]
    Poisoned,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// A framed tensor: dims plus row-major f32 payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self, ProtocolError> {
        let count = element_count(&dims)?;
        if count != data.len() {
            return Err(ProtocolError::Malformed(format!(
                "dims {dims:?} need {count} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn empty() -> Self {
        Self {
            dims: vec![0],
            data: Vec::new(),
        }
    }

    pub fn from_f64(dims: &[usize], values: &[f64]) -> Result<Self, ProtocolError> {
        let dims = dims
            .iter()
            .map(|&d| u32::try_from(d).map_err(|_| ProtocolError::Malformed(format!("dim {d} exceeds u32"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(dims, values.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

fn element_count(dims: &[u32]) -> Result<usize, ProtocolError> {
    if dims.len() > u8::MAX as usize {
        return Err(ProtocolError::Malformed(format!("{} dims", dims.len())));
    }
    let mut count: usize = 1;
    for &d in dims {
        count = count
            .checked_mul(d as usize)
            .filter(|&c| c <= MAX_ELEMENTS)
            .ok_or_else(|| ProtocolError::Malformed(format!("tensor {dims:?} too large")))?;
    }
    Ok(count)
}

fn write_frame(w: &mut impl Write, code: u8, tensor: &Tensor) -> io::Result<()> {
    let mut buf = Vec::with_capacity(6 + 4 * tensor.dims.len() + 4 * tensor.data.len());
    buf.extend_from_slice(&MAGIC);
    buf.push(code);
    buf.push(tensor.dims.len() as u8);
    for d in &tensor.dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in &tensor.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()
}

/// Reads one frame. `Ok(None)` means the stream ended cleanly before any
/// byte of a new frame.
fn read_frame(r: &mut impl Read) -> Result<Option<(u8, Tensor)>, ProtocolError> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut magic[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(truncated()),
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if magic != MAGIC {
        return Err(ProtocolError::Malformed(format!("bad magic {magic:?}")));
    }
    let mut head = [0u8; 2];
    read_exact(r, &mut head)?;
    let (code, ndim) = (head[0], head[1] as usize);
    let mut raw = vec![0u8; 4 * ndim];
    read_exact(r, &mut raw)?;
    let dims: Vec<u32> = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let count = element_count(&dims)?;
    let mut payload = vec![0u8; 4 * count];
    read_exact(r, &mut payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Some((code, Tensor { dims, data })))
}

fn truncated() -> ProtocolError {
    ProtocolError::Malformed("frame truncated".into())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), ProtocolError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            truncated()
        } else {
            e.into()
        }
    })
}

pub fn write_request(w: &mut impl Write, opcode: u8, tensor: &Tensor) -> io::Result<()> {
    write_frame(w, opcode, tensor)
}

pub fn write_response(w: &mut impl Write, status: u8, tensor: &Tensor) -> io::Result<()> {
    write_frame(w, status, tensor)
}

/// `Ok(None)` on clean end of stream (the client hung up).
pub fn read_request(r: &mut impl Read) -> Result<Option<(u8, Tensor)>, ProtocolError> {
    read_frame(r)
}

/// End of stream before a reply is a peer crash.
pub fn read_response(r: &mut impl Read) -> Result<(u8, Tensor), ProtocolError> {
    read_frame(r)?.ok_or_else(|| ProtocolError::PeerCrashed("stream closed before reply".into()))
}

/// Ways a test peer can misbehave on restore requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Reply with the last dimension grown by one.
    WrongShape,
    /// Reply with a corrupted magic.
    BadMagic,
    /// Send half a reply and exit.
    Truncate,
    /// Exit without replying.
    Crash,
    /// Reply with a non-zero status.
    ErrorStatus,
    /// Never reply.
    Hang,
    /// Corrupt the handshake reply.
    BadHandshake,
}

impl std::str::FromStr for Fault {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "wrong-shape" => Fault::WrongShape,
            "bad-magic" => Fault::BadMagic,
            "truncate" => Fault::Truncate,
            "crash" => Fault::Crash,
            "error-status" => Fault::ErrorStatus,
            "hang" => Fault::Hang,
            "bad-handshake" => Fault::BadHandshake,
            other => return Err(format!("unknown fault {other:?}")),
        })
    }
}

/// Behaviour of the bundled test peer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PeerBehavior {
    /// Returns the payload untouched, signed zeros and NaN bits included.
    Echo,
    /// `y = scale * s + offset`, computed in f32.
    Affine { scale: f32, offset: f32 },
    Faulty(Fault),
}

/// Serves requests until the client hangs up or a fault ends the session.
pub fn serve_peer(
    reader: &mut impl Read,
    writer: &mut impl Write,
    behavior: PeerBehavior,
) -> Result<(), ProtocolError> {
    while let Some((opcode, tensor)) = read_request(reader)? {
        match (opcode, behavior) {
            (OP_HANDSHAKE, PeerBehavior::Faulty(Fault::BadHandshake)) => {
                writer.write_all(b"NOPE")?;
                writer.flush()?;
                return Ok(());
            }
            (OP_HANDSHAKE, _) => write_response(writer, STATUS_OK, &tensor)?,
            (OP_RESTORE, PeerBehavior::Echo) => write_response(writer, STATUS_OK, &tensor)?,
            (OP_RESTORE, PeerBehavior::Affine { scale, offset }) => {
                let data = tensor.data.iter().map(|v| scale * v + offset).collect();
                write_response(writer, STATUS_OK, &Tensor { dims: tensor.dims, data })?;
            }
            (OP_RESTORE, PeerBehavior::Faulty(fault)) => match fault {
                Fault::WrongShape => {
                    let mut dims = tensor.dims.clone();
                    if let Some(last) = dims.last_mut() {
                        *last += 1;
                    }
                    let mut data = tensor.data.clone();
                    data.resize(element_count(&dims)?, 0.0);
                    write_response(writer, STATUS_OK, &Tensor { dims, data })?;
                }
                Fault::BadMagic => {
                    let mut buf = Vec::new();
                    write_response(&mut buf, STATUS_OK, &tensor)?;
                    buf[..4].copy_from_slice(b"XXXX");
                    writer.write_all(&buf)?;
                    writer.flush()?;
                }
                Fault::Truncate => {
                    let mut buf = Vec::new();
                    write_response(&mut buf, STATUS_OK, &tensor)?;
                    writer.write_all(&buf[..buf.len() / 2])?;
                    writer.flush()?;
                    return Ok(());
                }
                Fault::Crash => return Ok(()),
                Fault::ErrorStatus => {
                    write_response(writer, STATUS_PEER_FAILURE, &Tensor::empty())?
                }
                Fault::Hang => loop {
                    std::thread::sleep(Duration::from_secs(3600));
                },
                Fault::BadHandshake => write_response(writer, STATUS_OK, &tensor)?,
            },
            _ => write_response(writer, STATUS_BAD_REQUEST, &Tensor::empty())?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    #[test]
    fn request_layout_is_little_endian() {
        let t = Tensor::new(vec![1, 1, 2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_request(&mut buf, OP_RESTORE, &t).unwrap();
        let mut expected = b"DRP1".to_vec();
        expected.extend_from_slice(&[1, 3]);
        for d in [1u32, 1, 2] {
            expected.extend_from_slice(&d.to_le_bytes());
        }
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn clean_eof_and_truncation_are_distinguished() {
        assert!(read_request(&mut Cursor::new(Vec::<u8>::new())).unwrap().is_none());
        assert!(matches!(
            read_response(&mut Cursor::new(Vec::<u8>::new())),
            Err(ProtocolError::PeerCrashed(_))
        ));
        let mut buf = Vec::new();
        write_response(&mut buf, 0, &Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(
            read_response(&mut Cursor::new(buf)),
            Err(ProtocolError::Malformed(_))
        ));
        assert!(matches!(
            read_response(&mut Cursor::new(b"DRP0\x00\x01".to_vec())),
            Err(ProtocolError::Malformed(_))
        ));
    }

    #[test]
    fn oversized_dims_rejected() {
        let mut buf = b"DRP1\x00\x02".to_vec();
        buf.extend_from_slice(&u32::MAX.to_le_bytes());
        buf.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            read_response(&mut Cursor::new(buf)),
            Err(ProtocolError::Malformed(_))
        ));
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn peer_answers_handshake_and_unknown_opcodes() {
        let mut input = Vec::new();
        write_request(&mut input, OP_HANDSHAKE, &Tensor::empty()).unwrap();
        write_request(&mut input, 9, &Tensor::empty()).unwrap();
        let mut out = Vec::new();
        serve_peer(&mut Cursor::new(input), &mut out, PeerBehavior::Echo).unwrap();
        let mut r = Cursor::new(out);
        assert_eq!(read_response(&mut r).unwrap(), (STATUS_OK, Tensor::empty()));
        assert_eq!(read_response(&mut r).unwrap().0, STATUS_BAD_REQUEST);
    }

    proptest! {
        #[test]
        fn frames_round_trip_bit_exactly(
            dims in proptest::collection::vec(1u32..5, 1..4),
            seed in any::<u64>(),
            opcode in any::<u8>(),
        ) {
            let count: usize = dims.iter().map(|&d| d as usize).product();
            let data: Vec<f32> = (0..count)
                .map(|i| f32::from_bits((seed as u32).wrapping_add(i as u32).wrapping_mul(2654435761) & 0x7f7f_ffff))
                .collect();
            let t = Tensor::new(dims, data).unwrap();
            let mut buf = Vec::new();
            write_request(&mut buf, opcode, &t).unwrap();
            let (op, back) = read_request(&mut Cursor::new(buf)).unwrap().unwrap();
            prop_assert_eq!(op, opcode);
            prop_assert_eq!(back.dims, t.dims);
            let same = back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
