//! OSC 1.0 message codec (int32, float32, string and blob arguments).

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum OscArg {
    Int(i32),
    Float(f32),
    String(String),
    Blob(Vec<u8>),
}

impl OscArg {
    fn tag(&self) -> u8 {
        match self {
            OscArg::Int(_) => b'i',
            OscArg::Float(_) => b'f',
            OscArg::String(_) => b's',
            OscArg::Blob(_) => b'b',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscPacket {
    pub address: String,
    pub args: Vec<OscArg>,
}

impl OscPacket {
    pub fn new(address: impl Into<String>, args: Vec<OscArg>) -> Self {
        Self {
            address: address.into(),
            args,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OscError {
    #[error("address {0:?} must start with '/' and contain no NUL bytes")]
    InvalidAddress(String),
    #[error("string argument contains a NUL byte")]
    InvalidString,
    #[error("unsupported type tag {tag:?} at byte {offset}")]
    UnsupportedType { tag: char, offset: usize },
    #[error("malformed packet at byte {offset}: {reason}")]
    MalformedPacket { offset: usize, reason: &'static str },
}

fn padded_len(n: usize) -> usize {
    (n + 4) & !3
}

fn write_padded_str(out: &mut Vec<u8>, s: &[u8]) {
    out.extend_from_slice(s);
    let pad = padded_len(s.len()) - s.len();
    out.extend(std::iter::repeat_n(0u8, pad));
}

/// Encodes a message. The result length is always a multiple of four.
pub fn encode_osc(packet: &OscPacket) -> Result<Vec<u8>, OscError> {
    let addr = packet.address.as_bytes();
    if addr.first() != Some(&b'/') || addr.contains(&0) {
        return Err(OscError::InvalidAddress(packet.address.clone()));
    }
    let mut out = Vec::with_capacity(padded_len(addr.len()) + 8 + packet.args.len() * 8);
    write_padded_str(&mut out, addr);

    let mut tags = Vec::with_capacity(packet.args.len() + 1);
    tags.push(b',');
    tags.extend(packet.args.iter().map(OscArg::tag));
    write_padded_str(&mut out, &tags);

    for arg in &packet.args {
        match arg {
            OscArg::Int(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Float(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::String(s) => {
                if s.as_bytes().contains(&0) {
                    return Err(OscError::InvalidString);
                }
                write_padded_str(&mut out, s.as_bytes());
            }
            OscArg::Blob(b) => {
                let len = i32::try_from(b.len()).map_err(|_| OscError::MalformedPacket {
                    offset: out.len(),
                    reason: "blob too large",
                })?;
                out.extend_from_slice(&len.to_be_bytes());
                out.extend_from_slice(b);
                out.extend(std::iter::repeat_n(0u8, (4 - b.len() % 4) % 4));
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn malformed(&self, reason: &'static str) -> OscError {
        OscError::MalformedPacket {
            offset: self.pos,
            reason,
        }
    }

    fn padded_str(&mut self) -> Result<&'a [u8], OscError> {
        let rest = &self.bytes[self.pos..];
        let nul = rest
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| self.malformed("unterminated string"))?;
        let total = padded_len(nul);
        if total > rest.len() {
            return Err(self.malformed("string padding truncated"));
        }
        if rest[nul..total].iter().any(|&b| b != 0) {
            return Err(self.malformed("non-zero string padding"));
        }
        self.pos += total;
        Ok(&rest[..nul])
    }

    fn word(&mut self) -> Result<[u8; 4], OscError> {
        let w = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| self.malformed("truncated argument"))?;
        self.pos += 4;
        Ok([w[0], w[1], w[2], w[3]])
    }
}

/// Decodes a single OSC message.
pub fn decode_osc(bytes: &[u8]) -> Result<OscPacket, OscError> {
    let mut r = Reader { bytes, pos: 0 };
    if !bytes.len().is_multiple_of(4) {
        return Err(OscError::MalformedPacket {
            offset: bytes.len(),
            reason: "length is not a multiple of 4",
        });
    }
    if bytes.first() != Some(&b'/') {
        return Err(r.malformed("address must start with '/'"));
    }
    let address = std::str::from_utf8(r.padded_str()?)
        .map_err(|_| OscError::MalformedPacket {
            offset: 0,
            reason: "address is not UTF-8",
        })?
        .to_string();

    let tag_offset = r.pos;
    if bytes.get(tag_offset) != Some(&b',') {
        return Err(r.malformed("missing type tag string"));
    }
    let tags = r.padded_str()?;
    let mut args = Vec::with_capacity(tags.len() - 1);
    for (i, &tag) in tags.iter().enumerate().skip(1) {
        let arg = match tag {
            b'i' => OscArg::Int(i32::from_be_bytes(r.word()?)),
            b'f' => OscArg::Float(f32::from_be_bytes(r.word()?)),
            b's' => {
                let start = r.pos;
                let s = r.padded_str()?;
                OscArg::String(
                    std::str::from_utf8(s)
                        .map_err(|_| OscError::MalformedPacket {
                            offset: start,
                            reason: "string is not UTF-8",
                        })?
                        .to_string(),
                )
            }
            b'b' => {
                let len = i32::from_be_bytes(r.word()?);
                let len = usize::try_from(len).map_err(|_| r.malformed("negative blob length"))?;
                let total = len + (4 - len % 4) % 4;
                let data = bytes
                    .get(r.pos..r.pos + total)
                    .ok_or_else(|| r.malformed("truncated blob"))?;
                r.pos += total;
                OscArg::Blob(data[..len].to_vec())
            }
            other => {
                return Err(OscError::UnsupportedType {
                    tag: other as char,
                    offset: tag_offset + i,
                })
            }
        };
        args.push(arg);
    }
    if r.pos != bytes.len() {
        return Err(r.malformed("trailing bytes"));
    }
    Ok(OscPacket { address, args })
}
