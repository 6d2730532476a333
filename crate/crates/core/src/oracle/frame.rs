//! Wire framing.
//!
//! ```text
//! u64 LE  frame length (header line + payload)
//! bytes   UTF-8 JSON header terminated by '\n'
//! bytes   payload: an NPY image, possibly empty
//! ```

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic string carried in both hello frames.
pub const PROTOCOL_MAGIC: &str = "ATTNFILTER";
pub const PROTOCOL_VERSION: u32 = 1;

/// Frames above this size are treated as corruption.
pub const MAX_FRAME: u64 = 1 << 34;

/// Model description sent by the server in its hello.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleInfo {
    pub model: String,
    pub class_count: usize,
    pub layers: usize,
    pub heads: usize,
    pub tokens: usize,
    /// `[C, H, W]`
    pub input_shape: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub id: u64,
    pub magic: String,
    pub version: u32,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub info: Option<OracleInfo>,
}

impl Hello {
    pub fn client() -> Self {
        Hello {
            id: 0,
            magic: PROTOCOL_MAGIC.to_string(),
            version: PROTOCOL_VERSION,
            info: None,
        }
    }

    pub fn server(info: OracleInfo) -> Self {
        Hello {
            info: Some(info),
            ..Hello::client()
        }
    }
}

/// JSON header of a frame. Field order is fixed, so identical messages
/// always serialize to identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Header {
    Hello(Hello),
    Score { id: u64, batch: usize },
    ScoreResult { id: u64 },
    Attentions { id: u64 },
    AttentionsResult { id: u64 },
    Gradients { id: u64, class: usize },
    GradientsResult { id: u64 },
    Error { id: u64, code: String, message: String },
}

impl Header {
    pub fn id(&self) -> u64 {
        match self {
            Header::Hello(h) => h.id,
            Header::Score { id, .. }
            | Header::ScoreResult { id }
            | Header::Attentions { id }
            | Header::AttentionsResult { id }
            | Header::Gradients { id, .. }
            | Header::GradientsResult { id }
            | Header::Error { id, .. } => *id,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Header::Hello(_) => "hello",
            Header::Score { .. } => "score",
            Header::ScoreResult { .. } => "score_result",
            Header::Attentions { .. } => "attentions",
            Header::AttentionsResult { .. } => "attentions_result",
            Header::Gradients { .. } => "gradients",
            Header::GradientsResult { .. } => "gradients_result",
            Header::Error { .. } => "error",
        }
    }
}

/// Error codes a server may put in an error frame.
pub mod codes {
    pub const CLASS_OUT_OF_RANGE: &str = "class_out_of_range";
    pub const BAD_REQUEST: &str = "bad_request";
    pub const INTERNAL: &str = "internal";
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub header: Header,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(header: Header) -> Self {
        Frame {
            header,
            payload: Vec::new(),
        }
    }

    pub fn with_payload(header: Header, payload: Vec<u8>) -> Self {
        Frame { header, payload }
    }

    /// The exact bytes this frame occupies on the wire.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut line = serde_json::to_vec(&self.header).expect("headers always serialize");
        line.push(b'\n');
        let len = (line.len() + self.payload.len()) as u64;
        let mut out = Vec::with_capacity(8 + len as usize);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&line);
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame<W: Write + ?Sized>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.to_bytes())?;
    w.flush()
}

/// Reads the raw bytes of one frame, length prefix included. `Ok(None)` on
/// a clean end of stream before the prefix.
pub fn read_raw_frame<R: Read + ?Sized>(r: &mut R) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 8];
    let mut got = 0;
    while got < 8 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Protocol("stream ended inside a length prefix".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let n = u64::from_le_bytes(len);
    if n > MAX_FRAME {
        return Err(Error::Protocol(format!("frame length {n} exceeds limit")));
    }
    let mut out = vec![0u8; 8 + n as usize];
    out[..8].copy_from_slice(&len);
    r.read_exact(&mut out[8..]).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Protocol("stream ended inside a frame".into()),
        _ => e.into(),
    })?;
    Ok(Some(out))
}

/// Splits raw frame bytes into header and payload.
pub fn parse_frame(raw: &[u8]) -> Result<Frame> {
    let body = raw
        .get(8..)
        .ok_or_else(|| Error::Protocol("frame shorter than its length prefix".into()))?;
    let nl = body
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Protocol("frame header has no terminating newline".into()))?;
    let header: Header = serde_json::from_slice(&body[..nl])
        .map_err(|e| Error::Protocol(format!("bad frame header: {e}")))?;
    Ok(Frame {
        header,
        payload: body[nl + 1..].to_vec(),
    })
}

pub fn read_frame<R: Read + ?Sized>(r: &mut R) -> Result<Option<Frame>> {
    match read_raw_frame(r)? {
        Some(raw) => parse_frame(&raw).map(Some),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn info() -> OracleInfo {
        OracleInfo {
            model: "vit".into(),
            class_count: 1000,
            layers: 12,
            heads: 12,
            tokens: 197,
            input_shape: vec![3, 224, 224],
            mean: vec![0.5; 3],
            std: vec![0.5; 3],
        }
    }

    #[test]
    fn header_bytes_are_stable() {
        let f = Frame::new(Header::Gradients { id: 3, class: 7 });
        let bytes = f.to_bytes();
        let line = b"{\"type\":\"gradients\",\"id\":3,\"class\":7}\n";
        assert_eq!(&bytes[..8], &(line.len() as u64).to_le_bytes());
        assert_eq!(&bytes[8..], line);
        let hello = serde_json::to_string(&Header::Hello(Hello::client())).unwrap();
        assert_eq!(hello, r#"{"type":"hello","id":0,"magic":"ATTNFILTER","version":1}"#);
    }

    #[test]
    fn frames_roundtrip() {
        let frames = [
            Frame::new(Header::Hello(Hello::server(info()))),
            Frame::with_payload(Header::Score { id: 1, batch: 2 }, vec![1, 2, 3, b'\n', 0]),
            Frame::new(Header::Error {
                id: 9,
                code: codes::BAD_REQUEST.into(),
                message: "no".into(),
            }),
        ];
        let mut wire = Vec::new();
        for f in &frames {
            write_frame(&mut wire, f).unwrap();
        }
        let mut r = wire.as_slice();
        for f in &frames {
            assert_eq!(&read_frame(&mut r).unwrap().unwrap(), f);
        }
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn truncation_and_garbage() {
        let bytes = Frame::new(Header::Attentions { id: 1 }).to_bytes();
        assert!(matches!(read_frame(&mut &bytes[..5]), Err(Error::Protocol(_))));
        assert!(matches!(read_frame(&mut &bytes[..bytes.len() - 2]), Err(Error::Protocol(_))));
        let mut junk = 4u64.to_le_bytes().to_vec();
        junk.extend_from_slice(b"abc\n");
        assert!(matches!(read_frame(&mut junk.as_slice()), Err(Error::Protocol(_))));
        let huge = u64::MAX.to_le_bytes();
        assert!(matches!(read_frame(&mut huge.as_slice()), Err(Error::Protocol(_))));
    }
}
