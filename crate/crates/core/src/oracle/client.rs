use std::io::{Read, Write};
use std::net::{Shutdown, TcpStream};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::frame::{codes, parse_frame, read_raw_frame, write_frame, Frame, Header, Hello, OracleInfo};
use super::frame::{PROTOCOL_MAGIC, PROTOCOL_VERSION};
use super::ClassScorer;
use crate::error::{Error, Result};
use crate::tensor_io::{npy, AttentionBundle, Geometry, Image};

pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(30);
pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(600);

/// Probability rows must sum to one within this tolerance.
pub const PROBABILITY_TOL: f64 = 1e-4;

/// Where the oracle lives, parsed from `cmd:<argv>` or `tcp:<host>:<port>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OracleSpec {
    Command(Vec<String>),
    Tcp(String),
}

impl FromStr for OracleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("cmd:") {
            let argv: Vec<String> = cmd.split_whitespace().map(String::from).collect();
            if argv.is_empty() {
                return Err(Error::Config("empty oracle command".into()));
            }
            Ok(OracleSpec::Command(argv))
        } else if let Some(addr) = s.strip_prefix("tcp:") {
            if !addr.contains(':') {
                return Err(Error::Config(format!("tcp oracle needs host:port, got {addr:?}")));
            }
            Ok(OracleSpec::Tcp(addr.to_string()))
        } else {
            Err(Error::Config(format!(
                "oracle must be \"cmd:<argv>\" or \"tcp:<host>:<port>\", got {s:?}"
            )))
        }
    }
}

/// `[L,H,T,T]` tensor returned by the oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTensor {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

/// A client connection to a scoring/attention oracle.
///
/// One request is in flight at a time. Frames are read on a helper thread so
/// every wait can time out regardless of transport.
pub struct OracleSession {
    writer: Box<dyn Write + Send>,
    frames: Receiver<Result<Vec<u8>>>,
    next_id: u64,
    info: Option<OracleInfo>,
    timeout: Duration,
    child: Option<Child>,
    socket: Option<TcpStream>,
}

impl OracleSession {
    /// Wraps an already open byte stream pair. No handshake is performed.
    pub fn from_streams<R, W>(reader: R, writer: W) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = reader;
            loop {
                match read_raw_frame(&mut reader) {
                    Ok(Some(raw)) => {
                        if tx.send(Ok(raw)).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        OracleSession {
            writer: Box::new(writer),
            frames: rx,
            next_id: 0,
            info: None,
            timeout: REQUEST_TIMEOUT,
            child: None,
            socket: None,
        }
    }

    /// Wraps a connected socket. No handshake is performed.
    pub fn from_tcp(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let handle = stream.try_clone()?;
        let mut s = OracleSession::from_streams(reader, stream);
        s.socket = Some(handle);
        Ok(s)
    }

    /// Opens the transport named by `spec` and completes the handshake.
    pub fn connect(spec: &OracleSpec) -> Result<Self> {
        let mut session = match spec {
            OracleSpec::Command(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::Oracle(format!("cannot start {:?}: {e}", argv[0])))?;
                let stdin = child.stdin.take().expect("stdin is piped");
                let stdout = child.stdout.take().expect("stdout is piped");
                let mut s = OracleSession::from_streams(stdout, stdin);
                s.child = Some(child);
                s
            }
            OracleSpec::Tcp(addr) => {
                let stream = TcpStream::connect(addr)
                    .map_err(|e| Error::Oracle(format!("cannot connect to {addr}: {e}")))?;
                OracleSession::from_tcp(stream)?
            }
        };
        session.handshake()?;
        Ok(session)
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    /// Model description, available after the handshake.
    pub fn info(&self) -> Option<&OracleInfo> {
        self.info.as_ref()
    }

    fn ready_info(&self) -> Result<&OracleInfo> {
        self.info
            .as_ref()
            .ok_or_else(|| Error::Protocol("request before handshake".into()))
    }

    fn recv(&mut self, timeout: Duration) -> Result<Frame> {
        match self.frames.recv_timeout(timeout) {
            Ok(Ok(raw)) => parse_frame(&raw),
            Ok(Err(e)) => Err(e),
            Err(RecvTimeoutError::Timeout) => Err(Error::Oracle(format!("no reply within {timeout:?}"))),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Oracle("oracle closed the connection".into())),
        }
    }

    /// Sends the client hello and validates the server's.
    pub fn handshake(&mut self) -> Result<OracleInfo> {
        if self.info.is_some() {
            return Err(Error::Protocol("handshake already completed".into()));
        }
        let hello = Hello::client();
        write_frame(&mut self.writer, &Frame::new(Header::Hello(hello)))?;
        let reply = self.recv(HANDSHAKE_TIMEOUT.min(self.timeout))?;
        let Header::Hello(h) = reply.header else {
            return Err(Error::Protocol(format!("expected hello, got {}", reply.header.kind())));
        };
        if h.magic != PROTOCOL_MAGIC {
            return Err(Error::Protocol(format!("bad magic {:?}", h.magic)));
        }
        if h.version != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "protocol version {} (client speaks {PROTOCOL_VERSION})",
                h.version
            )));
        }
        if h.id != 0 {
            return Err(Error::Protocol(format!("hello reply id {} (expected 0)", h.id)));
        }
        let info = h
            .info
            .ok_or_else(|| Error::Protocol("server hello lacks model information".into()))?;
        if info.input_shape.len() != 3 {
            return Err(Error::Protocol(format!("input_shape {:?} is not [C,H,W]", info.input_shape)));
        }
        self.next_id = 1;
        self.info = Some(info.clone());
        Ok(info)
    }

    /// Sends one request and waits for its reply. Error frames come back as
    /// `Ok` so callers can map them.
    fn request(&mut self, header: Header, payload: Vec<u8>) -> Result<Frame> {
        self.ready_info()?;
        let id = header.id();
        write_frame(&mut self.writer, &Frame::with_payload(header, payload))?;
        let reply = self.recv(self.timeout)?;
        if reply.header.id() != id {
            return Err(Error::Protocol(format!(
                "reply id {} does not match request id {id}",
                reply.header.id()
            )));
        }
        Ok(reply)
    }

    fn take_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let info = self.ready_info()?;
        if image.shape().as_slice() != info.input_shape.as_slice() {
            return Err(Error::shape(format!(
                "image {:?} vs oracle input {:?}",
                image.shape(),
                info.input_shape
            )));
        }
        Ok(())
    }

    /// Class probabilities for each image, in order.
    pub fn score(&mut self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        for img in images {
            self.check_image(img)?;
        }
        let [c, h, w] = images[0].shape();
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            data.extend(img.data().iter().map(|&v| v as f32));
        }
        let payload = npy::encode(&[images.len(), c, h, w], &data)?;
        let id = self.take_id();
        let reply = self.request(Header::Score { id, batch: images.len() }, payload)?;
        let classes = self.ready_info()?.class_count;
        match reply.header {
            Header::ScoreResult { .. } => {}
            Header::Error { code, message, .. } => {
                return Err(Error::Oracle(format!("score failed ({code}): {message}")))
            }
            other => return Err(Error::Protocol(format!("expected score_result, got {}", other.kind()))),
        }
        let arr = npy::decode(&reply.payload)?;
        if arr.shape != [images.len(), classes] {
            return Err(Error::Oracle(format!(
                "score_result shape {:?}, expected [{}, {classes}]",
                arr.shape,
                images.len()
            )));
        }
        let rows: Vec<Vec<f64>> = arr
            .data
            .chunks_exact(classes)
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .collect();
        for (i, r) in rows.iter().enumerate() {
            let sum: f64 = r.iter().sum();
            if r.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > PROBABILITY_TOL {
                return Err(Error::Oracle(format!("row {i} is not a probability vector (sum {sum})")));
            }
        }
        Ok(rows)
    }

    fn expect_tensor(&self, reply: Frame, expected: &str) -> Result<AttentionTensor> {
        let info = self.ready_info()?;
        if reply.header.kind() != expected {
            return Err(Error::Protocol(format!("expected {expected}, got {}", reply.header.kind())));
        }
        let arr = npy::decode(&reply.payload)?;
        let shape = [info.layers, info.heads, info.tokens, info.tokens];
        if arr.shape != shape {
            return Err(Error::invalid(
                "attention-shape",
                format!("oracle sent {:?}, hello promised {shape:?}", arr.shape),
            ));
        }
        Ok(AttentionTensor { shape, data: arr.data })
    }

    /// Post-softmax attentions for `image`, validated as row-stochastic.
    pub fn get_attentions(&mut self, image: &Image) -> Result<AttentionTensor> {
        self.check_image(image)?;
        let payload = npy::encode(&image.shape(), &image.to_f32())?;
        let id = self.take_id();
        let reply = self.request(Header::Attentions { id }, payload)?;
        if let Header::Error { code, message, .. } = &reply.header {
            return Err(Error::Oracle(format!("attentions failed ({code}): {message}")));
        }
        let t = self.expect_tensor(reply, "attentions_result")?;
        crate::tensor_io::check_attention_rows(&t.data, t.shape[3])?;
        Ok(t)
    }

    /// Gradient of the class logit with respect to every attention matrix.
    pub fn get_gradients(&mut self, image: &Image, class: usize) -> Result<AttentionTensor> {
        self.check_image(image)?;
        let payload = npy::encode(&image.shape(), &image.to_f32())?;
        let id = self.take_id();
        let reply = self.request(Header::Gradients { id, class }, payload)?;
        if let Header::Error { code, message, .. } = &reply.header {
            if code == codes::CLASS_OUT_OF_RANGE {
                return Err(Error::GradientMissing(class));
            }
            return Err(Error::Oracle(format!("gradients failed ({code}): {message}")));
        }
        let t = self.expect_tensor(reply, "gradients_result")?;
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("finite", "non-finite gradient from oracle"));
        }
        Ok(t)
    }

    /// Builds a validated bundle for `image` with gradients for `classes`.
    /// Logits are the log-probabilities returned by `score`.
    pub fn fetch_bundle(&mut self, image: &Image, image_id: &str, classes: &[usize]) -> Result<AttentionBundle> {
        let info = self.ready_info()?.clone();
        let [_, h, w] = image.shape();
        let patches = info.tokens.saturating_sub(1);
        let patch_size = (h * w).checked_div(patches).map_or(0, |a| (a as f64).sqrt().round() as usize);
        let geometry = Geometry {
            layers: info.layers,
            heads: info.heads,
            tokens: info.tokens,
            patch_size,
            image_height: h,
            image_width: w,
        };
        let probs = self.score(std::slice::from_ref(image))?.remove(0);
        let logits = probs.iter().map(|p| p.max(f64::MIN_POSITIVE).ln() as f32).collect();
        let att = self.get_attentions(image)?;
        let mut bundle = AttentionBundle::new(image_id, geometry, info.class_count, att.data, Some(logits))?;
        for &c in classes {
            let g = self.get_gradients(image, c)?;
            bundle.insert_gradients(c, g.data)?;
        }
        Ok(bundle)
    }
}

impl ClassScorer for OracleSession {
    fn class_scores(&mut self, images: &[Image], class: usize) -> Result<Vec<f64>> {
        let classes = self.ready_info()?.class_count;
        if class >= classes {
            return Err(Error::Config(format!("class {class} >= class_count {classes}")));
        }
        Ok(self.score(images)?.into_iter().map(|r| r[class]).collect())
    }
}

impl Drop for OracleSession {
    fn drop(&mut self) {
        if let Some(s) = self.socket.take() {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
