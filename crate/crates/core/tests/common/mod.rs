#![allow(dead_code)]

use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;

use attnfilter_core::oracle::frame::read_raw_frame;
use attnfilter_core::oracle::{serve, LinearSoftmaxModel, OracleSession};
use attnfilter_core::{Error, Image};

pub const CHANNELS: usize = 3;
pub const SIDE: usize = 8;
pub const PATCH: usize = 4;
pub const LAYERS: usize = 2;
pub const HEADS: usize = 2;
pub const CLASSES: usize = 5;
pub const MODEL_SEED: u64 = 17;

pub fn model() -> LinearSoftmaxModel {
    LinearSoftmaxModel::new(CHANNELS, SIDE, PATCH, LAYERS, HEADS, CLASSES, MODEL_SEED).unwrap()
}

pub fn scenario_image(k: usize) -> Image {
    let n = CHANNELS * SIDE * SIDE;
    let data = (0..n).map(|i| ((i as f64) * 0.37 + k as f64).sin() * 0.5).collect();
    Image::new(CHANNELS, SIDE, SIDE, data).unwrap()
}

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/transcript")
}

/// The scripted client session the golden transcript records: hello, a
/// two-image score, attentions, gradients for a valid class and gradients
/// for an out-of-range class.
pub fn scenario(s: &mut OracleSession) -> Vec<String> {
    let mut out = Vec::new();
    match s.handshake() {
        Ok(i) => out.push(format!("hello {} {} {} {}", i.layers, i.heads, i.tokens, i.class_count)),
        Err(e) => {
            out.push(format!("hello error {e}"));
            return out;
        }
    }
    let imgs = [scenario_image(0), scenario_image(1)];
    match s.score(&imgs) {
        Ok(rows) => out.push(format!("score {}x{}", rows.len(), rows[0].len())),
        Err(e) => out.push(format!("score error {e}")),
    }
    match s.get_attentions(&imgs[0]) {
        Ok(t) => out.push(format!("attentions {:?}", t.shape)),
        Err(e) => out.push(format!("attentions error {e}")),
    }
    match s.get_gradients(&imgs[0], 1) {
        Ok(t) => out.push(format!("gradients {:?}", t.shape)),
        Err(e) => out.push(format!("gradients error {e}")),
    }
    match s.get_gradients(&imgs[0], 9) {
        Err(Error::GradientMissing(c)) => out.push(format!("gradients missing {c}")),
        other => out.push(format!("gradients unexpected {:?}", other.map(|t| t.shape))),
    }
    out
}

pub fn expected_outcome() -> Vec<String> {
    let t = (SIDE / PATCH) * (SIDE / PATCH) + 1;
    vec![
        format!("hello {LAYERS} {HEADS} {t} {CLASSES}"),
        format!("score 2x{CLASSES}"),
        format!("attentions {:?}", [LAYERS, HEADS, t, t]),
        format!("gradients {:?}", [LAYERS, HEADS, t, t]),
        "gradients missing 9".to_string(),
    ]
}

/// Splits a byte stream into raw frames.
pub fn split_frames(mut bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    while let Some(f) = read_raw_frame(&mut bytes).unwrap() {
        out.push(f);
    }
    out
}

pub struct Transcript {
    pub client: Vec<Vec<u8>>,
    pub server: Vec<Vec<u8>>,
}

impl Transcript {
    pub fn load() -> Transcript {
        let dir = fixture_dir();
        Transcript {
            client: split_frames(&std::fs::read(dir.join("client.bin")).unwrap()),
            server: split_frames(&std::fs::read(dir.join("server.bin")).unwrap()),
        }
    }

    pub fn save(client: &[u8], server: &[u8]) {
        let dir = fixture_dir();
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("client.bin"), client).unwrap();
        std::fs::write(dir.join("server.bin"), server).unwrap();
    }
}

/// Plays the server half of a transcript. Each incoming frame must equal
/// the recorded client frame byte for byte; the recorded reply is sent back.
pub fn replay<R: Read, W: Write>(mut r: R, mut w: W, t: &Transcript) -> Result<usize, String> {
    for (i, (expect, reply)) in t.client.iter().zip(&t.server).enumerate() {
        let got = match read_raw_frame(&mut r) {
            Ok(Some(f)) => f,
            Ok(None) => return Err(format!("client stopped before frame {i}")),
            Err(e) => return Err(format!("frame {i}: {e}")),
        };
        if &got != expect {
            let at = got.iter().zip(expect).position(|(a, b)| a != b).unwrap_or(got.len().min(expect.len()));
            return Err(format!(
                "frame {i} differs at byte {at} ({} vs {} bytes)",
                got.len(),
                expect.len()
            ));
        }
        w.write_all(reply).map_err(|e| e.to_string())?;
        w.flush().map_err(|e| e.to_string())?;
    }
    match read_raw_frame(&mut r) {
        Ok(None) => Ok(t.client.len()),
        Ok(Some(_)) => Err("client sent frames beyond the transcript".into()),
        Err(e) => Err(e.to_string()),
    }
}

/// Runs the scenario against the replaying server over OS pipes.
pub fn replay_over_pipes(t: &Transcript) -> (Vec<String>, Result<usize, String>) {
    let (c_read, s_write) = io::pipe().unwrap();
    let (s_read, c_write) = io::pipe().unwrap();
    let t_client = t.client.clone();
    let t_server = t.server.clone();
    let server = thread::spawn(move || {
        replay(
            s_read,
            s_write,
            &Transcript {
                client: t_client,
                server: t_server,
            },
        )
    });
    let mut session = OracleSession::from_streams(c_read, c_write);
    let outcome = scenario(&mut session);
    drop(session);
    (outcome, server.join().unwrap())
}

/// Runs the scenario against the replaying server over loopback TCP.
pub fn replay_over_tcp(t: &Transcript) -> (Vec<String>, Result<usize, String>) {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let t_client = t.client.clone();
    let t_server = t.server.clone();
    let server = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let r = stream.try_clone().unwrap();
        replay(
            r,
            stream,
            &Transcript {
                client: t_client,
                server: t_server,
            },
        )
    });
    // a raw stream rather than connect(), which would handshake on its own
    let stream = std::net::TcpStream::connect(addr).unwrap();
    let mut session = OracleSession::from_tcp(stream).unwrap();
    let outcome = scenario(&mut session);
    drop(session);
    (outcome, server.join().unwrap())
}

#[derive(Clone, Default)]
pub struct Tap(pub Arc<Mutex<Vec<u8>>>);

pub struct Tee<W> {
    inner: W,
    tap: Tap,
}

impl<W: Write> Write for Tee<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.tap.0.lock().unwrap().extend_from_slice(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Runs the scenario against the live synthetic server and records both
/// directions.
pub fn record_live() -> (Vec<String>, Vec<u8>, Vec<u8>) {
    let (c_read, s_write) = io::pipe().unwrap();
    let (s_read, c_write) = io::pipe().unwrap();
    let (client_tap, server_tap) = (Tap::default(), Tap::default());
    let st = server_tap.clone();
    let server = thread::spawn(move || {
        let w = Tee { inner: s_write, tap: st };
        serve(s_read, w, &mut model())
    });
    let w = Tee {
        inner: c_write,
        tap: client_tap.clone(),
    };
    let mut session = OracleSession::from_streams(c_read, w);
    let outcome = scenario(&mut session);
    drop(session);
    server.join().unwrap().unwrap();
    let c = client_tap.0.lock().unwrap().clone();
    let s = server_tap.0.lock().unwrap().clone();
    (outcome, c, s)
}
