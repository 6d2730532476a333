use std::io::{Read, Write};

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::frame::{codes, read_frame, write_frame, Frame, Header, Hello, OracleInfo};
use super::frame::{PROTOCOL_MAGIC, PROTOCOL_VERSION};
use crate::error::{Error, Result};
use crate::synthetic::softmax_rows;
use crate::tensor_io::{npy, Image};

/// Returned by [`OracleModel::gradients`] for a class the model lacks.
#[derive(Debug)]
pub struct ClassOutOfRange(pub usize);

/// What a server needs from a model.
pub trait OracleModel {
    fn info(&self) -> OracleInfo;
    /// One probability row per image.
    fn probabilities(&mut self, images: &[Image]) -> Result<Vec<Vec<f64>>>;
    /// `[L,H,T,T]`, row-stochastic.
    fn attentions(&mut self, image: &Image) -> Result<Vec<f32>>;
    /// `[L,H,T,T]` gradients of the class logit.
    fn gradients(&mut self, image: &Image, class: usize) -> Result<std::result::Result<Vec<f32>, ClassOutOfRange>>;
}

fn error_frame(id: u64, code: &str, message: impl Into<String>) -> Frame {
    Frame::new(Header::Error {
        id,
        code: code.to_string(),
        message: message.into(),
    })
}

fn decode_images(payload: &[u8], info: &OracleInfo, batched: bool) -> Result<Vec<Image>> {
    let arr = npy::decode(payload)?;
    let (n, shape) = if batched {
        match arr.shape.split_first() {
            Some((&n, rest)) => (n, rest.to_vec()),
            None => return Err(Error::Protocol("scalar image payload".into())),
        }
    } else {
        (1, arr.shape.clone())
    };
    if shape != info.input_shape {
        return Err(Error::Protocol(format!("image shape {shape:?}, model expects {:?}", info.input_shape)));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    arr.data
        .chunks_exact(c * h * w)
        .take(n)
        .map(|d| Image::new(c, h, w, d.iter().map(|&v| f64::from(v)).collect()))
        .collect()
}

fn handle(model: &mut dyn OracleModel, info: &OracleInfo, frame: Frame) -> Result<Frame> {
    let id = frame.header.id();
    let reply = match frame.header {
        Header::Score { batch, .. } => {
            let images = decode_images(&frame.payload, info, true)?;
            if images.len() != batch {
                return Ok(error_frame(id, codes::BAD_REQUEST, format!("batch {batch} but {} images", images.len())));
            }
            let probs = model.probabilities(&images)?;
            let flat: Vec<f32> = probs.iter().flatten().map(|&p| p as f32).collect();
            Frame::with_payload(
                Header::ScoreResult { id },
                npy::encode(&[images.len(), info.class_count], &flat)?,
            )
        }
        Header::Attentions { .. } => {
            let image = decode_images(&frame.payload, info, false)?.remove(0);
            let att = model.attentions(&image)?;
            let t = info.tokens;
            Frame::with_payload(
                Header::AttentionsResult { id },
                npy::encode(&[info.layers, info.heads, t, t], &att)?,
            )
        }
        Header::Gradients { class, .. } => {
            let image = decode_images(&frame.payload, info, false)?.remove(0);
            match model.gradients(&image, class)? {
                Ok(g) => {
                    let t = info.tokens;
                    Frame::with_payload(
                        Header::GradientsResult { id },
                        npy::encode(&[info.layers, info.heads, t, t], &g)?,
                    )
                }
                Err(ClassOutOfRange(c)) => error_frame(
                    id,
                    codes::CLASS_OUT_OF_RANGE,
                    format!("class {c} >= {}", info.class_count),
                ),
            }
        }
        other => error_frame(id, codes::BAD_REQUEST, format!("unexpected {} frame", other.kind())),
    };
    Ok(reply)
}

/// Answers requests until the client closes the stream.
///
/// The first frame must be a hello with the right magic and version;
/// otherwise an error frame is sent and the function returns an error.
pub fn serve<R: Read, W: Write>(mut reader: R, mut writer: W, model: &mut dyn OracleModel) -> Result<()> {
    let info = model.info();
    let Some(first) = read_frame(&mut reader)? else {
        return Ok(());
    };
    match &first.header {
        Header::Hello(h) if h.magic == PROTOCOL_MAGIC && h.version == PROTOCOL_VERSION => {
            write_frame(&mut writer, &Frame::new(Header::Hello(Hello::server(info.clone()))))?;
        }
        other => {
            let msg = format!("expected hello {PROTOCOL_MAGIC} v{PROTOCOL_VERSION}, got {other:?}");
            write_frame(&mut writer, &error_frame(other.id(), codes::BAD_REQUEST, msg.clone()))?;
            return Err(Error::Protocol(msg));
        }
    }
    while let Some(frame) = read_frame(&mut reader)? {
        let id = frame.header.id();
        debug!("oracle request {} id={id}", frame.header.kind());
        let reply = handle(model, &info, frame).unwrap_or_else(|e| {
            warn!("request {id} failed: {e}");
            let code = match e {
                Error::Protocol(_) | Error::Format(_) | Error::Dtype(_) | Error::Shape(_) => codes::BAD_REQUEST,
                _ => codes::INTERNAL,
            };
            error_frame(id, code, e.to_string())
        });
        write_frame(&mut writer, &reply)?;
    }
    Ok(())
}

/// Deterministic stand-in model: a seeded linear map followed by softmax,
/// with attentions computed from patch means. Gradients are seeded noise
/// modulated by the image, not true derivatives.
#[derive(Clone, Debug)]
pub struct LinearSoftmaxModel {
    info: OracleInfo,
    patch: usize,
    weights: Vec<f64>,
    seed: u64,
}

impl LinearSoftmaxModel {
    /// `[channels, side, side]` input cut into `patch`-sized squares.
    pub fn new(channels: usize, side: usize, patch: usize, layers: usize, heads: usize, classes: usize, seed: u64) -> Result<Self> {
        if patch == 0 || !side.is_multiple_of(patch) || classes == 0 || layers == 0 || heads == 0 || channels == 0 {
            return Err(Error::Config(format!("invalid synthetic model: side {side}, patch {patch}")));
        }
        let grid = side / patch;
        let dim = channels * side * side;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let weights = (0..classes * dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Ok(LinearSoftmaxModel {
            info: OracleInfo {
                model: format!("linear-softmax-{seed}"),
                class_count: classes,
                layers,
                heads,
                tokens: grid * grid + 1,
                input_shape: vec![channels, side, side],
                mean: vec![0.0; channels],
                std: vec![1.0; channels],
            },
            patch,
            weights,
            seed,
        })
    }

    fn logits(&self, image: &Image) -> Vec<f64> {
        let dim = image.data().len();
        self.weights
            .chunks_exact(dim)
            .map(|w| w.iter().zip(image.data()).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn token_features(&self, image: &Image) -> Vec<f64> {
        let side = image.width();
        let grid = side / self.patch;
        let mut f = vec![0.0; grid * grid + 1];
        for c in 0..image.channels() {
            let ch = image.channel(c);
            for y in 0..side {
                for x in 0..side {
                    f[1 + (y / self.patch) * grid + x / self.patch] += ch[y * side + x];
                }
            }
        }
        let per = (self.patch * self.patch * image.channels()) as f64;
        for v in &mut f[1..] {
            *v /= per;
        }
        f[0] = f[1..].iter().sum::<f64>() / (grid * grid) as f64;
        f
    }
}

impl OracleModel for LinearSoftmaxModel {
    fn info(&self) -> OracleInfo {
        self.info.clone()
    }

    fn probabilities(&mut self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        Ok(images
            .iter()
            .map(|img| {
                let z = self.logits(img);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                let sum: f64 = e.iter().sum();
                e.into_iter().map(|v| v / sum).collect()
            })
            .collect())
    }

    fn attentions(&mut self, image: &Image) -> Result<Vec<f32>> {
        let f = self.token_features(image);
        let t = f.len();
        let (layers, heads) = (self.info.layers, self.info.heads);
        let mut out = Vec::with_capacity(layers * heads * t * t);
        for l in 0..layers {
            for h in 0..heads {
                let beta = 1.0 + ((l * heads + h) % 3) as f64;
                for i in 0..t {
                    for (j, fj) in f.iter().enumerate() {
                        let diag = if i == j { 0.5 } else { 0.0 };
                        out.push((beta * fj * (1.0 + f[i]) + diag) as f32);
                    }
                }
            }
        }
        softmax_rows(&mut out, t);
        Ok(out)
    }

    fn gradients(&mut self, image: &Image, class: usize) -> Result<std::result::Result<Vec<f32>, ClassOutOfRange>> {
        if class >= self.info.class_count {
            return Ok(Err(ClassOutOfRange(class)));
        }
        let z = self.logits(image)[class];
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let t = self.info.tokens;
        let n = self.info.layers * self.info.heads * t * t;
        Ok(Ok((0..n)
            .map(|_| (rng.sample::<f64, _>(StandardNormal) * (1.0 + z.abs())) as f32)
            .collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> LinearSoftmaxModel {
        LinearSoftmaxModel::new(3, 8, 4, 2, 2, 5, 11).unwrap()
    }

    #[test]
    fn synthetic_model_outputs_are_valid() {
        let mut m = model();
        let img = Image::new(3, 8, 8, (0..192).map(|i| (i as f64 * 0.1).cos()).collect()).unwrap();
        let p = m.probabilities(std::slice::from_ref(&img)).unwrap();
        assert_eq!(p[0].len(), 5);
        assert!((p[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let a = m.attentions(&img).unwrap();
        assert_eq!(a.len(), 2 * 2 * 5 * 5);
        crate::tensor_io::check_attention_rows(&a, 5).unwrap();
        assert!(m.gradients(&img, 4).unwrap().is_ok());
        assert!(m.gradients(&img, 5).unwrap().is_err());
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(LinearSoftmaxModel::new(3, 10, 4, 1, 1, 2, 0).is_err());
    }

    #[test]
    fn wrong_hello_gets_error_frame() {
        let mut req = Vec::new();
        let mut bad = Hello::client();
        bad.magic = "NOPE".into();
        write_frame(&mut req, &Frame::new(Header::Hello(bad))).unwrap();
        let mut out = Vec::new();
        assert!(serve(req.as_slice(), &mut out, &mut model()).is_err());
        let reply = read_frame(&mut out.as_slice()).unwrap().unwrap();
        assert_eq!(reply.header.kind(), "error");
    }
}
