//! A seeded synthetic model behind the oracle protocol, for demos and
//! end-to-end tests without a real network.

use std::io::Write;
use std::net::TcpListener;

use clap::Args;

use attnfilter_core::oracle::{serve, LinearSoftmaxModel};

use crate::{Failure, Outcome};

#[derive(Args, Debug)]
#[group(required = true, multiple = false, id = "transport")]
pub struct ServeArgs {
    /// Serve a single session on stdin/stdout
    #[arg(long, group = "transport")]
    pub stdio: bool,

    /// Listen on this address; every connection gets its own thread
    #[arg(long, group = "transport", value_name = "ADDR")]
    pub tcp: Option<String>,

    /// Exit after the first TCP session
    #[arg(long)]
    pub once: bool,

    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    #[arg(long, default_value_t = 8)]
    pub patch: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn build_model(args: &ServeArgs) -> Result<LinearSoftmaxModel, Failure> {
    LinearSoftmaxModel::new(
        args.channels,
        args.side,
        args.patch,
        args.layers,
        args.heads,
        args.classes,
        args.seed,
    )
    .map_err(|e| Failure::config(e.to_string()))
}

pub fn run(args: &ServeArgs) -> Outcome {
    let mut model = build_model(args)?;
    if args.stdio {
        serve(std::io::stdin().lock(), std::io::stdout().lock(), &mut model)?;
        return Ok(0);
    }
    let addr = args.tcp.as_deref().expect("clap requires a transport");
    let listener = TcpListener::bind(addr).map_err(|e| Failure::config(format!("bind {addr}: {e}")))?;
    let mut out = std::io::stdout();
    writeln!(out, "listening on {}", listener.local_addr()?)?;
    out.flush()?;
    if args.once {
        let (stream, _) = listener.accept()?;
        serve(stream.try_clone()?, stream, &mut model)?;
        return Ok(0);
    }
    for conn in listener.incoming() {
        let stream = conn?;
        let reader = stream.try_clone()?;
        let mut model = build_model(args)?;
        std::thread::spawn(move || {
            if let Err(e) = serve(reader, stream, &mut model) {
                log::warn!("session ended with an error: {e}");
            }
        });
    }
    Ok(0)
}
