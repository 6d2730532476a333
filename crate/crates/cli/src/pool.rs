//! Oracle sessions shared by image-level workers. A session serves one
//! request at a time, so each worker checks one out for the duration of its
//! image and returns it afterwards.

use std::sync::Mutex;

use attnfilter_core::oracle::{OracleInfo, OracleSession, OracleSpec};
use attnfilter_core::{Error, Result};

pub struct SessionPool {
    spec: OracleSpec,
    idle: Mutex<Vec<OracleSession>>,
    info: OracleInfo,
}

impl SessionPool {
    /// Connects once up front so configuration problems surface before any
    /// work starts.
    pub fn connect(spec: OracleSpec) -> Result<Self> {
        let first = OracleSession::connect(&spec)?;
        let info = first.info().cloned().expect("connect performs the handshake");
        log::info!(
            "oracle {}: {} classes, input {:?}, {} layers x {} heads, {} tokens",
            info.model,
            info.class_count,
            info.input_shape,
            info.layers,
            info.heads,
            info.tokens
        );
        Ok(SessionPool {
            spec,
            idle: Mutex::new(vec![first]),
            info,
        })
    }

    pub fn info(&self) -> &OracleInfo {
        &self.info
    }

    /// Runs `f` with a session. Sessions that hit a transport or protocol
    /// error are discarded instead of being returned.
    pub fn with<R>(&self, f: impl FnOnce(&mut OracleSession) -> Result<R>) -> Result<R> {
        let idle = self.idle.lock().expect("pool lock").pop();
        let mut session = match idle {
            Some(s) => s,
            None => OracleSession::connect(&self.spec)?,
        };
        let out = f(&mut session);
        let broken = matches!(&out, Err(Error::Io(_) | Error::Protocol(_)));
        if !broken {
            self.idle.lock().expect("pool lock").push(session);
        }
        out
    }
}
