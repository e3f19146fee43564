//! Serves any [`Backend`] over the line-delimited JSON protocol.
//!
//! Used to expose the synthetic backend on a socket, which lets the TCP client
//! and the conformance fixtures run without a real model.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;

use super::wire::{WireRequest, WireResponse};
use super::{Backend, GenerateRequest, ScoreRequest};
use crate::error::Error;

/// Answers a single request line.
pub fn handle_line(backend: &dyn Backend, line: &str) -> WireResponse {
    let req: WireRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_string))
                .unwrap_or_default();
            return WireResponse::error(&id, "bad_request", e.to_string());
        }
    };
    let id = req.id().to_string();
    let result = match req {
        WireRequest::Score {
            prompt,
            images,
            candidates,
            ..
        } => {
            if candidates.is_empty() {
                return WireResponse::error(&id, "bad_request", "no candidates");
            }
            backend
                .score(&ScoreRequest {
                    prompt,
                    images,
                    candidates,
                })
                .map(|r| WireResponse::scores(&id, r.results))
        }
        WireRequest::Generate {
            prompt,
            images,
            max_new_tokens,
            length_penalty,
            ..
        } => backend
            .generate(&GenerateRequest {
                prompt,
                images,
                max_new_tokens,
                length_penalty,
            })
            .map(|r| WireResponse::text(&id, r.text)),
        WireRequest::Embed { items, .. } => backend.embed(&items).map(|v| WireResponse::vectors(&id, v)),
    };
    result.unwrap_or_else(|e| match e {
        Error::InvalidArgument(m) => WireResponse::error(&id, "bad_request", m),
        other => WireResponse::error(&id, "model_error", other.to_string()),
    })
}

pub fn serve_connection(backend: &dyn Backend, stream: TcpStream) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = handle_line(backend, &line);
        let mut out = serde_json::to_string(&resp).expect("wire response serializes");
        out.push('\n');
        writer.write_all(out.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Accepts connections forever, one thread per connection.
pub fn serve(listener: TcpListener, backend: Arc<dyn Backend>) -> std::io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let backend = Arc::clone(&backend);
        std::thread::spawn(move || {
            let _ = serve_connection(backend.as_ref(), stream);
        });
    }
    Ok(())
}
