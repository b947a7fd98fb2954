//! A scripted local stand-in for a chat completions endpoint, used by tests
//! and by `misalign collect --mock`.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

use crate::error::{Error, Result};

/// One scripted reply: either chat content or an HTTP error status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockReply {
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default)]
    pub status: Option<u16>,
    /// Seconds, sent as `Retry-After` with error statuses.
    #[serde(default)]
    pub retry_after: Option<f64>,
}

impl MockReply {
    pub fn content(text: impl Into<String>) -> Self {
        Self {
            content: Some(text.into()),
            status: None,
            retry_after: None,
        }
    }

    pub fn status(status: u16, retry_after: Option<f64>) -> Self {
        Self {
            content: None,
            status: Some(status),
            retry_after,
        }
    }
}

/// Replies served in request order. After the list runs out the server
/// cycles through it again when `cycle` is set, else answers `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub replies: Vec<MockReply>,
    #[serde(default)]
    pub cycle: bool,
    #[serde(default = "default_reply")]
    pub default: MockReply,
}

fn default_reply() -> MockReply {
    MockReply::content("A")
}

impl MockScript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn reply(&self, index: usize) -> &MockReply {
        match self.replies.len() {
            0 => &self.default,
            n if index < n => &self.replies[index],
            n if self.cycle => &self.replies[index % n],
            _ => &self.default,
        }
    }
}

/// A running mock endpoint on `127.0.0.1`; stops when dropped.
pub struct MockServer {
    url: String,
    prompts: Arc<Mutex<Vec<String>>>,
    stop: Arc<AtomicBool>,
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(script: MockScript) -> Result<Self> {
        let server = Server::http("127.0.0.1:0")
            .map_err(|e| Error::Config(format!("cannot start mock endpoint: {e}")))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| Error::Config("mock endpoint has no IP address".into()))?;
        let server = Arc::new(server);
        let prompts = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let (server, prompts, stop) = (server.clone(), prompts.clone(), stop.clone());
            std::thread::spawn(move || serve(&server, &script, &prompts, &stop))
        };
        Ok(Self {
            url: format!("http://127.0.0.1:{port}/v1/chat/completions"),
            prompts,
            stop,
            server,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Prompts received so far, in arrival order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn request_count(&self) -> usize {
        self.prompts.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(server: &Server, script: &MockScript, prompts: &Mutex<Vec<String>>, stop: &AtomicBool) {
    while !stop.load(Ordering::SeqCst) {
        let mut request = match server.recv_timeout(Duration::from_millis(200)) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(_) => break,
        };
        let mut body = String::new();
        let _ = request.as_reader().read_to_string(&mut body);
        let prompt = serde_json::from_str::<Value>(&body)
            .ok()
            .and_then(|v| v["messages"].as_array()?.last()?["content"].as_str().map(str::to_string))
            .unwrap_or_default();
        let index = {
            let mut p = prompts.lock().unwrap_or_else(|e| e.into_inner());
            p.push(prompt);
            p.len() - 1
        };
        let reply = script.reply(index);
        let json_header = Header::from_bytes("Content-Type", "application/json").expect("static header");
        let response = match (reply.status, &reply.content) {
            (Some(status), _) if !(200..300).contains(&status) => {
                let mut r = Response::from_string(json!({"error": {"message": "scripted failure"}}).to_string())
                    .with_status_code(status)
                    .with_header(json_header);
                if let Some(s) = reply.retry_after {
                    r = r.with_header(Header::from_bytes("Retry-After", s.to_string()).expect("numeric header"));
                }
                r
            }
            (_, content) => Response::from_string(
                json!({
                    "object": "chat.completion",
                    "choices": [{
                        "index": 0,
                        "message": {"role": "assistant", "content": content.clone().unwrap_or_default()},
                        "finish_reason": "stop"
                    }]
                })
                .to_string(),
            )
            .with_header(json_header),
        };
        let _ = request.respond(response);
    }
}
