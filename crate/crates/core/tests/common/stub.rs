//! Loopback HTTP stub with scripted replies, one script entry per request.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

#[derive(Clone, Debug)]
pub enum Reply {
    Json {
        delay: Duration,
        status: u16,
        headers: Vec<(String, String)>,
        body: String,
    },
    /// Holds the connection open without answering, then drops it.
    Hang(Duration),
}

impl Reply {
    pub fn text(text: &str) -> Self {
        Self::json(serde_json::json!({ "text": text }).to_string())
    }

    pub fn json(body: String) -> Self {
        Self::Json {
            delay: Duration::ZERO,
            status: 200,
            headers: Vec::new(),
            body,
        }
    }

    pub fn delayed(mut self, by: Duration) -> Self {
        if let Self::Json { delay, .. } = &mut self {
            *delay = by;
        }
        self
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        if let Self::Json { headers, .. } = &mut self {
            headers.push((name.into(), value.into()));
        }
        self
    }

    pub fn status(mut self, code: u16) -> Self {
        if let Self::Json { status, .. } = &mut self {
            *status = code;
        }
        self
    }
}

#[derive(Clone, Debug)]
pub struct Seen {
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

pub struct Stub {
    pub url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl Stub {
    /// Serves `script` in order; requests beyond it get the last entry.
    pub fn start(script: Vec<Reply>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        thread::spawn(move || {
            for (i, conn) in listener.incoming().enumerate() {
                let Ok(conn) = conn else { break };
                let reply = script[i.min(script.len() - 1)].clone();
                let log = Arc::clone(&log);
                thread::spawn(move || serve(conn, reply, &log));
            }
        });
        Self { url, seen }
    }

    pub fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

fn serve(conn: TcpStream, reply: Reply, log: &Mutex<Vec<Seen>>) {
    let mut reader = BufReader::new(conn.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).is_err() {
        return;
    }
    let path = line.split_whitespace().nth(1).unwrap_or("").to_owned();
    let mut headers = Vec::new();
    let mut length = 0usize;
    loop {
        line.clear();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.trim_end().split_once(':') {
            let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_owned());
            if k == "content-length" {
                length = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0u8; length];
    let _ = reader.read_exact(&mut body);
    log.lock().unwrap().push(Seen {
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    });

    let mut conn = conn;
    match reply {
        Reply::Hang(d) => thread::sleep(d),
        Reply::Json {
            delay,
            status,
            headers,
            body,
        } => {
            thread::sleep(delay);
            let mut out = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n",
                body.len()
            );
            for (k, v) in headers {
                out += &format!("{k}: {v}\r\n");
            }
            out += "\r\n";
            out += &body;
            let _ = conn.write_all(out.as_bytes());
        }
    }
}
