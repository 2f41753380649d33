//! Minimal blocking HTTP/1.1 server for exercising the network clients in
//! tests without external services.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread::JoinHandle;

/// Serves canned `(status, body)` responses in order, then exits. Returns
/// the endpoint URL and a handle yielding the raw request bodies received.
pub fn spawn(responses: Vec<(u16, String)>) -> (String, JoinHandle<Vec<String>>) {
    let n = responses.len();
    let mut responses = responses.into_iter();
    spawn_fn(n, move |_| responses.next().expect("response available"))
}

/// Serves `n` requests, computing each response from the request body.
pub fn spawn_fn(
    n: usize,
    mut handler: impl FnMut(&str) -> (u16, String) + Send + 'static,
) -> (String, JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind test server");
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for _ in 0..n {
            let (mut stream, _) = listener.accept().expect("accept");
            let body = read_request_body(&mut stream);
            let (status, response_body) = handler(&body);
            let reason = if status < 400 { "OK" } else { "ERR" };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{response_body}",
                response_body.len()
            );
            stream
                .write_all(response.as_bytes())
                .expect("write response");
            bodies.push(body);
        }
        bodies
    });
    (format!("http://{addr}/v1"), handle)
}

fn read_request_body(stream: &mut std::net::TcpStream) -> String {
    let mut data = Vec::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = stream.read(&mut buf).expect("read request");
        data.extend_from_slice(&buf[..n]);
        if let Some(split) = data.windows(4).position(|w| w == b"\r\n\r\n") {
            let body_start = split + 4;
            let content_length = content_length(&data[..split]);
            while data.len() - body_start < content_length {
                let n = stream.read(&mut buf).expect("read body");
                data.extend_from_slice(&buf[..n]);
            }
            return String::from_utf8_lossy(&data[body_start..]).to_string();
        }
    }
}

fn content_length(head: &[u8]) -> usize {
    String::from_utf8_lossy(head)
        .lines()
        .find_map(|line| {
            let (name, value) = line.split_once(':')?;
            if name.eq_ignore_ascii_case("content-length") {
                value.trim().parse().ok()
            } else {
                None
            }
        })
        .unwrap_or(0)
}

/// Binds and immediately drops a listener, yielding a URL that refuses
/// connections.
pub fn dead_endpoint() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/v1")
}
