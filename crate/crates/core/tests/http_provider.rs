use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use llmar::llm::{CompletionProvider, DecodingParams, HttpProvider, LlmError, Prompt, PromptContext, PromptKind};

/// Serves one canned HTTP response per entry, in order, and returns the request bodies.
fn serve(responses: Vec<(u16, &'static str)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            bodies.push(String::from_utf8(buf).unwrap());
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        bodies
    });
    (url, handle)
}

fn provider(url: String) -> HttpProvider {
    HttpProvider {
        base_url: url,
        api_key: Some("test-key".into()),
        model: "m".into(),
        timeout: Duration::from_secs(5),
        max_retries: 2,
        initial_backoff: Duration::from_millis(10),
    }
}

fn prompt() -> Prompt {
    Prompt {
        kind: PromptKind::Insight,
        text: "hello".into(),
        batch_id: None,
        iteration: 1,
        context: PromptContext::default(),
    }
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Success rules:\na,0.5\n"}}]}"#;

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, handle) = serve(vec![(503, "{}"), (200, OK)]);
    let text = provider(url).complete(&prompt(), &DecodingParams::default()).unwrap();
    assert_eq!(text, "Success rules:\na,0.5\n");
    let bodies = handle.join().unwrap();
    assert_eq!(bodies.len(), 2);
    let req: serde_json::Value = serde_json::from_str(&bodies[1]).unwrap();
    assert_eq!(req["messages"][0]["content"], "hello");
    assert_eq!(req["model"], "m");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, handle) = serve(vec![(400, "{}")]);
    let err = provider(url).complete(&prompt(), &DecodingParams::default()).unwrap_err();
    assert!(matches!(err, LlmError::Provider { attempts: 1, .. }), "{err}");
    handle.join().unwrap();
}

#[test]
fn gives_up_after_bounded_retries() {
    let (url, handle) = serve(vec![(500, "{}"), (500, "{}"), (500, "{}")]);
    let err = provider(url).complete(&prompt(), &DecodingParams::default()).unwrap_err();
    assert!(matches!(err, LlmError::Provider { attempts: 3, .. }), "{err}");
    handle.join().unwrap();
}
