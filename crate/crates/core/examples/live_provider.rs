// Talks to an OpenAI-compatible endpoint. Without `CARAG_BASE_URL` set, a
// throwaway local server stands in so the example runs offline.
//
// Run: `CARAG_BASE_URL=https://api.openai.com/v1 OPENAI_API_KEY=... cargo run --example live_provider`

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;

use conflict_aware_rag::providers::http::{HttpChatProvider, HttpConfig, HttpEmbedder, Limiter};
use conflict_aware_rag::providers::{ChatProvider, ChatRequest, Embedder, Task};

/// Answers a fixed number of requests with canned chat/embedding bodies.
fn stub_server(requests: usize) -> anyhow::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let url = format!("http://{}", listener.local_addr()?);
    std::thread::spawn(move || {
        for stream in listener.incoming().take(requests).flatten() {
            let mut reader = BufReader::new(&stream);
            let (mut line, mut len, mut path) = (String::new(), 0usize, String::new());
            while reader.read_line(&mut line).is_ok_and(|n| n > 0) {
                if path.is_empty() {
                    path = line.split_whitespace().nth(1).unwrap_or_default().to_string();
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                if line == "\r\n" {
                    break;
                }
                line.clear();
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            let reply = if path.ends_with("/embeddings") {
                let v = vec![format!("{:.6}", 1.0 / 384f64.sqrt()); 384].join(",");
                format!(r#"{{"data":[{{"embedding":[{v}]}}]}}"#)
            } else {
                r#"{"choices":[{"message":{"role":"assistant","content":"ANSWER: 1929"}}]}"#.to_string()
            };
            let _ = write!(
                &stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    Ok(url)
}

pub fn run_example() -> anyhow::Result<()> {
    let (base_url, live) = match std::env::var("CARAG_BASE_URL") {
        Ok(url) => (url, true),
        Err(_) => (stub_server(2)?, false),
    };
    let limiter = Arc::new(Limiter::new(4, Some(60)));
    let mut chat_config = HttpConfig::new(&base_url, "gpt-4o-mini");
    if live {
        chat_config = chat_config.with_api_key_env("OPENAI_API_KEY")?;
    }
    let chat = HttpChatProvider::new(chat_config.clone(), limiter.clone())?;
    let reply = chat.chat(&ChatRequest::new(Task::GenerateStandard, "When was the Eastgate Bridge opened?", 0.3))?;
    println!("chat reply: {reply}");

    let embed_config = HttpConfig { model: "text-embedding-3-small".into(), ..chat_config };
    let embedder = HttpEmbedder::new(embed_config, limiter)?;
    let v = embedder.embed("Eastgate Bridge")?;
    println!("embedding with {} dimensions, norm {:.3}", v.as_slice().len(), v.norm());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
