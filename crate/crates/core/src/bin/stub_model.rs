//! Test double for the external model protocol.
//!
//! Usage: `tempex-stub-model <mode>` where mode is one of
//! `zero`, `length`, `sentiment`, `anomaly`, `shuffle`, `garbage`, `wrong-id`,
//! `exit`, `sleep`.

use std::io::{self, BufRead, Write};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use tempex::models::{Request, Response, ToyAnomalyModel, ToySentimentModel};
use tempex::Model;

fn answer(mode: &str, req: &Request) -> f64 {
    match mode {
        "zero" => 0.0,
        "length" | "shuffle" => req.input.len() as f64,
        "anomaly" => ToyAnomalyModel::default().predict(&req.input).unwrap_or(0.0),
        _ => ToySentimentModel::default().predict(&req.input).unwrap_or(0.0),
    }
}

fn emit(out: &mut impl Write, id: u64, output: f64) -> io::Result<()> {
    writeln!(out, "{}", serde_json::to_string(&Response { id, output }).expect("serializable"))?;
    out.flush()
}

fn main() -> io::Result<()> {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "sentiment".into());
    let (tx, rx) = mpsc::channel::<String>();
    thread::spawn(move || {
        for line in io::stdin().lock().lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    let mut out = io::stdout().lock();
    let mut held: Vec<Request> = Vec::new();
    loop {
        // Out-of-order mode answers a burst of requests in reverse once input pauses.
        let line = if mode == "shuffle" {
            match rx.recv_timeout(Duration::from_millis(20)) {
                Ok(line) => Some(line),
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    for req in held.drain(..).rev() {
                        emit(&mut out, req.id, answer(&mode, &req))?;
                    }
                    continue;
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => None,
            }
        } else {
            rx.recv().ok()
        };
        let Some(line) = line else { break };
        let Ok(req) = serde_json::from_str::<Request>(&line) else {
            eprintln!("stub model: unparseable request");
            std::process::exit(2);
        };
        match mode.as_str() {
            "garbage" => {
                writeln!(out, "this is not json")?;
                out.flush()?;
            }
            "wrong-id" => emit(&mut out, req.id + 1_000_000, 0.0)?,
            "exit" => std::process::exit(1),
            "sleep" => thread::sleep(Duration::from_secs(3600)),
            "shuffle" => held.push(req),
            _ => emit(&mut out, req.id, answer(&mode, &req))?,
        }
    }
    for req in held.drain(..).rev() {
        emit(&mut out, req.id, answer(&mode, &req))?;
    }
    Ok(())
}
