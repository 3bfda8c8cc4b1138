#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfalgebra"))
        .args(args)
        .current_dir(dir)
        .env_remove("DFALGEBRA_SEED")
        .env_remove("DFALGEBRA_OUT")
        .output()
        .expect("spawn dfalgebra")
}

pub fn write_config(dir: &Path, name: &str, body: serde_json::Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

pub fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

pub fn tiny_train() -> serde_json::Value {
    serde_json::json!({"epochs": 3, "restarts": 2, "batch_size": 4})
}

/// `st(&[(1, 2)])` is the JSON form of `({1,2})`.
pub fn st(blocks: &[(usize, usize)]) -> serde_json::Value {
    serde_json::json!({"n0": 0, "blocks": blocks.iter().map(|&(d, m)| [d, m]).collect::<Vec<_>>()})
}

pub fn tiny_data(structure: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "source": "generate",
        "generator": {"kind": "structured", "structure": structure},
        "chains": 8,
        "steps": 5
    })
}
