//! Writes a seeded random GPT-2 small checkpoint:
//! `random_checkpoint <out-dir> <seed> <scale>`.

use std::path::PathBuf;

use gptd::engine::synthetic::random_archive;
use gptd::engine::ModelConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() != 4 {
        eprintln!("usage: random_checkpoint <out-dir> <seed> <scale>");
        std::process::exit(2);
    }
    let dir = PathBuf::from(&args[1]);
    let seed: u64 = args[2].parse().expect("seed");
    let scale: f32 = args[3].parse().expect("scale");
    let cfg = ModelConfig::gpt2_small();
    std::fs::create_dir_all(&dir).expect("create output directory");
    random_archive(cfg, seed, scale)
        .save(&dir.join("model.safetensors"))
        .expect("write checkpoint");
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg).unwrap()).expect("write config");
}
