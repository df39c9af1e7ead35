//! Prints a preset as the JSON accepted by `--config`. Any field left out of
//! a config file takes the value shown here.
//!
//! cargo run --example config -- [reference|small]

use sdvpt::config::ExperimentConfig;

fn main() {
    let cfg = match std::env::args().nth(1).as_deref() {
        Some("small") => ExperimentConfig::small(),
        _ => ExperimentConfig::default(),
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&cfg).expect("config serializes")
    );
}
