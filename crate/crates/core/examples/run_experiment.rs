//! Runs an experiment from a JSON configuration and writes the report,
//! the same way `voter report --config` does.
//!
//! cargo run --release --example run_experiment -- [config.json] [out_dir]

use voter_core::experiment::{exit_code, run_experiment, ExperimentConfig};

const DEFAULT_CONFIG: &str = r#"{
  "specs": [
    {"family": "moran", "n": 20},
    {"family": "moran", "n": 40},
    {"family": "torus_nn", "n": 4, "d": 2}
  ],
  "tests": ["identities", "cheeger", "decorrelation", "density_moment"],
  "replicas": 300,
  "master_seed": 2024
}"#;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let config = match args.first() {
        Some(path) => ExperimentConfig::load(path),
        None => ExperimentConfig::from_json(DEFAULT_CONFIG),
    };
    let result = config.and_then(|c| run_experiment(&c));
    match &result {
        Ok(report) => {
            for v in &report.verdicts {
                println!(
                    "{:<5} {:<34} {:<18} stat {:.3e} thr {:.3e}",
                    if v.pass { "PASS" } else { "FAIL" },
                    v.tag,
                    v.subject,
                    v.statistic,
                    v.threshold
                );
            }
            if let Some(dir) = args.get(1) {
                if let Err(e) = report.write(dir.as_ref()) {
                    eprintln!("error: {e}");
                    std::process::exit(2);
                }
                println!("wrote {dir}/report.json");
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    std::process::exit(exit_code(&result));
}
