//! The command-line pipeline driven from code: prepare-data, train, adapt, evaluate and
//! report into a scratch directory, then print the summary table.
//!
//! cargo run --release --example pipeline [-- <out dir>]

use ltmx::metrics::{read_csv, SummaryRow};

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ltmx-pipeline"));
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/quickstart.toml");
    for cmd in ["prepare-data", "train", "adapt", "evaluate", "report"] {
        println!("== {cmd}");
        let code = ltmx::cli::main_from_args(["ltmx", "--config", config, "--out", out.to_str().unwrap(), cmd]);
        if code != 0 {
            std::process::exit(code);
        }
    }

    let rows: Vec<SummaryRow> = read_csv(&out.join("summary.csv")).expect("summary written by evaluate");
    println!(
        "\n{:<12} {:>5} {:<12} {:>8} {:>8}  weights",
        "variant", "IR", "test", "acc", "F1"
    );
    for r in rows {
        println!(
            "{:<12} {:>5} {:<12} {:>7.1}% {:>8.3}  ({:.2}, {:.2}, {:.2})",
            r.model_variant, r.train_ir, r.test_spec, r.accuracy_mean, r.macro_f1_mean, r.w1_mean, r.w2_mean, r.w3_mean
        );
    }
    println!("\nplots in {}", out.join("plots").display());
}
