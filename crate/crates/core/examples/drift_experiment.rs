//! Runs every training mode over synthetic drifting streams and prints the
//! comparison table averaged over seeds.
//!
//! `cargo run --release --example drift_experiment -- [seeds] [epochs] [lr]`

use std::time::Instant;

use streamprompt::data::{segment_stream, synth_stream, Interactions, SynthConfig};
use streamprompt::train::{run_segments, RunOptions, TrainConfig, TrainMode};

fn main() -> Result<(), streamprompt::Error> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(5);
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-2);
    let started = Instant::now();
    for mode in TrainMode::ALL {
        let (mut cur, mut bwt, mut params, mut ms) = (0.0, 0.0, 0.0, 0.0);
        for seed in 0..seeds {
            let records = synth_stream(&SynthConfig {
                seed,
                ..SynthConfig::default()
            })?;
            let data = Interactions::from_records(records);
            let segments = segment_stream(&data.events(), 5)?;
            let config = TrainConfig {
                mode,
                epochs,
                lr,
                seed,
                ..TrainConfig::default()
            };
            let run = run_segments(&segments, &config, &RunOptions::default())?;
            let r = &run.report;
            cur += r.adapted_recall.unwrap_or(0.0);
            bwt += r.backward_transfer.unwrap_or(0.0);
            params += r.adapted_parameters.unwrap_or(0.0);
            ms += r.adapted_epoch_ms().unwrap_or(0.0);
        }
        let n = seeds as f64;
        println!(
            "{mode:>15}  recall(t>=1) {:.4}  bwt {:+.4}  params {:.0}  ms/epoch {:.2}",
            cur / n,
            bwt / n,
            params / n,
            ms / n
        );
    }
    println!("total {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
