//! Sweeps the planted-alpha power ratio and reports median held-out
//! accuracy per model and window over seeds.
//!
//! cargo run --release -p fbcsp-core --example calibrate -- 4.0 2.0 0,2 2,4,6

use fbcsp_core::pipeline::{run_experiment, ExperimentConfig, ModelKind, PipelineConfig, SessionSplit};
use fbcsp_core::synth::{generate, SynthConfig, DEFAULT_ALPHA_POWER};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ratio: f64 = args.first().map_or(4.0, |s| s.parse().unwrap());
    let noise: f64 = args.get(1).map_or(2.0, |s| s.parse().unwrap());
    let pair: Vec<u32> = args
        .get(2)
        .map_or("0,2".into(), |s| s.clone())
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();
    let windows: Vec<f64> = args
        .get(3)
        .map_or("2".into(), |s| s.clone())
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();
    let seeds: u64 = args.get(4).map_or(10, |s| s.parse().unwrap());

    let experiment = ExperimentConfig {
        models: ModelKind::ALL.to_vec(),
        pairs: vec![[pair[0], pair[1]]],
        windows: windows.clone(),
        sessions: SessionSplit::default(),
    };
    let mut acc: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); 4]; windows.len()];
    for seed in 0..seeds {
        let start = std::time::Instant::now();
        let rec = generate(&SynthConfig::planted_alpha(seed, ratio, DEFAULT_ALPHA_POWER, noise)).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.selection.seed = seed;
        let results = run_experiment(&rec, &cfg, &experiment).unwrap();
        for r in &results {
            let w = windows.iter().position(|&w| w == r.cell.window_seconds).unwrap();
            let k = ModelKind::ALL.iter().position(|&k| k == r.cell.kind).unwrap();
            let a = r.report().map_or(f64::NAN, |rep| rep.accuracy);
            acc[w][k].push(a);
        }
        eprintln!("seed {seed} done in {:.2?}", start.elapsed());
    }
    for (w, window) in windows.iter().enumerate() {
        for (k, kind) in ModelKind::ALL.iter().enumerate() {
            println!(
                "ratio {ratio} noise {noise} window {window} {kind:>10}: median {:.3}  all {:?}",
                median(acc[w][k].clone()),
                acc[w][k].iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>()
            );
        }
    }
}
