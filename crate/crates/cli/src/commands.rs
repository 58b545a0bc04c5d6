use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use fbcsp_core::config::{ConfigError, RunConfig};
use fbcsp_core::csp::selected_rows;
use fbcsp_core::pipeline::{
    evaluate_recording, prepare_window, run_experiment, summary_csv, train_filtered, CellId, CellOutcome,
    CellResult, PipelineError, TrainedModel,
};
use fbcsp_core::recording::{load_recording, write_markers_csv, write_signal_csv, DataError, Recording};
use fbcsp_core::selection::cv_curve_csv;
use fbcsp_core::synth::{generate, ground_truth, InformativeSource, SynthError};
use serde::Serialize;
use thiserror::Error;

use crate::output::{
    console_table, cv_path, model_path, report_path, summary_path, write_atomic,
};
use crate::Common;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} cell(s) failed", .0.len())]
    CellsFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Validation(_) | Self::Synth(_) => 1,
            Self::Pipeline(PipelineError::Config(_) | PipelineError::Mismatch(_)) => 1,
            _ => 2,
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    write_atomic(path, contents.as_ref()).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads the config and applies flag overrides. Seeds go to the synth
/// section when `synth_seed` is set, to the cross-validation otherwise.
fn load_config(common: &Common, synth_seed: bool) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(p) = &common.signal {
        config.data.signal = p.clone();
    }
    if let Some(p) = &common.markers {
        config.data.markers = p.clone();
    }
    if let Some(p) = &common.out_dir {
        config.output.dir = p.clone();
    }
    if let Some(seed) = common.seed {
        if synth_seed {
            if let Some(synth) = config.synth.as_mut() {
                synth.seed = seed;
            }
        } else {
            config.pipeline.selection.seed = seed;
        }
    }
    Ok(config)
}

fn load_data(config: &RunConfig) -> Result<Recording, CliError> {
    Ok(load_recording(
        &config.data.signal,
        &config.data.markers,
        &config.data.ingest(),
    )?)
}

#[derive(Serialize)]
struct GroundTruth<'a> {
    channels: Vec<String>,
    rate_hz: f64,
    informative_sources: &'a [InformativeSource],
}

pub fn simulate(common: &Common) -> Result<(), CliError> {
    let config = load_config(common, true)?;
    let synth = config.synth.as_ref().ok_or_else(|| {
        CliError::Validation(format!(
            "{}: simulate needs a [synth] section",
            common.config.display()
        ))
    })?;
    let rec = generate(synth)?;

    let mut signal = Vec::new();
    write_signal_csv(&rec, &mut signal).expect("writing to memory");
    let mut markers = Vec::new();
    write_markers_csv(&rec, &mut markers).expect("writing to memory");
    write(&config.data.signal, signal)?;
    write(&config.data.markers, markers)?;

    let truth = ground_truth(synth);
    let doc = GroundTruth {
        channels: rec.channel_names().to_vec(),
        rate_hz: rec.rate_hz(),
        informative_sources: &truth,
    };
    let truth_path = config.output.dir.join("ground_truth.json");
    write(&truth_path, serde_json::to_string_pretty(&doc).expect("serializable") + "\n")?;
    println!(
        "simulated {} channels x {} samples at {} Hz, {} markers",
        rec.num_channels(),
        rec.num_samples(),
        rec.rate_hz(),
        rec.markers().len()
    );
    Ok(())
}

fn write_model(out: &Path, cell: &CellId, model: &TrainedModel) -> Result<(), CliError> {
    write(&model_path(out, cell), model.to_json() + "\n")?;
    if let Some(curve) = &model.cv_curve {
        write(&cv_path(out, cell), cv_curve_csv(curve))?;
    }
    Ok(())
}

fn cv_summary(cell: &CellId, model: &TrainedModel) -> Option<String> {
    let curve = model.cv_curve.as_ref()?;
    let n = model.selected.len();
    let best = curve.iter().find(|p| p.n == n)?;
    Some(format!(
        "{cell}: top {n} of {} features, cv accuracy {:.3} +/- {:.3}",
        model.num_features(),
        best.mean_accuracy,
        best.std_accuracy
    ))
}

pub fn train(common: &Common) -> Result<(), CliError> {
    let config = load_config(common, false)?;
    let rec = load_data(&config)?;
    let out = &config.output.dir;
    let experiment = &config.experiment;
    let mut failed = Vec::new();
    for &window in &experiment.windows {
        let prepared = prepare_window(&rec, window, &config.pipeline, &experiment.sessions)?;
        for &pair in &experiment.pairs {
            for &kind in &experiment.models {
                let cell = CellId {
                    kind,
                    pair,
                    window_seconds: window,
                };
                match train_filtered(
                    &prepared.train,
                    kind,
                    pair,
                    &config.pipeline,
                    rec.channel_names(),
                    prepared.train_rejected,
                ) {
                    Ok(model) => {
                        write_model(out, &cell, &model)?;
                        if let Some(line) = cv_summary(&cell, &model) {
                            println!("{line}");
                        }
                    }
                    Err(e) => failed.push(format!("{cell}: {e}")),
                }
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CellsFailed(failed))
    }
}

#[derive(Serialize)]
struct CellRecord<'a> {
    cell: &'a CellId,
    n_train_rejected: usize,
    #[serde(flatten)]
    outcome: &'a CellOutcome,
}

/// Writes per-cell reports, the summary CSV and the console table.
fn report(out: &Path, results: &[CellResult]) -> Result<(), CliError> {
    for r in results {
        let record = CellRecord {
            cell: &r.cell,
            n_train_rejected: r.n_train_rejected,
            outcome: &r.outcome,
        };
        write(
            &report_path(out, &r.cell),
            serde_json::to_string_pretty(&record).expect("serializable") + "\n",
        )?;
    }
    write(&summary_path(out), summary_csv(results))?;
    print!("{}", console_table(results));
    let failed: Vec<String> = results
        .iter()
        .filter_map(|r| match &r.outcome {
            CellOutcome::Failed { error } => Some(format!("{}: {error}", r.cell)),
            CellOutcome::Ok { .. } => None,
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CellsFailed(failed))
    }
}

pub fn evaluate(common: &Common, models: &[PathBuf]) -> Result<(), CliError> {
    let config = load_config(common, false)?;
    let experiment = &config.experiment;
    let out = &config.output.dir;
    let paths: Vec<PathBuf> = if models.is_empty() {
        experiment
            .windows
            .iter()
            .flat_map(|&window_seconds| {
                experiment.pairs.iter().flat_map(move |&pair| {
                    experiment.models.iter().map(move |&kind| CellId {
                        kind,
                        pair,
                        window_seconds,
                    })
                })
            })
            .map(|cell| model_path(out, &cell))
            .collect()
    } else {
        models.to_vec()
    };

    let mut loaded = Vec::with_capacity(paths.len());
    for path in &paths {
        let model = TrainedModel::from_json(&read(path)?).map_err(|e| {
            CliError::Validation(format!("{}: {e}", path.display()))
        })?;
        let cell = CellId {
            kind: model.kind,
            pair: model.class_pair,
            window_seconds: model.window_seconds,
        };
        if !experiment.windows.contains(&model.window_seconds) {
            return Err(CliError::Validation(format!(
                "{}: model window {} s is not in the configured windows {:?}",
                path.display(),
                model.window_seconds,
                experiment.windows
            )));
        }
        if !experiment.models.contains(&model.kind) || !experiment.pairs.contains(&model.class_pair) {
            return Err(CliError::Validation(format!(
                "{}: cell {cell} is not part of the configured grid",
                path.display()
            )));
        }
        loaded.push((cell, model));
    }

    let rec = load_data(&config)?;
    let test: BTreeSet<_> = experiment.sessions.test.clone();
    let mut results = Vec::with_capacity(loaded.len());
    for (cell, model) in loaded {
        let outcome = match evaluate_recording(&model, &rec, &test) {
            Ok(report) => CellOutcome::Ok { report },
            Err(e @ PipelineError::Mismatch(_)) => return Err(e.into()),
            Err(e) => CellOutcome::Failed { error: e.to_string() },
        };
        results.push(CellResult {
            cell,
            n_train_rejected: model.training.n_rejected,
            model: None,
            outcome,
        });
    }
    report(out, &results)
}

pub fn sweep(common: &Common) -> Result<(), CliError> {
    let config = load_config(common, false)?;
    let rec = load_data(&config)?;
    let out = &config.output.dir;
    let results = run_experiment(&rec, &config.pipeline, &config.experiment)?;
    for r in &results {
        if let Some(model) = &r.model {
            write_model(out, &r.cell, model)?;
        }
    }
    report(out, &results)
}

pub fn filter_csv(model: &TrainedModel) -> Result<String, CliError> {
    if !model.kind.uses_csp() {
        return Err(CliError::Validation(format!(
            "unsupported model kind {}: spatial filters exist only for FBCSP models",
            model.kind
        )));
    }
    let mut out = String::from("band_low,band_high,filter_rank,channel_name,weight\n");
    for band in &model.csp {
        for row in selected_rows(&band.transform) {
            for (name, weight) in model.channel_names.iter().zip(&band.transform.filters[row]) {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    band.band.low_hz,
                    band.band.high_hz,
                    row + 1,
                    name,
                    weight
                ));
            }
        }
    }
    Ok(out)
}

pub fn inspect_filters(model_file: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let model = TrainedModel::from_json(&read(model_file)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", model_file.display())))?;
    let csv = filter_csv(&model)?;
    match out {
        Some(path) => write(path, csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
