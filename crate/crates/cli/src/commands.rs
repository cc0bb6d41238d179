use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use msi_core::data::{generate_synthetic, read_dataset, write_dataset, Dataset};
use msi_core::pipeline::{
    cross_validate, evaluate, load_checkpoint, prepare_samples, run_audits, save_checkpoint, Fault, ModelState,
};
use msi_core::vsc::{self, VscConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::run_config::RunConfig;
use crate::{Cli, CliError, Command};

fn emit(value: &Value) {
    println!("{value}");
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn require_out<'a>(out: &'a Option<PathBuf>, command: &str) -> Result<&'a Path, CliError> {
    out.as_deref()
        .ok_or_else(|| CliError::config(format!("--out is required for {command}")))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    read_dataset(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let common = cli.common;
    let mut config = RunConfig::load(common.config.as_deref())?.with_seed(common.seed);
    if let Command::Train { epochs: Some(e), .. } = &cli.command {
        config.model.epochs = *e;
    }
    if let Command::Crossval { folds: Some(k), .. } = &cli.command {
        config.crossval.folds = *k;
    }
    let resolved = to_value(&config);
    emit(&json!({ "event": "config", "config": resolved }));
    if let Some(out) = &common.out {
        write_json(&sidecar(out), &resolved)?;
    }
    let out = &common.out;
    match cli.command {
        Command::GenData => gen_data(&config, require_out(out, "gen-data")?),
        Command::Train { data, resume, .. } => train(&config, &data, resume.as_deref(), require_out(out, "train")?),
        Command::Eval { checkpoint, data } => eval(&checkpoint, &data, out.as_deref()),
        Command::Crossval { data, .. } => crossval(&config, &data, out.as_deref()),
        Command::Compress {
            data,
            id,
            checkpoint,
            gamma,
            tau,
            alpha,
            raw_dot,
        } => {
            let mut vsc = config.model.vsc;
            let state = match &checkpoint {
                Some(p) => {
                    let s = load_checkpoint(p)?;
                    vsc = s.config().vsc;
                    Some(s)
                }
                None => None,
            };
            vsc.gamma = gamma.unwrap_or(vsc.gamma);
            vsc.tau = tau.unwrap_or(vsc.tau);
            vsc.alpha = alpha.unwrap_or(vsc.alpha);
            if raw_dot {
                vsc.normalize = false;
            }
            compress(&data, &id, state.as_ref(), &vsc, out.as_deref())
        }
        Command::Gradcheck { inject_fault } => gradcheck(&config, inject_fault, out.as_deref()),
    }
}

fn gen_data(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let spec = &config.data;
    let syn = generate_synthetic(spec)?;
    write_dataset(&syn.dataset, out).map_err(|e| CliError::data(format!("{}: {e}", out.display())))?;
    info!("wrote {} records to {}", syn.dataset.len(), out.display());
    emit(&json!({
        "event": "gen_data",
        "path": out,
        "records": syn.dataset.len(),
        "classes": spec.classes,
        "text_dim": spec.text_dim,
        "audio_dim": spec.audio_dim,
        "frame_dim": spec.frame_dim,
        "frames": spec.frames,
        "seed": spec.seed,
        "separation": spec.separation,
        "noise": spec.noise,
        "separation_noise_ratio": spec.separation_noise_ratio(),
        "background_per_record": spec.background_count(),
    }));
    Ok(())
}

fn train(config: &RunConfig, data: &Path, resume: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let mut state = match resume {
        Some(p) => {
            let mut s = load_checkpoint(p)?;
            s.model.config.epochs = config.model.epochs;
            info!("resuming from {} at step {}, epoch {}", p.display(), s.step, s.epoch);
            emit(&json!({ "event": "checkpoint_config", "config": s.config() }));
            s
        }
        None => ModelState::new(&config.model)?,
    };
    let dataset = load_data(data)?;
    let samples = prepare_samples(&dataset, state.config())?;
    if samples.is_empty() {
        return Err(CliError::data(format!("{}: no samples to train on", data.display())));
    }
    let epochs = state.config().epochs;
    info!("training {} samples for {epochs} epochs", samples.len());
    state.train(&samples, epochs, |r| {
        debug!("epoch {} total {:.6}", r.epoch, r.loss.total);
        let mut v = to_value(r);
        v["event"] = json!("epoch");
        emit(&v);
    })?;
    save_checkpoint(&state, out).map_err(|e| CliError::data(format!("{}: {e}", out.display())))?;
    emit(&json!({
        "event": "checkpoint",
        "path": out,
        "step": state.step,
        "epoch": state.epoch,
        "parameters": state.model.parameter_count(),
        "elapsed_ms": started.elapsed().as_millis() as u64,
    }));
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let state = load_checkpoint(checkpoint)?;
    emit(&json!({ "event": "checkpoint_config", "config": state.config() }));
    let dataset = load_data(data)?;
    if dataset.is_empty() {
        return Err(CliError::data(format!("{}: no samples to evaluate", data.display())));
    }
    let samples = prepare_samples(&dataset, state.config())?;
    let report = evaluate(&state.model, &samples)?;
    let table = report.confusion_table();
    info!("confusion (rows true, columns predicted):\n{table}");
    let mut v = to_value(&report);
    v["event"] = json!("eval");
    v["confusion_table"] = json!(table);
    v["alpha_ce"] = json!(state.config().alpha_ce);
    v["beta_cl"] = json!(state.config().beta_cl);
    emit(&v);
    if let Some(p) = out {
        write_json(p, &v)?;
    }
    Ok(())
}

fn crossval(config: &RunConfig, data: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let started = Instant::now();
    let dataset = load_data(data)?;
    let samples = prepare_samples(&dataset, &config.model)?;
    let k = config.crossval.folds;
    info!("{k}-fold cross-validation over {} samples", samples.len());
    let report = cross_validate(&samples, &config.model, k)?;
    for f in &report.folds {
        let mut v = to_value(f);
        v["event"] = json!("fold");
        emit(&v);
    }
    info!("mean confusion:\n{}", report.mean.confusion_table());
    emit(&json!({
        "event": "crossval",
        "k": report.k,
        "seed": report.seed,
        "assignment": report.assignment,
        "mean": report.mean,
        "alpha_ce": config.model.alpha_ce,
        "beta_cl": config.model.beta_cl,
        "elapsed_ms": started.elapsed().as_millis() as u64,
    }));
    if let Some(p) = out {
        write_json(p, &to_value(&report))?;
    }
    Ok(())
}

fn compress(
    data: &Path,
    id: &str,
    state: Option<&ModelState>,
    cfg: &VscConfig,
    out: Option<&Path>,
) -> Result<(), CliError> {
    cfg.validate()?;
    let dataset = load_data(data)?;
    let record = dataset
        .find(id)
        .ok_or_else(|| CliError::data(format!("no record with id `{id}` in {}", data.display())))?;
    let guidance = match state {
        Some(s) => s.model.early_fuse(&record.text, &record.audio)?,
        None => vec![0.0; record.frames.cols()],
    };
    let result = vsc::compress(&record.frames, &guidance, cfg)?;
    let merged: Vec<&[f64]> = result.merged.row_iter().collect();
    let v = json!({
        "event": "compress",
        "id": id,
        "n": record.frames.rows(),
        "l": result.merged.rows(),
        "ratio": result.compression_ratio(),
        "vsc": cfg,
        "guided": state.is_some(),
        "relevant_indices": result.relevant_indices,
        "irrelevant_indices": result.irrelevant_indices,
        "merge_map": result.merge_map,
        "similarities": result.similarities,
        "merged": merged,
    });
    emit(&v);
    if let Some(p) = out {
        write_json(p, &v)?;
    }
    Ok(())
}

fn gradcheck(config: &RunConfig, fault: Option<String>, out: Option<&Path>) -> Result<(), CliError> {
    let started = Instant::now();
    let seed = config.model.seed;
    let report = run_audits(&config.gradcheck, seed, Fault(fault))?;
    for c in &report.checks {
        let mut v = to_value(c);
        v["event"] = json!("gradcheck_block");
        emit(&v);
    }
    emit(&json!({
        "event": "gradcheck",
        "seed": seed,
        "tolerance": report.tolerance,
        "blocks": report.checks.len(),
        "pass": report.pass,
        "elapsed_ms": started.elapsed().as_millis() as u64,
    }));
    if let Some(p) = out {
        write_json(p, &to_value(&report))?;
    }
    if report.pass {
        Ok(())
    } else {
        let names: Vec<String> = report
            .failing()
            .iter()
            .map(|c| format!("{}/{} (rel {:.3e})", c.suite, c.block, c.max_rel_error))
            .collect();
        Err(CliError::check(format!("gradient check failed: {}", names.join(", "))))
    }
}
