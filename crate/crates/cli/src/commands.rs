//! The four subcommands.
//!
//! * `run`: one [`SimConfig`](scm_core::harness::SimConfig).
//! * `compare`: `{"base": {...}, "variant": {...}, "seeds": [...]}`. The
//!   variant object is merged over the base, so usually only `rule` is given.
//! * `verify`: `{"trials", "max_M", "max_K", "samples", "seed", "state"}`,
//!   all optional; `state` is `"random"` or `"perfect"`.
//! * `sweep`: `{"base": {...}, "param": "rule.dropout.p" | "eta", "values": [...]}`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{Map, Value};

use scm_core::harness::{compare, perfect_state, run, verify_generalization_error, verify_states, RunOutput};

use crate::config::{apply_override, check_keys, deserialize_at, parse_json, set_path, sim_config_from_value};
use crate::output::{comparison_csv, create_dir, num, verification_csv, write_atomic, write_json, write_run};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Run,
    Compare,
    Verify,
    Sweep,
}

#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub out: PathBuf,
    pub overrides: Vec<String>,
}

/// Parallelism cap from `SIM_THREADS`; absent means serial.
pub fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var("SIM_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Config(format!("SIM_THREADS must be a positive integer, got `{s}`"))),
    }
}

pub fn execute(inv: &Invocation) -> Result<(), CliError> {
    let text = fs::read_to_string(&inv.config)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", inv.config.display())))?;
    let mut value = parse_json(&text)?;
    for o in &inv.overrides {
        apply_override(&mut value, o)?;
    }
    match inv.command {
        Command::Run => run_command(value, &inv.out),
        Command::Compare => compare_command(value, &inv.out, threads_from_env()?),
        Command::Verify => verify_command(value, &inv.out, threads_from_env()?),
        Command::Sweep => sweep_command(value, &inv.out, threads_from_env()?),
    }
}

fn diverged(out: &RunOutput) -> Option<String> {
    out.summary
        .diverged_at
        .map(|step| format!("non-finite or corrupt state at step {step}"))
}

pub fn run_command(value: Value, out: &Path) -> Result<(), CliError> {
    let cfg = sim_config_from_value(value)?;
    let result = run(&cfg)?;
    write_run(out, &result, cfg.k, cfg.m)?;
    match diverged(&result) {
        Some(msg) => Err(CliError::Diverged(msg)),
        None => Ok(()),
    }
}

fn into_object(value: Value, context: &str) -> Result<Map<String, Value>, CliError> {
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::Config(format!("{context} config must be a JSON object"))),
    }
}

fn take(obj: &mut Map<String, Value>, key: &str, context: &str) -> Result<Value, CliError> {
    obj.remove(key)
        .ok_or_else(|| CliError::Config(format!("missing required key `{key}` in {context} config")))
}

pub fn compare_command(value: Value, out: &Path, threads: usize) -> Result<(), CliError> {
    let mut obj = into_object(value, "compare")?;
    check_keys(&obj, &["base", "variant", "seeds"], "compare")?;
    let base_v = into_object(take(&mut obj, "base", "compare")?, "base")?;
    let variant_patch = into_object(take(&mut obj, "variant", "compare")?, "variant")?;
    let seeds: Vec<u64> = deserialize_at(take(&mut obj, "seeds", "compare")?, "seeds")?;

    let mut variant_v = base_v.clone();
    variant_v.extend(variant_patch);
    let base = sim_config_from_value(Value::Object(base_v))?;
    let variant = sim_config_from_value(Value::Object(variant_v))?;
    if base.rule == variant.rule {
        return Err(CliError::Config("compare needs different rules for base and variant".into()));
    }
    let report = compare(&base, &variant, &seeds, threads)?;
    create_dir(out)?;
    write_atomic(&out.join("compare.csv"), comparison_csv(&report).as_bytes())?;
    write_json(&out.join("compare.json"), &report)?;
    let bad: Vec<u64> = report
        .rows
        .iter()
        .filter(|r| r.base.diverged || r.variant.diverged)
        .map(|r| r.seed)
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Diverged(format!("runs diverged for seeds {bad:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum VerifyState {
    #[default]
    Random,
    Perfect,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct VerifyConfig {
    trials: usize,
    #[serde(rename = "max_M")]
    max_m: usize,
    #[serde(rename = "max_K")]
    max_k: usize,
    samples: usize,
    seed: u64,
    state: VerifyState,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            max_m: 4,
            max_k: 4,
            samples: 200_000,
            seed: 0,
            state: VerifyState::Random,
        }
    }
}

/// Input dimension of the states built by `verify`.
const VERIFY_N: usize = 400;

pub fn verify_command(value: Value, out: &Path, threads: usize) -> Result<(), CliError> {
    let cfg: VerifyConfig = deserialize_at(value, "verify")?;
    if cfg.trials == 0 {
        return Err(CliError::Config("trials: must be at least 1".into()));
    }
    let report = match cfg.state {
        VerifyState::Random => {
            verify_generalization_error(cfg.trials, cfg.max_m, cfg.max_k, cfg.samples, cfg.seed, threads)?
        }
        VerifyState::Perfect => {
            let states = (0..cfg.trials)
                .map(|i| perfect_state(cfg.max_m, VERIFY_N, cfg.seed.wrapping_add(i as u64)))
                .collect::<Result<Vec<_>, _>>()?;
            verify_states(&states, cfg.samples, cfg.seed)?
        }
    };
    create_dir(out)?;
    write_atomic(&out.join("verify.csv"), verification_csv(&report).as_bytes())?;
    write_json(&out.join("verify.json"), &report)
}

const SWEEP_PARAMS: [&str; 2] = ["rule.dropout.p", "eta"];

pub fn sweep_command(value: Value, out: &Path, threads: usize) -> Result<(), CliError> {
    let mut obj = into_object(value, "sweep")?;
    check_keys(&obj, &["base", "param", "values"], "sweep")?;
    let base = take(&mut obj, "base", "sweep")?;
    let param: String = deserialize_at(take(&mut obj, "param", "sweep")?, "param")?;
    if !SWEEP_PARAMS.contains(&param.as_str()) {
        return Err(CliError::Config(format!("param: expected one of {SWEEP_PARAMS:?}, got `{param}`")));
    }
    let values: Vec<serde_json::Number> = deserialize_at(take(&mut obj, "values", "sweep")?, "values")?;
    if values.is_empty() {
        return Err(CliError::Config("values: need at least one value".into()));
    }
    let leaf = param.rsplit('.').next().expect("non-empty");
    let mut points = Vec::with_capacity(values.len());
    for v in &values {
        let mut cfg = base.clone();
        set_path(&mut cfg, &param, Value::Number(v.clone()))?;
        let cfg = sim_config_from_value(cfg).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{param}={v}: {m}")),
            other => other,
        })?;
        points.push((format!("{leaf}_{v}"), v.to_string(), cfg));
    }
    let mut dirs: Vec<&str> = points.iter().map(|p| p.0.as_str()).collect();
    dirs.sort_unstable();
    dirs.dedup();
    if dirs.len() != points.len() {
        return Err(CliError::Config("values: duplicate entries".into()));
    }

    create_dir(out)?;
    let one = |(dir, _, cfg): &(String, String, scm_core::harness::SimConfig)| -> Result<RunOutput, CliError> {
        let result = run(cfg)?;
        write_run(&out.join(dir), &result, cfg.k, cfg.m)?;
        Ok(result)
    };
    let results: Vec<RunOutput> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Config(format!("SIM_THREADS: {e}")))?;
        pool.install(|| points.par_iter().map(one).collect::<Result<_, _>>())?
    } else {
        points.iter().map(one).collect::<Result<_, _>>()?
    };

    let mut index = String::from("dir,param,value,final_mse_window,final_eg_analytic,diverged\n");
    for ((dir, value, _), r) in points.iter().zip(&results) {
        let f = &r.summary.final_record;
        index.push_str(&format!(
            "{dir},{param},{value},{},{},{}\n",
            num(f.mse_window),
            num(f.eg_analytic),
            r.summary.diverged
        ));
    }
    write_atomic(&out.join("index.csv"), index.as_bytes())?;
    let bad: Vec<&str> = points
        .iter()
        .zip(&results)
        .filter(|(_, r)| r.summary.diverged)
        .map(|(p, _)| p.0.as_str())
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Diverged(format!("runs diverged in {bad:?}")))
    }
}
