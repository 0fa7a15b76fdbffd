//! Named reproductions of the three-arm constructions.

use std::path::Path;

use prefgap_core::classes::PolicyClassSpec;
use prefgap_core::constructions::{
    env_three_arm_midpoint, gradient_curves, grid_oracle_1d, scenario_b3, scenario_b4, scenario_b5, scenario_b6,
    scenario_b7, scenario_b8, scenario_iso, scenario_ss, GridObjective, ScenarioResult,
};
use prefgap_core::exact::{online_dpo, PairSampler};
use prefgap_core::optim::OptimizerConfig;
use serde::Serialize;

use crate::error::AppError;
use crate::output::{num, write_csv, write_json, write_table, Manifest};

pub const NAMES: [&str; 8] = ["b3", "b4", "b5", "b6", "b7", "b8", "iso", "ss-thm32"];

pub fn run_named(name: &str, seed: u64) -> Result<Vec<ScenarioResult>, AppError> {
    let r = match name {
        "b3" => scenario_b3(),
        "b4" => scenario_b4(),
        "b5" => scenario_b5(),
        "b6" => scenario_b6(),
        "b7" => scenario_b7(),
        "b8" => scenario_b8(),
        "iso" => scenario_iso(seed),
        "ss-thm32" => scenario_ss(seed),
        other => return Err(AppError::Usage(format!("unknown scenario {other}; expected one of {}", NAMES.join(", ")))),
    };
    Ok(r?)
}

#[derive(Debug, Serialize)]
struct ValueRow<'a> {
    scenario: &'a str,
    condition: &'a str,
    v_rlhf: f64,
    v_dpo: f64,
    v_online_dpo: Option<f64>,
    v_star_class: Option<f64>,
    v_star: f64,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct CheckRow<'a> {
    scenario: &'a str,
    check: &'a str,
    passed: bool,
    detail: &'a str,
}

/// Reward vector and sampler of the online runs, for the three-arm scenarios.
fn curve_setup(name: &str) -> Option<([f64; 3], f64, PairSampler, bool)> {
    match name {
        "b3" => Some(([1.0, 1.0, 0.0], 0.01, PairSampler::Pilaf, false)),
        "b4" | "b5" | "b6" => Some(([1.0, 1.0, 0.0], 0.1, PairSampler::Pilaf, false)),
        "b7" => Some(([12.0, 12.0, 0.0], 1.0, PairSampler::Pilaf, true)),
        "b8" => Some(([24.0, 12.0, 0.0], 1.0, PairSampler::OnPolicy, true)),
        _ => None,
    }
}

/// Runs one scenario and writes its summary, tables and curves under `dir/name`.
/// Claim failures are reported after everything is written.
pub fn reproduce(name: &str, seed: u64, dir: &Path) -> Result<Vec<ScenarioResult>, AppError> {
    let results = run_named(name, seed)?;
    let out = dir.join(name);
    let mut artifacts = vec!["summary.json".to_string(), "values.csv".into(), "checks.csv".into(), "artifacts.csv".into()];
    write_json(&out.join("summary.json"), &results)?;
    let values: Vec<ValueRow> = results
        .iter()
        .map(|r| ValueRow {
            scenario: &r.name,
            condition: &r.condition_label,
            v_rlhf: r.v_rlhf,
            v_dpo: r.v_dpo,
            v_online_dpo: r.v_online_dpo,
            v_star_class: r.v_star_class,
            v_star: r.v_star,
            passed: r.passed(),
        })
        .collect();
    write_csv(&out.join("values.csv"), &values)?;
    let checks: Vec<CheckRow> = results
        .iter()
        .flat_map(|r| r.checks.iter().map(move |c| CheckRow { scenario: &r.name, check: &c.name, passed: c.passed, detail: &c.detail }))
        .collect();
    write_csv(&out.join("checks.csv"), &checks)?;
    let arts: Vec<Vec<String>> = results
        .iter()
        .flat_map(|r| r.artifacts.iter().map(move |(k, v)| vec![r.name.clone(), k.clone(), num(*v)]))
        .collect();
    write_table(&out.join("artifacts.csv"), &["scenario", "key", "value"], &arts)?;

    if let Some((r, beta, sampler, online)) = curve_setup(name) {
        let env = env_three_arm_midpoint(r, beta)?;
        let range = (-4.0, 4.0);
        let rows: Vec<Vec<String>> =
            gradient_curves(&env, sampler, range, 801)?.iter().map(|row| row.iter().map(|v| num(*v)).collect()).collect();
        write_table(&out.join("gradient_curve.csv"), &["x", "rl_grad", "dpo_grad", "online_grad"], &rows)?;
        let value = grid_oracle_1d(&env, GridObjective::RlValue, range, 801)?;
        let loss = grid_oracle_1d(&env, GridObjective::DpoLoss, range, 801)?;
        let rows: Vec<Vec<String>> = value
            .xs
            .iter()
            .zip(&value.values)
            .zip(&loss.values)
            .map(|((x, v), l)| vec![num(*x), num(*v), num(*l)])
            .collect();
        write_table(&out.join("value_curve.csv"), &["x", "value", "dpo_loss"], &rows)?;
        artifacts.push("gradient_curve.csv".into());
        artifacts.push("value_curve.csv".into());
        if online {
            let spec = PolicyClassSpec::LogLinearLogRatioBox { pair: (0, 1), bound: 4.0 };
            let run = online_dpo(&spec, &env, sampler, &OptimizerConfig::default())?;
            let rows: Vec<Vec<String>> =
                run.trajectory.iter().map(|p| vec![p.iter.to_string(), num(p.loss), num(p.value)]).collect();
            write_table(&out.join("trajectory.csv"), &["iter", "loss", "value"], &rows)?;
            artifacts.push("trajectory.csv".into());
        }
    }
    write_json(&out.join("manifest.json"), &Manifest::new(&format!("reproduce {name}"), name, seed, artifacts))?;

    let failed: Vec<String> = results
        .iter()
        .flat_map(|r| r.checks.iter().filter(|c| !c.passed).map(move |c| format!("{}: {} ({})", r.name, c.name, c.detail)))
        .collect();
    if failed.is_empty() {
        Ok(results)
    } else {
        Err(AppError::Claim(failed.join("; ")))
    }
}
