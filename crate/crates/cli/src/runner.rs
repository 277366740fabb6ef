//! Subcommand execution and artifact writing.
//!
//! Every run writes `manifest.json` (config echo, seed, wall time, version)
//! next to its data artifacts so outputs stay self-describing. CSV files use
//! a fixed column order, `.` decimals, `\n` newlines and 17 significant
//! digits, so identical configs on the same build produce byte-identical
//! data files. Partial outputs are removed when a run fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use prwlab_core::asymp::{
    self, predict_elementary, predict_exp_correction, predict_second_order,
};
use prwlab_core::branching::{clt_statistic, simulate_ensemble, SimConfig};
use prwlab_core::gridfn::{convolve_dri, GridFunction};
use prwlab_core::renewal::{build_tables, gamma0_empirical, RenewalTables};
use prwlab_core::{gamma, JointStepModel};
use serde::Serialize;

use crate::config::ExperimentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Tables,
    Simulate,
    Gamma,
    Verify,
    Clt,
}

impl Subcommand {
    fn as_str(&self) -> &'static str {
        match self {
            Subcommand::Tables => "tables",
            Subcommand::Simulate => "simulate",
            Subcommand::Gamma => "gamma",
            Subcommand::Verify => "verify",
            Subcommand::Clt => "clt",
        }
    }
}

/// 17 significant digits; enough to reproduce the double exactly.
fn fmt(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Tracks written artifacts so failed runs can clean up after themselves.
struct ArtifactSet {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl ArtifactSet {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(ArtifactSet { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn discard_all(&self) {
        for path in &self.written {
            let _ = fs::remove_file(path);
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'static str,
    version: &'static str,
    master_seed: u64,
    threads: usize,
    config: &'a ExperimentConfig,
    wall_time_ms: u128,
}

/// Runs one subcommand; returns the artifact paths written.
pub fn run(
    config: &ExperimentConfig,
    subcommand: Subcommand,
    dump: Option<&str>,
) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let mut artifacts = ArtifactSet::new(Path::new(&config.output_dir))?;
    let result = dispatch(config, subcommand, dump, &mut artifacts);
    if let Err(e) = result {
        artifacts.discard_all();
        return Err(e);
    }
    let manifest = Manifest {
        subcommand: subcommand.as_str(),
        version: env!("CARGO_PKG_VERSION"),
        master_seed: config.simulate.master_seed,
        threads: rayon::current_num_threads(),
        config,
        wall_time_ms: started.elapsed().as_millis(),
    };
    let body = serde_json::to_string_pretty(&manifest)?;
    artifacts.write("manifest.json", body.as_bytes())?;
    Ok(artifacts.written)
}

fn dispatch(
    config: &ExperimentConfig,
    subcommand: Subcommand,
    dump: Option<&str>,
    artifacts: &mut ArtifactSet,
) -> Result<()> {
    let model = config.to_model()?;
    match subcommand {
        Subcommand::Tables => {
            let tables = grid_tables(config, &model)?;
            write_tables_csv(&tables, artifacts)?;
            write_scalars_json(&tables, artifacts)?;
            write_dump(config, &model, &tables, dump, artifacts)
        }
        Subcommand::Simulate => {
            if dump.is_some() {
                bail!("--dump requires a table-building subcommand (tables, verify or clt)");
            }
            let result = run_ensemble(config, &model)?;
            let mut sim = String::from("replica,j,N_j\n");
            for (r, row) in result.counts.iter().enumerate() {
                for (j, &count) in row.iter().enumerate() {
                    sim.push_str(&format!("{r},{},{count}\n", j + 1));
                }
            }
            artifacts.write("sim.csv", sim.as_bytes())?;
            let mut heights = String::from("replica,H\n");
            for (r, h) in result.heights.iter().enumerate() {
                heights.push_str(&format!("{r},{h}\n"));
            }
            artifacts.write("heights.csv", heights.as_bytes())?;
            let truncated = result.truncated.iter().filter(|&&x| x).count();
            if truncated > 0 {
                log::warn!("{truncated} of {} replicas were truncated", result.truncated.len());
            }
            Ok(())
        }
        Subcommand::Gamma => {
            if dump.is_some() {
                bail!("--dump requires a table-building subcommand (tables, verify or clt)");
            }
            let result = gamma::gamma_rate(&model)?;
            let body = serde_json::to_string_pretty(&result)?;
            println!("{body}");
            artifacts.write("gamma.json", body.as_bytes())?;
            Ok(())
        }
        Subcommand::Verify => {
            let tables = grid_tables(config, &model)?;
            if !config.verify.theorems.is_empty() {
                let csv = verify_ratios(config, &tables)?;
                artifacts.write("ratios.csv", csv.as_bytes())?;
            }
            write_dump(config, &model, &tables, dump, artifacts)
        }
        Subcommand::Clt => {
            let tables = grid_tables(config, &model)?;
            if config.simulate.t > config.grid.t_max {
                bail!("simulate.t: {} exceeds grid.T = {}", config.simulate.t, config.grid.t_max);
            }
            let j = config.schedule_j(config.simulate.t)?;
            if j > config.generations.jmax {
                bail!(
                    "generations.jmax: schedule needs j = {j} at t = {} but jmax = {}",
                    config.simulate.t,
                    config.generations.jmax
                );
            }
            let s2 = tables
                .moments
                .s2
                .filter(|&v| v > 0.0)
                .ok_or_else(|| anyhow!("model: the CLT statistic needs Var xi in (0, inf)"))?;
            let result = run_ensemble(config, &model)?;
            let stats =
                clt_statistic(&result, &tables, j, config.simulate.t, s2, tables.m)?;
            let mut csv = String::from("statistic\n");
            for s in stats {
                csv.push_str(&fmt(s));
                csv.push('\n');
            }
            artifacts.write("clt.csv", csv.as_bytes())?;
            write_dump(config, &model, &tables, dump, artifacts)
        }
    }
}

fn grid_tables(config: &ExperimentConfig, model: &JointStepModel) -> Result<RenewalTables> {
    build_tables(model, config.grid.h, config.grid.t_max, config.generations.jmax)
        .map_err(|e| anyhow!("tables: {e}"))
}

fn run_ensemble(
    config: &ExperimentConfig,
    model: &JointStepModel,
) -> Result<prwlab_core::SimResult> {
    let sim = SimConfig {
        model: *model,
        t: config.simulate.t,
        jmax: config.generations.jmax,
        replicas: config.simulate.replicas,
        master_seed: config.simulate.master_seed,
        max_nodes: config.simulate.max_nodes,
        height_horizon: config.simulate.height_horizon,
    };
    simulate_ensemble(&sim).map_err(|e| anyhow!("simulate: {e}"))
}

fn write_tables_csv(tables: &RenewalTables, artifacts: &mut ArtifactSet) -> Result<()> {
    let mut header = String::from("t,U,V");
    for j in 2..=tables.jmax() {
        header.push_str(&format!(",V_{j}"));
    }
    header.push('\n');
    let mut out = header;
    let n = tables.u.len();
    for k in 0..n {
        let t = k as f64 * tables.h;
        out.push_str(&fmt(t));
        out.push(',');
        out.push_str(&fmt(tables.u.values()[k]));
        for vj in &tables.vj {
            out.push(',');
            out.push_str(&fmt(vj.values()[k]));
        }
        out.push('\n');
    }
    artifacts.write("tables.csv", out.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct Scalars<'a> {
    model_id: &'a str,
    m: f64,
    m_grid: f64,
    gamma0: Option<f64>,
    gamma0_empirical: Option<f64>,
    c0: Option<f64>,
    #[serde(rename = "cL")]
    c_l: Option<f64>,
    tail_mass_xi: f64,
    tail_mass_eta: f64,
}

fn write_scalars_json(tables: &RenewalTables, artifacts: &mut ArtifactSet) -> Result<()> {
    // the empirical limit needs the grid-consistent drift; a lattice law
    // fails the plateau test and reports null
    let empirical = gamma0_empirical(&tables.v, tables.m_grid).map(|e| e.value).ok();
    let scalars = Scalars {
        model_id: &tables.model_id,
        m: tables.m,
        m_grid: tables.m_grid,
        gamma0: tables.gamma0,
        gamma0_empirical: empirical,
        c0: tables.c0,
        c_l: tables.c_l,
        tail_mass_xi: tables.tail_mass_xi,
        tail_mass_eta: tables.tail_mass_eta,
    };
    artifacts.write("scalars.json", serde_json::to_string_pretty(&scalars)?.as_bytes())?;
    Ok(())
}

fn write_dump(
    config: &ExperimentConfig,
    model: &JointStepModel,
    tables: &RenewalTables,
    dump: Option<&str>,
    artifacts: &mut ArtifactSet,
) -> Result<()> {
    let Some(name) = dump else { return Ok(()) };
    let owned;
    let grid: &GridFunction = match name {
        "U" => &tables.u,
        "V" => &tables.v,
        "F" => {
            let (f, _) = model.discretize_cdf(config.grid.h, config.grid.t_max)?;
            owned = f;
            &owned
        }
        "G" => {
            let (_, g) = model.discretize_cdf(config.grid.h, config.grid.t_max)?;
            owned = g;
            &owned
        }
        other => {
            let j: u32 = other
                .strip_prefix("V_")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| {
                    anyhow!("--dump: unknown grid `{other}` (expected U, V, V_<j>, F or G)")
                })?;
            tables.v_j(j).map_err(|e| anyhow!("--dump: {e}"))?
        }
    };
    let mut csv = String::from("t,value\n");
    for (t, v) in grid.nodes() {
        csv.push_str(&fmt(t));
        csv.push(',');
        csv.push_str(&fmt(v));
        csv.push('\n');
    }
    artifacts.write(&format!("dump_{name}.csv"), csv.as_bytes())?;
    Ok(())
}

/// One verify row per (theorem, checkpoint).
fn verify_ratios(config: &ExperimentConfig, tables: &RenewalTables) -> Result<String> {
    let m = tables.m;
    let mut csv = String::from("theorem,t,j,table_value_log,prediction_log,ratio\n");
    for label in &config.verify.theorems {
        for &t in &config.verify.t_checkpoints {
            let j = config.schedule_j(t)?;
            if j > config.generations.jmax {
                bail!(
                    "generations.jmax: schedule needs j = {j} at t = {t} but jmax = {}",
                    config.generations.jmax
                );
            }
            let vj = tables.v_j(j).map_err(|e| anyhow!("verify: {e}"))?;
            let v_prev =
                if j >= 2 { tables.v_j(j - 1)?.value_at(t)? } else { 1.0 };
            let needs_gamma0 = matches!(label.as_str(), "exp_correction" | "second_order");
            let g0 = if needs_gamma0 {
                tables.gamma0.ok_or_else(|| {
                    anyhow!("verify: `{label}` needs finite E xi^2 and E eta for this model")
                })?
            } else {
                0.0
            };
            let (table_value, prediction_log) = match label.as_str() {
                "elementary" => (vj.value_at(t)?, predict_elementary(j, t, m).log_value),
                "exp_correction" => {
                    (vj.value_at(t)?, predict_exp_correction(j, t, m, g0).log_value)
                }
                "second_order" => (vj.value_at(t)?, predict_second_order(j, t, m, g0).log_value),
                "blackwell" => {
                    // unit increment against (1/m) V_{j-1}(t)
                    let upper = vj.value_at(t + 1.0).map_err(|e| {
                        anyhow!("verify.t_checkpoints: blackwell needs t + 1 <= grid.T ({e})")
                    })?;
                    (upper - vj.value_at(t)?, (v_prev / m).ln())
                }
                "key_renewal" => {
                    // triangle on [0, 1] with unit peak: integral 1/2
                    let nodes = (1.0 / config.grid.h).round() as usize + 1;
                    let tri = GridFunction::from_fn(config.grid.h, 0, nodes, |x| {
                        (1.0 - (x - 0.5).abs() * 2.0).max(0.0)
                    })?;
                    let got = convolve_dri(&tri, vj, t)?;
                    (got, asymp::predict_key_renewal(0.5, m, v_prev).ln())
                }
                other => bail!("verify.theorems: unknown label `{other}`"),
            };
            if !(table_value > 0.0) {
                bail!(
                    "verify: table value for `{label}` at t = {t} is {table_value}; \
                     pick checkpoints where V_j is positive"
                );
            }
            let table_log = table_value.ln();
            let ratio = (table_log - prediction_log).exp();
            csv.push_str(&format!(
                "{label},{},{j},{},{},{}\n",
                fmt(t),
                fmt(table_log),
                fmt(prediction_log),
                fmt(ratio)
            ));
        }
    }
    Ok(csv)
}
