//! Single runs and seed batches, with their on-disk layout:
//!
//! ```text
//! out/
//!   effective_config.toml   fully resolved scenario, seeds sorted
//!   manifest.toml           architecture, seeds, config hash
//!   runs.csv                one row per seed, ascending
//!   cdf_<metric>.csv        value,cum_fraction
//!   cdf.gnuplot             with --gnuplot
//!   seed_<n>/summary.csv    one row per flow
//!   seed_<n>/qp_timeline.csv, events.log, packets.csv, admission.csv
//! ```
//!
//! `run` writes the same files without the `seed_<n>` level and without CDFs.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::info;
use qoesim_core::observer::NullObserver;
use qoesim_core::sim::{run_scenario, run_with_ladder, RunOutput};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::output::{self, Recorder, RunRow, CDF_METRICS};
use crate::scenario::{config_hash, effective_toml, Scenario};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default)]
pub struct Dumps {
    pub events: bool,
    pub packets: bool,
    pub admission: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub name: String,
    pub architecture: String,
    pub seeds: Vec<u64>,
    pub config_sha256: String,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(Error::io(path))?))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(Error::io(path))
}

/// Runs one seed. With a directory, writes `summary.csv`, the QP timeline
/// and whichever dumps are enabled into it.
pub fn run_one(scn: &Scenario, seed: u64, dir: Option<&Path>, dumps: Dumps) -> Result<RunOutput> {
    let Some(dir) = dir else {
        return simulate(scn, seed, &mut NullObserver);
    };
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let open = |on: bool, name: &str| -> Result<Option<BufWriter<File>>> {
        on.then(|| create(&dir.join(name))).transpose()
    };
    let mut rec = Recorder::new(
        open(dumps.events, "events.log")?,
        open(dumps.packets, "packets.csv")?,
        open(dumps.admission, "admission.csv")?,
        open(true, "qp_timeline.csv")?,
    );
    let out = simulate(scn, seed, &mut rec)?;
    rec.finish().map_err(Error::io(dir))?;
    output::write_flow_summary(create(&dir.join("summary.csv"))?, &out.summary.flows)?;
    Ok(out)
}

fn simulate(
    scn: &Scenario,
    seed: u64,
    obs: &mut dyn qoesim_core::observer::Observer,
) -> Result<RunOutput> {
    let res = match &scn.ladder {
        Some(l) => run_with_ladder(&scn.config, l, seed, obs),
        None => run_scenario(&scn.config, seed, obs),
    };
    res.map_err(|source| Error::Run { seed, source })
}

/// `run`: one seed, results straight into `out`.
pub fn run_single(scn: &Scenario, seed: u64, out: &Path, dumps: Dumps) -> Result<RunOutput> {
    fs::create_dir_all(out).map_err(Error::io(out))?;
    write_file(
        &out.join("effective_config.toml"),
        &effective_toml(&scn.config),
    )?;
    let res = run_one(scn, seed, Some(out), dumps)?;
    output::write_runs(
        create(&out.join("runs.csv"))?,
        &[RunRow::from(&res.summary)],
    )?;
    Ok(res)
}

/// Runs every seed of the scenario in parallel and returns the outputs in
/// ascending seed order. The first failure aborts the batch.
pub fn run_seeds(scn: &Scenario, out: Option<&Path>, dumps: Dumps) -> Result<Vec<RunOutput>> {
    let mut seeds = scn.seeds().to_vec();
    seeds.sort_unstable();
    seeds
        .par_iter()
        .map(|&seed| {
            let dir: Option<PathBuf> = out.map(|o| o.join(format!("seed_{seed}")));
            let r = run_one(scn, seed, dir.as_deref(), dumps);
            if r.is_ok() {
                info!("{}: seed {seed} done", scn.config.name);
            }
            r
        })
        .collect()
}

/// `batch`: all seeds plus aggregates.
pub fn run_batch(scn: &Scenario, out: &Path, dumps: Dumps, gnuplot: bool) -> Result<Vec<RunRow>> {
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let outputs = run_seeds(scn, Some(out), dumps)?;
    let rows: Vec<RunRow> = outputs.iter().map(|o| RunRow::from(&o.summary)).collect();
    write_aggregates(scn, &rows, out, gnuplot)?;
    Ok(rows)
}

/// Writes the echo, manifest, `runs.csv` and CDF files for `rows`.
pub fn write_aggregates(scn: &Scenario, rows: &[RunRow], out: &Path, gnuplot: bool) -> Result<()> {
    let cfg = &scn.config;
    write_file(&out.join("effective_config.toml"), &effective_toml(cfg))?;
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    let manifest = BatchManifest {
        name: cfg.name.clone(),
        architecture: cfg.architecture.as_str().to_string(),
        seeds,
        config_sha256: config_hash(cfg),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Other(e.to_string()))?;
    write_file(&out.join("manifest.toml"), &text)?;

    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| r.seed);
    output::write_runs(create(&out.join("runs.csv"))?, &sorted)?;

    let mut written = Vec::new();
    for (name, metric) in CDF_METRICS {
        if let Some(table) = output::cdf_csv(&sorted, *metric) {
            write_file(&out.join(format!("cdf_{name}.csv")), &table)?;
            written.push(*name);
        }
    }
    if gnuplot {
        write_file(
            &out.join("cdf.gnuplot"),
            &gnuplot_script(cfg.architecture.as_str(), &written),
        )?;
    }
    Ok(())
}

fn gnuplot_script(label: &str, metrics: &[&str]) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset key bottom right\nset ylabel 'CDF'\nset yrange [0:1]\nset terminal pngcairo size 800,500\n",
    );
    for m in metrics {
        s.push_str(&format!(
            "set output 'cdf_{m}.png'\nset xlabel '{m}'\nplot 'cdf_{m}.csv' every ::1 using 1:2 with steps title '{label}'\n"
        ));
    }
    s
}
