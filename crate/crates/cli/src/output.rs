use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use collusion_core::harness::{RunRecord, Simulation, SweepRow};
use serde::Serialize;

use crate::config::LabConfig;

pub const TRAJECTORIES: &str = "trajectories.csv";
pub const RUNS: &str = "runs.json";
pub const SUMMARY: &str = "summary.json";
pub const PHASE1: &str = "phase1.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SERIES: &str = "price_series.csv";
pub const MANIFEST: &str = "manifest.json";
pub const AGENTS: &str = "agents";

#[derive(Debug, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct SeedPlan {
    pub base_seed: u64,
    pub sim_ids: Vec<usize>,
    /// How each simulation's random streams are derived.
    pub streams: &'static str,
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub status: String,
    pub threads: usize,
    pub config: &'a LabConfig,
    pub seeds: SeedPlan,
    pub outputs: Vec<String>,
    pub timings: Vec<Timing>,
}

/// Output directory bookkeeping: every file written and every timed stage
/// ends up in the manifest, which is written even when the command fails.
pub struct Session {
    pub dir: PathBuf,
    outputs: Vec<String>,
    timings: Vec<Timing>,
}

impl Session {
    pub fn new(dir: PathBuf) -> io::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            outputs: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(Timing {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let path = self.path(name);
        write_json(&path, value)
    }

    pub fn write_manifest(
        mut self,
        command: String,
        status: String,
        config: &LabConfig,
    ) -> io::Result<()> {
        let exp = &config.experiment;
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            status,
            threads: rayon::current_num_threads(),
            config,
            seeds: SeedPlan {
                base_seed: exp.base_seed,
                sim_ids: (0..exp.n_simulations).collect(),
                streams: "ChaCha8Rng::seed_from_u64(base_seed), stream 4 * sim_id + role",
            },
            outputs: std::mem::take(&mut self.outputs),
            timings: std::mem::take(&mut self.timings),
        };
        write_json(&self.dir.join(MANIFEST), &manifest)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let file = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_reader(io::BufReader::new(file))
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |k| format!("{prefix}_{k}"))
}

pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["sim_id", "episode", "period"].map(String::from).to_vec();
    h.extend(numbered("price", n));
    h.extend(numbered("profit", n));
    h.extend(numbered("topup", n));
    h.push("mech_phase".into());
    h
}

/// One row per period of each evaluation episode.
pub fn write_trajectories(path: &Path, records: &[RunRecord], n: usize) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trajectory_header(n))?;
    for r in records {
        for row in &r.trajectory {
            let mut rec = vec![r.sim_id.to_string(), "0".into(), row.period.to_string()];
            rec.extend(row.prices.iter().map(f64::to_string));
            rec.extend(row.profits.iter().map(f64::to_string));
            rec.extend(row.topups.iter().map(f64::to_string));
            rec.push(row.phase.name().into());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_phase1(path: &Path, sims: &[Simulation], n: usize) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["sim_id", "converged", "iterations"]
        .map(String::from)
        .to_vec();
    header.extend(numbered("greedy_price", n));
    header.push("greedy_cycle_len".into());
    w.write_record(&header)?;
    for s in sims {
        let r = &s.report;
        let mut rec = vec![
            s.sim_id.to_string(),
            r.converged.to_string(),
            r.iterations.to_string(),
        ];
        rec.extend(r.greedy_prices.iter().map(f64::to_string));
        rec.push(r.greedy_cycle_len.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub const SWEEP_HEADER: [&str; 6] = [
    "cost",
    "n_sims",
    "n_no_cycle",
    "markup",
    "markup_2spdr",
    "improvement_pct",
];

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.cost.to_string(),
            r.n_sims.to_string(),
            r.n_no_cycle.to_string(),
            r.markup.to_string(),
            r.markup_2spdr.to_string(),
            r.improvement_pct.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_series(path: &Path, series: &[(usize, Vec<f64>)], n: usize) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["period".to_string()];
    header.extend(numbered("price", n));
    w.write_record(&header)?;
    for (t, prices) in series {
        let mut rec = vec![t.to_string()];
        rec.extend(prices.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn agent_file(sim_id: usize) -> String {
    format!("sim_{sim_id:04}.json")
}
