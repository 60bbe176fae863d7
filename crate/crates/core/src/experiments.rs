//! Scenario files, benchmark schemes and Monte-Carlo sweeps.
//!
//! A scenario is a versioned JSON document. Logarithmic quantities carry a
//! `_dbm` or `_db` suffix and are converted to SI on load. Realization `r`
//! uses seed `seed_base + r` for both the device drop and the channel draw,
//! so every sweep value sees the same devices and small-scale fading.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::ao::{solve_noma, solve_tdma, AoConfig, AoResult, Restrictions};
use crate::error::{Error, Result};
use crate::model::{
    generate_channels, harvested_energy, io::read_channel, Point3, Beams, BeamVector, ChannelRealization,
    DibfCase, MultipleAccess, Solution, SystemParams,
};
use crate::units::{dbm_to_watt, ref_loss_db_to_gain};

pub const SCHEMA_VERSION: u32 = 1;

/// Shipped scenario with the reference deployment.
pub const DEFAULT_SCENARIO: &str = include_str!("../../../scenarios/default.json");

/// Deployment constants as written in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub bandwidth_hz: f64,
    pub noise_power_dbm: f64,
    pub eh_efficiency: f64,
    pub cpu_energy_coeff: f64,
    pub cycles_per_bit: f64,
    pub frame_s: f64,
    pub hap_tx_power_dbm: f64,
    pub ref_loss_db: f64,
    pub pathloss_exp_ad: f64,
    pub pathloss_exp_ai: f64,
    pub pathloss_exp_id: f64,
    pub rician_factor: f64,
    pub hap_pos: Point3,
    pub irs_pos: Point3,
    pub num_elements: usize,
    pub num_devices: usize,
    pub device_center: Point3,
    pub device_radius_m: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            bandwidth_hz: 500e3,
            noise_power_dbm: -75.0,
            eh_efficiency: 0.8,
            cpu_energy_coeff: 1e-28,
            cycles_per_bit: 2000.0,
            frame_s: 1.0,
            hap_tx_power_dbm: 40.0,
            ref_loss_db: 30.0,
            pathloss_exp_ad: 3.0,
            pathloss_exp_ai: 2.2,
            pathloss_exp_id: 2.2,
            rician_factor: 2.0,
            hap_pos: [0.0, 0.0, 0.0],
            irs_pos: [10.0, 0.0, 3.0],
            num_elements: 8,
            num_devices: 5,
            device_center: [10.0, 0.0, 0.0],
            device_radius_m: 1.5,
        }
    }
}

impl ScenarioParams {
    /// SI parameters with devices dropped uniformly in the disc.
    pub fn realize(&self, seed: u64) -> SystemParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DROP_STREAM);
        let c = self.device_center;
        let positions = (0..self.num_devices)
            .map(|_| {
                let r = self.device_radius_m * rng.random::<f64>().sqrt();
                let a = 2.0 * PI * rng.random::<f64>();
                [c[0] + r * a.cos(), c[1] + r * a.sin(), c[2]]
            })
            .collect();
        SystemParams {
            bandwidth: self.bandwidth_hz,
            noise_power: dbm_to_watt(self.noise_power_dbm),
            eh_efficiency: self.eh_efficiency,
            cpu_energy_coeff: self.cpu_energy_coeff,
            cycles_per_bit: self.cycles_per_bit,
            frame: self.frame_s,
            hap_tx_power: dbm_to_watt(self.hap_tx_power_dbm),
            hap_pos: self.hap_pos,
            irs_pos: self.irs_pos,
            device_positions: positions,
            pathloss_exp_ad: self.pathloss_exp_ad,
            pathloss_exp_ai: self.pathloss_exp_ai,
            pathloss_exp_id: self.pathloss_exp_id,
            ref_gain: ref_loss_db_to_gain(self.ref_loss_db),
            rician_factor: self.rician_factor,
            num_elements: self.num_elements,
        }
    }
}

const DROP_STREAM: u64 = 0x64726f70;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    /// IRS element count.
    N,
    /// HAP transmit power in dBm.
    PE,
    /// CPU cycles per bit.
    C,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl Sweep {
    fn apply(&self, base: &ScenarioParams, value: f64) -> ScenarioParams {
        let mut p = base.clone();
        match self.axis {
            SweepAxis::N => p.num_elements = value as usize,
            SweepAxis::PE => p.hap_tx_power_dbm = value,
            SweepAxis::C => p.cycles_per_bit = value,
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub case: DibfCase,
    pub ma: MultipleAccess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    FixedWptTime,
    FixedPhase,
    NoIrs,
    OffloadOnly,
    LocalOnly,
}

impl Benchmark {
    pub const ALL: [Benchmark; 5] = [
        Benchmark::FixedWptTime,
        Benchmark::FixedPhase,
        Benchmark::NoIrs,
        Benchmark::OffloadOnly,
        Benchmark::LocalOnly,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Benchmark::FixedWptTime => "fixed_wpt_time",
            Benchmark::FixedPhase => "fixed_phase",
            Benchmark::NoIrs => "no_irs",
            Benchmark::OffloadOnly => "offload_only",
            Benchmark::LocalOnly => "local_only",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Benchmark {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.id() == s)
            .ok_or_else(|| Error::UnknownBenchmark(s.to_string()))
    }
}

/// Settings shared by the benchmark schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkOptions {
    /// Beamforming regime the benchmarks restrict (TDMA).
    pub case: DibfCase,
    /// Pinned energy-transfer time of `fixed_wpt_time`; half the frame when absent.
    pub fixed_tau0_s: Option<f64>,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            case: DibfCase::Case2,
            fixed_tau0_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub params: ScenarioParams,
    pub sweep: Sweep,
    #[serde(default = "default_realizations")]
    pub mc_realizations: usize,
    #[serde(default)]
    pub schemes: Vec<SchemeSpec>,
    #[serde(default)]
    pub benchmarks: Vec<Benchmark>,
    #[serde(default)]
    pub benchmark_options: BenchmarkOptions,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub ao: AoConfig,
    /// Minimum bits per device and frame, applied to TDMA schemes.
    #[serde(default)]
    pub qos_min_bits: Option<f64>,
}

fn default_realizations() -> usize {
    50
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Deserializes `text`, reporting the JSON path of the first bad field.
fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(path, e.into_inner().to_string())
    })
}

fn load_file<T>(path: &Path, parse: impl Fn(&str) -> Result<T>) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    parse(&text).map_err(|e| match e {
        Error::Schema { path: p, reason } => schema(format!("{}:{p}", path.display()), reason),
        other => other,
    })
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = parse_json(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_file(path, Scenario::from_json)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(schema(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.mc_realizations == 0 {
            return Err(schema("mc_realizations", "must be >= 1"));
        }
        if self.sweep.values.is_empty() {
            return Err(schema("sweep.values", "must be nonempty"));
        }
        if self.schemes.is_empty() && self.benchmarks.is_empty() {
            return Err(schema("schemes", "no schemes or benchmarks to run"));
        }
        for (i, v) in self.sweep.values.iter().enumerate() {
            let bad = match self.sweep.axis {
                SweepAxis::N => !(*v >= 0.0 && v.fract() == 0.0),
                SweepAxis::PE => !v.is_finite(),
                SweepAxis::C => !(v.is_finite() && *v > 0.0),
            };
            if bad {
                return Err(schema(format!("sweep.values[{i}]"), format!("invalid value {v}")));
            }
        }
        if self.params.num_devices == 0 {
            return Err(schema("params.num_devices", "must be >= 1"));
        }
        if !(self.params.device_radius_m >= 0.0) {
            return Err(schema("params.device_radius_m", "must be >= 0"));
        }
        if self.qos_min_bits.is_some() && self.schemes.iter().any(|s| s.ma == MultipleAccess::Noma) {
            return Err(schema("qos_min_bits", "rate requirements are TDMA only"));
        }
        for v in &self.sweep.values {
            self.sweep
                .apply(&self.params, *v)
                .realize(self.seed_base)
                .validate()
                .map_err(|e| schema("params", e.to_string()))?;
        }
        self.ao.validate().map_err(|e| schema("ao", e.to_string()))
    }
}

/// A single problem instance: deployment, seed and scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub schema_version: u32,
    #[serde(default)]
    pub params: ScenarioParams,
    /// Seed of the device drop and of the channel draw.
    #[serde(default)]
    pub seed: u64,
    /// Explicit device positions instead of a random drop.
    #[serde(default)]
    pub device_positions: Option<Vec<Point3>>,
    /// Channel file to use instead of the generator.
    #[serde(default)]
    pub channel_file: Option<PathBuf>,
    pub case: DibfCase,
    pub ma: MultipleAccess,
    #[serde(default)]
    pub ao: AoConfig,
    /// Minimum bits per device and frame (TDMA only).
    #[serde(default)]
    pub qos_min_bits: Option<Vec<f64>>,
}

impl Instance {
    pub fn from_json(text: &str) -> Result<Self> {
        let i: Instance = parse_json(text)?;
        if i.schema_version != SCHEMA_VERSION {
            return Err(schema(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", i.schema_version),
            ));
        }
        i.system().validate().map_err(|e| schema("params", e.to_string()))?;
        i.ao.validate().map_err(|e| schema("ao", e.to_string()))?;
        if i.qos_min_bits.is_some() && i.ma == MultipleAccess::Noma {
            return Err(schema("qos_min_bits", "rate requirements are TDMA only"));
        }
        Ok(i)
    }

    /// Loads an instance; a relative `channel_file` is resolved against the
    /// instance's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut i = load_file(path, Instance::from_json)?;
        if let (Some(c), Some(dir)) = (&i.channel_file, path.parent()) {
            if c.is_relative() {
                i.channel_file = Some(dir.join(c));
            }
        }
        Ok(i)
    }

    pub fn system(&self) -> SystemParams {
        let mut p = self.params.realize(self.seed);
        if let Some(pos) = &self.device_positions {
            p.device_positions = pos.clone();
        }
        p
    }

    pub fn channel(&self, params: &SystemParams) -> Result<ChannelRealization> {
        match &self.channel_file {
            Some(f) => {
                let c = read_channel(f)?;
                if c.num_devices() != params.num_devices() || c.num_elements() != params.num_elements {
                    return Err(schema(
                        "channel_file",
                        format!(
                            "channel has K = {}, N = {}; params have K = {}, N = {}",
                            c.num_devices(),
                            c.num_elements(),
                            params.num_devices(),
                            params.num_elements
                        ),
                    ));
                }
                Ok(c)
            }
            None => generate_channels(params, self.seed),
        }
    }

    /// Solves the instance with the alternating-optimization driver.
    pub fn solve(&self) -> Result<AoResult> {
        let params = self.system();
        let chan = self.channel(&params)?;
        match self.ma {
            MultipleAccess::Tdma => {
                let restr = Restrictions {
                    qos_min_bits: self.qos_min_bits.clone(),
                    ..Restrictions::default()
                };
                solve_tdma(&params, &chan, self.case, &self.ao, &restr, &[])
            }
            MultipleAccess::Noma => {
                let solution = solve_noma(&params, &chan, &self.ao, self.case)?;
                Ok(AoResult {
                    relaxed_objective: solution.objective_bits,
                    solution,
                    trace: Vec::new(),
                })
            }
        }
    }
}

/// Solves one benchmark scheme by its id.
pub fn benchmark_schemes(
    params: &SystemParams,
    chan: &ChannelRealization,
    which: &str,
    opts: &BenchmarkOptions,
    ao: &AoConfig,
) -> Result<Solution> {
    run_benchmark(params, chan, which.parse()?, opts, ao)
}

pub fn run_benchmark(
    params: &SystemParams,
    chan: &ChannelRealization,
    which: Benchmark,
    opts: &BenchmarkOptions,
    ao: &AoConfig,
) -> Result<Solution> {
    let case = opts.case;
    let mut restr = Restrictions::default();
    match which {
        Benchmark::FixedWptTime => {
            restr.fixed_tau0 = Some(opts.fixed_tau0_s.unwrap_or(0.5 * params.frame));
        }
        Benchmark::FixedPhase => {
            restr.fixed_beams = Some(Beams::shared(BeamVector::ones(chan.num_elements())));
        }
        Benchmark::NoIrs => {
            let p = params.with_elements(0);
            return Ok(solve_tdma(&p, &chan.without_irs(), case, ao, &restr, &[])?.solution);
        }
        Benchmark::OffloadOnly => restr.offload_only = true,
        Benchmark::LocalOnly => restr.local_only = true,
    }
    Ok(solve_tdma(params, chan, case, ao, &restr, &[])?.solution)
}

/// Label of a scheme column: `case2_tdma` or a benchmark id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeId {
    Full(SchemeSpec),
    Bench(Benchmark),
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeId::Full(s) => write!(f, "{}_{}", s.case, s.ma),
            SchemeId::Bench(b) => write!(f, "{b}"),
        }
    }
}

/// One solve of one scheme on one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub scheme: String,
    pub sweep_value: f64,
    pub realization: usize,
    pub objective_bits: f64,
    pub tau0: f64,
    /// Per-device harvested energy in J.
    pub harvested: Vec<f64>,
    pub l_iter: usize,
    pub wall_time_s: f64,
}

impl RunRow {
    pub fn mean_harvested(&self) -> f64 {
        self.harvested.iter().sum::<f64>() / self.harvested.len() as f64
    }
}

/// Averages of one scheme at one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: String,
    pub sweep_value: f64,
    pub realizations: usize,
    pub mean_objective_bits: f64,
    pub mean_tau0: f64,
    pub mean_harvested_j: f64,
    pub mean_l_iter: f64,
}

fn scheme_ids(s: &Scenario) -> Vec<SchemeId> {
    s.schemes
        .iter()
        .map(|x| SchemeId::Full(*x))
        .chain(s.benchmarks.iter().map(|b| SchemeId::Bench(*b)))
        .collect()
}

fn solve_one(
    s: &Scenario,
    params: &SystemParams,
    chan: &ChannelRealization,
    id: SchemeId,
) -> Result<(Solution, ChannelRealization)> {
    match id {
        SchemeId::Full(spec) => {
            let sol = match spec.ma {
                MultipleAccess::Tdma => {
                    let restr = Restrictions {
                        qos_min_bits: s.qos_min_bits.map(|q| vec![q; params.num_devices()]),
                        ..Restrictions::default()
                    };
                    solve_tdma(params, chan, spec.case, &s.ao, &restr, &[])?.solution
                }
                MultipleAccess::Noma => solve_noma(params, chan, &s.ao, spec.case)?,
            };
            Ok((sol, chan.clone()))
        }
        SchemeId::Bench(Benchmark::NoIrs) => {
            let sol = run_benchmark(params, chan, Benchmark::NoIrs, &s.benchmark_options, &s.ao)?;
            Ok((sol, chan.without_irs()))
        }
        SchemeId::Bench(b) => Ok((run_benchmark(params, chan, b, &s.benchmark_options, &s.ao)?, chan.clone())),
    }
}

/// Runs every scheme on every sweep value and realization. Rows are ordered
/// by sweep value, realization, then scheme as listed.
pub fn run(s: &Scenario) -> Result<Vec<RunRow>> {
    s.validate()?;
    let ids = scheme_ids(s);
    let jobs: Vec<(usize, usize)> = (0..s.sweep.values.len())
        .flat_map(|i| (0..s.mc_realizations).map(move |r| (i, r)))
        .collect();
    let blocks: Vec<Vec<RunRow>> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let value = s.sweep.values[i];
            let seed = s.seed_base.wrapping_add(r as u64);
            let params = s.sweep.apply(&s.params, value).realize(seed);
            let chan = generate_channels(&params, seed)?;
            ids.iter()
                .map(|&id| {
                    let t = Instant::now();
                    let (sol, used) = solve_one(s, &params, &chan, id)?;
                    let wall = t.elapsed().as_secs_f64();
                    let harvested = (0..params.num_devices())
                        .map(|k| harvested_energy(&params, &used, &sol.beams.wpt, sol.allocation.tau0, k))
                        .collect::<Result<_>>()?;
                    Ok(RunRow {
                        scheme: id.to_string(),
                        sweep_value: value,
                        realization: r,
                        objective_bits: sol.objective_bits,
                        tau0: sol.allocation.tau0,
                        harvested,
                        l_iter: sol.iterations,
                        wall_time_s: wall,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    // `jobs` is already in output order and rayon preserves it on collect.
    Ok(blocks.into_iter().flatten().collect())
}

/// Per-scheme averages, in first-appearance order of (sweep value, scheme).
/// Sums run over realizations in index order.
pub fn summarize(rows: &[RunRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, String)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(v, s)| *v == r.sweep_value && *s == r.scheme) {
            keys.push((r.sweep_value, r.scheme.clone()));
        }
    }
    keys.into_iter()
        .map(|(v, scheme)| {
            let mut sel: Vec<&RunRow> = rows.iter().filter(|r| r.sweep_value == v && r.scheme == scheme).collect();
            sel.sort_by_key(|r| r.realization);
            let n = sel.len() as f64;
            let mean = |f: &dyn Fn(&RunRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
            SummaryRow {
                realizations: sel.len(),
                mean_objective_bits: mean(&|r| r.objective_bits),
                mean_tau0: mean(&|r| r.tau0),
                mean_harvested_j: mean(&|r| r.mean_harvested()),
                mean_l_iter: mean(&|r| r.l_iter as f64),
                scheme,
                sweep_value: v,
            }
        })
        .collect()
}

pub fn write_rows<W: std::io::Write>(out: W, rows: &[RunRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scheme",
        "sweep_value",
        "realization",
        "objective_bits",
        "tau0",
        "harvested_energy_j",
        "L_iter",
        "wall_time_s",
    ])?;
    for r in rows {
        let harvested: Vec<String> = r.harvested.iter().map(|e| e.to_string()).collect();
        w.write_record([
            r.scheme.clone(),
            r.sweep_value.to_string(),
            r.realization.to_string(),
            r.objective_bits.to_string(),
            r.tau0.to_string(),
            harvested.join(";"),
            r.l_iter.to_string(),
            r.wall_time_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: std::io::Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scheme",
        "sweep_value",
        "realizations",
        "mean_objective_bits",
        "mean_tau0",
        "mean_harvested_energy_j",
        "mean_L_iter",
    ])?;
    for r in rows {
        w.write_record([
            r.scheme.clone(),
            r.sweep_value.to_string(),
            r.realizations.to_string(),
            r.mean_objective_bits.to_string(),
            r.mean_tau0.to_string(),
            r.mean_harvested_j.to_string(),
            r.mean_l_iter.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Files written by [`run_scenario`].
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub runs_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub metadata_json: PathBuf,
    pub rows: Vec<RunRow>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    schema_version: u32,
    fixed_wpt_tau0_s: f64,
    scenario: &'a Scenario,
}

/// Loads the scenario at `path`, runs it and writes `runs.csv`,
/// `summary.csv` and `metadata.json` into `out_dir`.
pub fn run_scenario(path: &Path, out_dir: &Path) -> Result<ScenarioOutput> {
    let s = Scenario::load(path)?;
    let rows = run(&s)?;
    std::fs::create_dir_all(out_dir)?;
    let runs_csv = out_dir.join("runs.csv");
    let summary_csv = out_dir.join("summary.csv");
    let metadata_json = out_dir.join("metadata.json");
    write_rows(std::fs::File::create(&runs_csv)?, &rows)?;
    write_summary(std::fs::File::create(&summary_csv)?, &summarize(&rows))?;
    let meta = Metadata {
        schema_version: SCHEMA_VERSION,
        fixed_wpt_tau0_s: s.benchmark_options.fixed_tau0_s.unwrap_or(0.5 * s.params.frame_s),
        scenario: &s,
    };
    std::fs::write(&metadata_json, serde_json::to_string_pretty(&meta)?)?;
    Ok(ScenarioOutput {
        runs_csv,
        summary_csv,
        metadata_json,
        rows,
    })
}
