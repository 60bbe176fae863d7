//! Alternating optimization (AO) over resource allocation and IRS beams.
//!
//! Each iteration re-solves the resource allocation for the current beams and
//! then takes one SCA beamforming step for that allocation. Beams stay in the
//! relaxed unit-disk set until the fractional objective increase drops below
//! `epsilon`; they are then projected to unit modulus and the allocation is
//! solved once more. The best result over the warm starts, the aligned start
//! and `restarts - 1` random-phase starts is returned.
//!
//! NOMA results come from the TDMA drivers through [`noma_from_tdma`]; NOMA
//! Case 3 reuses the Case 2 solution with one offloading slot.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::beamforming::{
    case3_optimal_phases, initial_beam, random_beam, solve_bf_priced, solve_bf_subproblem, ScaState,
};
use crate::error::{Error, Result};
use crate::model::{
    objective_bits, Beams, BeamVector, ChannelRealization, DibfCase, MultipleAccess, Solution,
    SystemParams,
};
use crate::resource::{noma_from_tdma, solve_ra, RaProblem, RaSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AoConfig {
    /// Fractional-increase stopping threshold.
    #[serde(alias = "epsilon_xi")]
    pub epsilon: f64,
    pub max_iters: usize,
    /// Number of cold starts: the aligned start plus `restarts - 1` random ones.
    pub restarts: usize,
    pub record_trace: bool,
    /// Seed of the random-phase starts (mixed with the channel seed).
    pub seed: u64,
}

impl Default for AoConfig {
    fn default() -> Self {
        AoConfig {
            epsilon: 1e-4,
            max_iters: 50,
            restarts: 3,
            record_trace: false,
            seed: 0,
        }
    }
}

impl AoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::params("epsilon", format!("must be > 0, got {}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(Error::params("max_iters", "must be >= 1"));
        }
        Ok(())
    }
}

/// Restrictions used by the benchmark schemes.
#[derive(Debug, Clone, Default)]
pub struct Restrictions {
    pub fixed_tau0: Option<f64>,
    /// Forces every CPU frequency to 0.
    pub offload_only: bool,
    /// Forbids offloading.
    pub local_only: bool,
    /// Skips beamforming and uses these beams.
    pub fixed_beams: Option<Beams>,
    pub qos_min_bits: Option<Vec<f64>>,
}

/// One row of the optional iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub restart: usize,
    pub iteration: usize,
    pub objective_bits: f64,
    pub kkt_residual_ra: f64,
    pub kkt_residual_bf: f64,
}

#[derive(Debug, Clone)]
pub struct AoResult {
    pub solution: Solution,
    /// Per-iteration objectives before projection, over all starts.
    pub trace: Vec<TraceRow>,
    /// Best objective reached before projection.
    pub relaxed_objective: f64,
}

pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn ra_at(
    params: &SystemParams,
    chan: &ChannelRealization,
    beams: &Beams,
    case: DibfCase,
    restr: &Restrictions,
) -> Result<RaSolution> {
    let mut prob = RaProblem::from_beams(params, chan, beams, case, MultipleAccess::Tdma)?;
    if restr.local_only {
        prob.gains_off.iter_mut().for_each(|g| *g = 0.0);
    }
    if restr.offload_only {
        prob.fixed_f = Some(vec![0.0; prob.num_devices()]);
    }
    prob.fixed_tau0 = restr.fixed_tau0;
    prob.qos_min_bits = restr.qos_min_bits.clone();
    solve_ra(&prob)
}

/// Beams of `case` built from an energy-transfer and an offloading vector.
fn shaped(chan: &ChannelRealization, case: DibfCase, wpt: BeamVector, off: BeamVector) -> Result<Beams> {
    Ok(match case {
        DibfCase::Case1 => Beams::shared(wpt),
        DibfCase::Case2 => Beams::split(wpt, off),
        DibfCase::Case3 => Beams::per_slot(
            wpt,
            (0..chan.num_devices())
                .map(|k| case3_optimal_phases(chan, k))
                .collect::<Result<_>>()?,
        ),
    })
}

/// Converts beams of any case into a start for `case`.
fn reshape(chan: &ChannelRealization, case: DibfCase, b: &Beams) -> Result<Beams> {
    let off = b.offload.first().cloned().unwrap_or_else(|| b.wpt.clone());
    shaped(chan, case, b.wpt.clone(), off)
}

struct Run {
    beams: Beams,
    ra: RaSolution,
    iterations: usize,
    relaxed: f64,
}

fn run_from(
    params: &SystemParams,
    chan: &ChannelRealization,
    case: DibfCase,
    cfg: &AoConfig,
    restr: &Restrictions,
    start: Beams,
    restart: usize,
    trace: &mut Vec<TraceRow>,
) -> Result<Run> {
    let mut beams = start;
    let mut ra = ra_at(params, chan, &beams, case, restr)?;
    let mut obj = ra.objective_bits;
    let record = |trace: &mut Vec<TraceRow>, l, obj, ra: &RaSolution, bf| {
        if cfg.record_trace {
            trace.push(TraceRow {
                restart,
                iteration: l,
                objective_bits: obj,
                kkt_residual_ra: ra.kkt.residual,
                kkt_residual_bf: bf,
            });
        }
    };
    record(trace, 0, obj, &ra, 0.0);
    let initial = (beams.clone(), ra.clone());
    let mut state = ScaState::new(chan, &beams, case)?;
    let mut iterations = 0;
    if restr.fixed_beams.is_none() && chan.num_elements() > 0 {
        for l in 1..=cfg.max_iters {
            iterations = l;
            let prices = &ra.kkt.dual_energy;
            let mut step = match solve_bf_subproblem(&state, &ra.allocation, prices, params, case, MultipleAccess::Tdma) {
                Ok(bf) if bf.improved => {
                    let b = bf.state.beams()?;
                    let next = ra_at(params, chan, &b, case, restr)?;
                    (next.objective_bits > obj).then_some((bf.state, b, next, bf.kkt_residual))
                }
                Ok(_) | Err(Error::InfeasibleAnchor(_)) => None,
                Err(e) => return Err(e),
            };
            let gain_of = |o: f64| (o - obj) / obj.abs().max(f64::MIN_POSITIVE);
            if step.as_ref().is_none_or(|s| gain_of(s.2.objective_bits) < cfg.epsilon) {
                if let Some(p) = priced_step(params, chan, case, restr, &state, &ra, obj)? {
                    if step.as_ref().is_none_or(|s| p.2.objective_bits > s.2.objective_bits) {
                        step = Some(p);
                    }
                }
            }
            let Some((next_state, next_beams, next, residual)) = step else { break };
            let gain = gain_of(next.objective_bits);
            beams = next_beams;
            ra = next;
            obj = ra.objective_bits;
            state = next_state;
            record(trace, l, obj, &ra, residual);
            if gain < cfg.epsilon {
                break;
            }
        }
    }
    let relaxed = obj;
    let projected = beams.project_unit_modulus();
    let pra = ra_at(params, chan, &projected, case, restr)?;
    let (beams, ra) = if pra.objective_bits >= initial.1.objective_bits {
        (projected, pra)
    } else {
        initial
    };
    Ok(Run {
        beams,
        ra,
        iterations,
        relaxed,
    })
}

/// Priced beamforming step with backtracking toward the current vectors.
/// Returns the first blend whose re-solved allocation beats `obj`.
fn priced_step(
    params: &SystemParams,
    chan: &ChannelRealization,
    case: DibfCase,
    restr: &Restrictions,
    state: &ScaState,
    ra: &RaSolution,
    obj: f64,
) -> Result<Option<(ScaState, Beams, RaSolution, f64)>> {
    let bf = match solve_bf_priced(state, &ra.allocation, &ra.kkt.dual_energy, params, case, MultipleAccess::Tdma) {
        Ok(bf) if bf.improved => bf,
        Ok(_) | Err(Error::InfeasibleAnchor(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut alpha = 1.0;
    for _ in 0..PRICED_BACKTRACKS {
        let cand = state.blend(&bf.state, alpha);
        let b = cand.beams()?;
        let next = ra_at(params, chan, &b, case, restr)?;
        if next.objective_bits > obj {
            return Ok(Some((cand, b, next, bf.kkt_residual)));
        }
        alpha *= 0.5;
    }
    Ok(None)
}

const PRICED_BACKTRACKS: usize = 6;

/// TDMA alternating optimization for `case` with benchmark restrictions and
/// optional warm starts (any case's beams; they are reshaped).
pub fn solve_tdma(
    params: &SystemParams,
    chan: &ChannelRealization,
    case: DibfCase,
    cfg: &AoConfig,
    restr: &Restrictions,
    warm: &[Beams],
) -> Result<AoResult> {
    cfg.validate()?;
    params.validate()?;
    let n = chan.num_elements();
    let mut starts: Vec<Beams> = Vec::new();
    if let Some(b) = &restr.fixed_beams {
        starts.push(reshape(chan, case, b)?);
    } else {
        for b in warm {
            starts.push(reshape(chan, case, b)?);
        }
        let v = initial_beam(chan)?;
        starts.push(shaped(chan, case, v.clone(), v)?);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ chan.seed().rotate_left(32));
        for _ in 1..cfg.restarts.max(1) {
            let v = random_beam(n, &mut rng);
            starts.push(shaped(chan, case, v.clone(), v)?);
        }
    }
    let mut trace = Vec::new();
    let mut best: Option<Run> = None;
    let mut relaxed = f64::NEG_INFINITY;
    for (i, start) in starts.into_iter().enumerate() {
        let run = run_from(params, chan, case, cfg, restr, start, i, &mut trace)?;
        relaxed = relaxed.max(run.relaxed);
        // Strict improvement keeps the earliest start on ties.
        if best.as_ref().is_none_or(|b| run.ra.objective_bits > b.ra.objective_bits) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one start");
    let objective = objective_bits(params, chan, &run.beams, &run.ra.allocation, case, MultipleAccess::Tdma)?;
    Ok(AoResult {
        solution: Solution {
            objective_bits: objective,
            offload_active: run.ra.allocation.offload_active(),
            allocation: run.ra.allocation,
            beams: run.beams,
            case,
            scheme: MultipleAccess::Tdma,
            kkt: run.ra.kkt,
            iterations: run.iterations,
        },
        trace,
        relaxed_objective: relaxed,
    })
}

pub fn solve_case1_tdma(params: &SystemParams, chan: &ChannelRealization, cfg: &AoConfig) -> Result<Solution> {
    Ok(solve_tdma(params, chan, DibfCase::Case1, cfg, &Restrictions::default(), &[])?.solution)
}

pub fn solve_case2_tdma(params: &SystemParams, chan: &ChannelRealization, cfg: &AoConfig) -> Result<Solution> {
    Ok(solve_tdma(params, chan, DibfCase::Case2, cfg, &Restrictions::default(), &[])?.solution)
}

pub fn solve_case3_tdma(params: &SystemParams, chan: &ChannelRealization, cfg: &AoConfig) -> Result<Solution> {
    Ok(solve_tdma(params, chan, DibfCase::Case3, cfg, &Restrictions::default(), &[])?.solution)
}

/// NOMA Case 3 solution carrying the Case 2 NOMA allocation.
pub fn noma_case3_from_case2(
    params: &SystemParams,
    chan: &ChannelRealization,
    case2: &Solution,
) -> Result<Solution> {
    if case2.case != DibfCase::Case2 || case2.scheme != MultipleAccess::Noma {
        return Err(Error::Unsupported("expected a Case 2 NOMA solution".into()));
    }
    let beams = Beams::per_slot(case2.beams.wpt.clone(), vec![case2.beams.offload[0].clone()]);
    let objective = objective_bits(params, chan, &beams, &case2.allocation, DibfCase::Case3, MultipleAccess::Noma)?;
    Ok(Solution {
        objective_bits: objective,
        beams,
        case: DibfCase::Case3,
        ..case2.clone()
    })
}

pub fn solve_noma(
    params: &SystemParams,
    chan: &ChannelRealization,
    cfg: &AoConfig,
    case: DibfCase,
) -> Result<Solution> {
    match case {
        DibfCase::Case1 => noma_from_tdma(params, chan, &solve_case1_tdma(params, chan, cfg)?),
        DibfCase::Case2 => noma_from_tdma(params, chan, &solve_case2_tdma(params, chan, cfg)?),
        DibfCase::Case3 => {
            let c2 = noma_from_tdma(params, chan, &solve_case2_tdma(params, chan, cfg)?)?;
            noma_case3_from_case2(params, chan, &c2)
        }
    }
}

/// One relation of the inequality chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCheck {
    pub relation: String,
    pub left: f64,
    pub right: f64,
    /// Relative violation (0 when the relation holds exactly).
    pub violation: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub tdma: [f64; 3],
    pub noma: [f64; 3],
    pub checks: Vec<ChainCheck>,
}

impl ChainReport {
    pub fn holds(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

/// Relative tolerance of the chain equalities and inequalities.
pub const CHAIN_TOL: f64 = 1e-6;

/// Solves all six case / multiple-access combinations with shared warm starts
/// and checks
/// `R1_TDMA = R1_NOMA <= R2_TDMA = R2_NOMA = R3_NOMA <= R3_TDMA`.
pub fn verify_chain(params: &SystemParams, chan: &ChannelRealization, cfg: &AoConfig) -> Result<ChainReport> {
    let none = Restrictions::default();
    let t1 = solve_tdma(params, chan, DibfCase::Case1, cfg, &none, &[])?.solution;
    let t2 = solve_tdma(params, chan, DibfCase::Case2, cfg, &none, &[t1.beams.clone()])?.solution;
    let t3 = solve_tdma(params, chan, DibfCase::Case3, cfg, &none, &[t2.beams.clone()])?.solution;
    let n1 = noma_from_tdma(params, chan, &t1)?;
    let n2 = noma_from_tdma(params, chan, &t2)?;
    let n3 = noma_case3_from_case2(params, chan, &n2)?;
    let (r1t, r2t, r3t) = (t1.objective_bits, t2.objective_bits, t3.objective_bits);
    let (r1n, r2n, r3n) = (n1.objective_bits, n2.objective_bits, n3.objective_bits);
    let scale = |a: f64, b: f64| a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    let eq = |name: &str, a: f64, b: f64| {
        let v = (a - b).abs() / scale(a, b);
        ChainCheck {
            relation: name.into(),
            left: a,
            right: b,
            violation: v,
            holds: v <= CHAIN_TOL,
        }
    };
    let le = |name: &str, a: f64, b: f64| {
        let v = ((a - b) / scale(a, b)).max(0.0);
        ChainCheck {
            relation: name.into(),
            left: a,
            right: b,
            violation: v,
            holds: v <= CHAIN_TOL,
        }
    };
    Ok(ChainReport {
        tdma: [r1t, r2t, r3t],
        noma: [r1n, r2n, r3n],
        checks: vec![
            eq("R1_TDMA = R1_NOMA", r1t, r1n),
            le("R1_NOMA <= R2_TDMA", r1n, r2t),
            eq("R2_TDMA = R2_NOMA", r2t, r2n),
            eq("R2_NOMA = R3_NOMA", r2n, r3n),
            le("R3_NOMA <= R3_TDMA", r3n, r3t),
        ],
    })
}
