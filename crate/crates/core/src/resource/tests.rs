use super::*;
use crate::model::{generate_channels, BeamVector, Solution};
use crate::single_user::solve_two_gain;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn positions(k: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| [rng.random_range(8.5..11.5), rng.random_range(-1.5..1.5), 0.0])
        .collect()
}

/// Gains of a random instance under a random reflection vector.
fn instance(k: usize, n: usize, seed: u64) -> (SystemParams, Vec<f64>, Vec<f64>) {
    let p = SystemParams::reference(n, positions(k, seed));
    let ch = generate_channels(&p, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let v0 = BeamVector::from_phases(&(0..n).map(|_| rng.random_range(0.0..6.3)).collect::<Vec<_>>());
    let v1 = BeamVector::from_phases(&(0..n).map(|_| rng.random_range(0.0..6.3)).collect::<Vec<_>>());
    let (w, o) = gains(&ch, &Beams::split(v0, v1), DibfCase::Case2).unwrap();
    (p, w, o)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[test]
fn single_device_matches_closed_form() {
    for seed in 0..6 {
        let (mut p, w, o) = instance(1, 4, seed);
        p.cycles_per_bit = [400.0, 2000.0, 1e5][seed as usize % 3];
        let prob = RaProblem::new(&p, w.clone(), o.clone(), MultipleAccess::Tdma);
        let sol = solve_ra(&prob).unwrap();
        let (alloc, _) = solve_two_gain(&p, w[0], o[0]).unwrap();
        let want = prob.objective(&alloc);
        assert!(rel(sol.objective_bits, want) < 1e-6, "{} vs {}", sol.objective_bits, want);
        assert!(sol.kkt.residual <= 1e-7, "residual {}", sol.kkt.residual);
    }
}

#[test]
fn useless_uplink_means_local_only() {
    let (p, w, _) = instance(3, 2, 1);
    let prob = RaProblem::new(&p, w.clone(), vec![0.0; 3], MultipleAccess::Tdma);
    let sol = solve_ra(&prob).unwrap();
    let a = &sol.allocation;
    assert_eq!(a.tau0, p.frame);
    assert!(a.energy.iter().all(|e| *e == 0.0));
    for d in 0..3 {
        let f = (p.eh_efficiency * p.hap_tx_power * w[d] / p.cpu_energy_coeff).cbrt();
        assert!(rel(a.freq[d], f) < 1e-12);
    }
}

#[test]
fn kkt_residual_and_feasibility_on_random_instances() {
    for seed in 0..20 {
        let k = 2 + (seed as usize % 4);
        let (mut p, w, o) = instance(k, 8, seed);
        p.cycles_per_bit = [400.0, 800.0, 2000.0][seed as usize % 3];
        for ma in [MultipleAccess::Tdma, MultipleAccess::Noma] {
            let prob = RaProblem::new(&p, w.clone(), o.clone(), ma);
            let sol = solve_ra(&prob).unwrap();
            assert!(sol.kkt.residual <= 1e-7, "seed {seed} {ma}: residual {}", sol.kkt.residual);
            let a = &sol.allocation;
            assert!(a.tau0 + a.tau1_total() <= p.frame * (1.0 + 1e-9));
            for d in 0..k {
                let budget = p.eh_efficiency * p.hap_tx_power * a.tau0 * w[d];
                let used = a.energy[d] + p.frame * p.cpu_energy_coeff * a.freq[d].powi(3);
                assert!(used <= budget * (1.0 + 1e-9));
                // Tight at the optimum.
                assert!(used >= budget * (1.0 - 1e-9));
            }
        }
    }
}

#[test]
fn noma_and_tdma_values_agree() {
    for seed in 0..10 {
        let (p, w, o) = instance(3, 6, 100 + seed);
        let t = solve_ra(&RaProblem::new(&p, w.clone(), o.clone(), MultipleAccess::Tdma)).unwrap();
        let n = solve_ra(&RaProblem::new(&p, w, o, MultipleAccess::Noma)).unwrap();
        assert!(rel(t.objective_bits, n.objective_bits) < 1e-6);
    }
}

#[test]
fn equal_snr_solver_agrees_with_barrier() {
    for seed in 0..10 {
        let (p, w, o) = instance(3, 6, 200 + seed);
        // Pin frequencies at a fraction of the free optimum.
        let free = solve_ra(&RaProblem::new(&p, w.clone(), o.clone(), MultipleAccess::Tdma)).unwrap();
        let f: Vec<f64> = free.allocation.freq.iter().map(|f| 0.7 * f).collect();
        let mut prob = RaProblem::new(&p, w.clone(), o.clone(), MultipleAccess::Tdma);
        prob.fixed_f = Some(f);
        let structured = solve_ra_equal_snr(&prob).unwrap();
        let barrier = solve_ra(&prob).unwrap();
        let vs = prob.objective(&structured);
        assert!(rel(vs, barrier.objective_bits) < 1e-6, "{vs} vs {}", barrier.objective_bits);
        assert!(certify(&prob, &structured).residual < 1e-7);

        let a = &structured;
        let snrs: Vec<f64> = (0..3)
            .filter(|&d| a.tau1[d] > 0.0)
            .map(|d| a.power[d] * o[d] / p.noise_power)
            .collect();
        assert!(!snrs.is_empty());
        for s in &snrs {
            assert!(rel(*s, snrs[0]) < 1e-8);
        }
        assert!((a.tau0 + a.tau1_total() - p.frame).abs() < 1e-12);
    }
}

#[test]
fn equal_snr_pins_tau0_for_demanding_cpus() {
    let (p, w, o) = instance(2, 4, 9);
    let eta_p = p.eh_efficiency * p.hap_tx_power;
    // Device 0 needs 90% of the frame to power its CPU.
    let f0 = (0.9 * eta_p * w[0] / p.cpu_energy_coeff).cbrt();
    let mut prob = RaProblem::new(&p, w, o, MultipleAccess::Tdma);
    prob.fixed_f = Some(vec![f0, 0.0]);
    let a = solve_ra_equal_snr(&prob).unwrap();
    assert!(a.tau0 >= 0.9 * p.frame * (1.0 - 1e-12));
    let b = solve_ra(&prob).unwrap();
    assert!(rel(prob.objective(&a), b.objective_bits) < 1e-6);
}

#[test]
fn symmetric_devices_share_time_equally() {
    let p = SystemParams::reference(0, vec![[10.0, 0.5, 0.0], [10.0, -0.5, 0.0]]);
    let mut prob = RaProblem::new(&p, vec![1e-6; 2], vec![1e-6; 2], MultipleAccess::Tdma);
    prob.fixed_f = Some(vec![1e7; 2]);
    let a = solve_ra_equal_snr(&prob).unwrap();
    assert!(a.tau1[0] > 0.0);
    assert!(rel(a.tau1[0], a.tau1[1]) < 1e-14);
}

#[test]
fn fixed_tau0_is_respected() {
    let (p, w, o) = instance(3, 4, 5);
    let mut prob = RaProblem::new(&p, w, o, MultipleAccess::Tdma);
    prob.fixed_tau0 = Some(0.5 * p.frame);
    let sol = solve_ra(&prob).unwrap();
    assert_eq!(sol.allocation.tau0, 0.5 * p.frame);
    assert!(sol.kkt.residual < 1e-7, "{}", sol.kkt.residual);
    let free = solve_ra(&RaProblem { fixed_tau0: None, ..prob.clone() }).unwrap();
    assert!(free.objective_bits >= sol.objective_bits * (1.0 - 1e-9));
}

#[test]
fn qos_requirements_are_met_or_rejected() {
    let (p, w, o) = instance(3, 4, 6);
    let base = solve_ra(&RaProblem::new(&p, w.clone(), o.clone(), MultipleAccess::Tdma)).unwrap();
    let prob0 = RaProblem::new(&p, w.clone(), o.clone(), MultipleAccess::Tdma);
    let bits: Vec<f64> = (0..3).map(|d| prob0.device_bits(&base.allocation, d)).collect();
    let weakest = (0..3).min_by(|&a, &b| bits[a].total_cmp(&bits[b])).unwrap();
    let mut req = vec![0.0; 3];
    req[weakest] = 1.5 * bits[weakest];
    let mut prob = prob0.clone();
    prob.qos_min_bits = Some(req.clone());
    let sol = solve_ra(&prob).unwrap();
    assert!(prob.device_bits(&sol.allocation, weakest) >= req[weakest] * (1.0 - 1e-9));
    assert!(sol.objective_bits <= base.objective_bits * (1.0 + 1e-9));

    let total: f64 = bits.iter().sum();
    prob.qos_min_bits = Some(vec![total; 3]);
    assert!(matches!(solve_ra(&prob), Err(Error::QosInfeasible(_))));
}

#[test]
fn maps_preserve_objective_and_feasibility() {
    use crate::model::check_feasibility;
    for seed in 0..5 {
        let p = SystemParams::reference(4, positions(3, seed));
        let ch = generate_channels(&p, seed).unwrap();
        let beams = Beams::split(BeamVector::ones(4), BeamVector::from_phases(&[0.3, 1.0, 2.0, -1.0]));
        let prob = RaProblem::from_beams(&p, &ch, &beams, DibfCase::Case2, MultipleAccess::Tdma).unwrap();
        let ra = solve_ra(&prob).unwrap();
        let tdma = Solution {
            objective_bits: ra.objective_bits,
            offload_active: ra.allocation.offload_active(),
            allocation: ra.allocation,
            beams,
            case: DibfCase::Case2,
            scheme: MultipleAccess::Tdma,
            kkt: ra.kkt,
            iterations: 0,
        };
        let noma = noma_from_tdma(&p, &ch, &tdma).unwrap();
        assert!(rel(noma.objective_bits, tdma.objective_bits) < 1e-8);
        let back = tdma_from_noma(&p, &ch, &noma).unwrap();
        assert!(rel(back.objective_bits, tdma.objective_bits) < 1e-8);
        for s in [&noma, &back] {
            let rep = check_feasibility(&p, &ch, &s.beams, &s.allocation, s.case, s.scheme, None)
                .unwrap();
            assert!(rep.is_feasible(), "{:?}", rep.violations);
        }
    }
}

#[test]
fn maps_are_identities_for_one_device() {
    let p = SystemParams::reference(2, positions(1, 3));
    let ch = generate_channels(&p, 3).unwrap();
    let beams = Beams::shared(BeamVector::ones(2));
    let prob = RaProblem::from_beams(&p, &ch, &beams, DibfCase::Case1, MultipleAccess::Tdma).unwrap();
    let ra = solve_ra(&prob).unwrap();
    let sol = Solution {
        objective_bits: ra.objective_bits,
        offload_active: ra.allocation.offload_active(),
        allocation: ra.allocation.clone(),
        beams,
        case: DibfCase::Case1,
        scheme: MultipleAccess::Tdma,
        kkt: ra.kkt,
        iterations: 0,
    };
    let n = noma_from_tdma(&p, &ch, &sol).unwrap();
    assert_eq!(n.allocation.tau1, ra.allocation.tau1);
    assert_eq!(n.allocation.power, ra.allocation.power);
    let t = tdma_from_noma(&p, &ch, &n).unwrap();
    assert_eq!(t.allocation.tau1, ra.allocation.tau1);
}

/// Moves time between the energy-transfer phase and one slot, then
/// re-derives energies; the result is feasible by construction.
fn perturbed(prob: &RaProblem<'_>, a: &ResourceAllocation, d: usize, factor: f64, what: u8) -> ResourceAllocation {
    let p = prob.params;
    let mut tau = a.tau1.clone();
    let mut e = a.energy.clone();
    let mut f = a.freq.clone();
    match what {
        0 => tau[d] *= factor,
        1 => e[d] *= factor,
        _ => f[d] *= factor,
    }
    let tau0 = p.frame - tau.iter().sum::<f64>();
    for j in 0..a.num_devices() {
        let budget = p.eh_efficiency * p.hap_tx_power * tau0 * prob.gains_wpt[j];
        let local = p.frame * p.cpu_energy_coeff * f[j].powi(3);
        if e[j] + local > budget {
            // Shrink the other use of energy to stay feasible.
            if what == 2 && j == d {
                e[j] = (budget - local).max(0.0);
                if budget < local {
                    f[j] = (budget / (p.frame * p.cpu_energy_coeff)).cbrt();
                    e[j] = 0.0;
                }
            } else {
                f[j] = ((budget - e[j]).max(0.0) / (p.frame * p.cpu_energy_coeff)).cbrt();
                e[j] = e[j].min(budget);
            }
        }
    }
    ResourceAllocation::tdma(tau0, tau, e, f).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn no_improving_perturbation(seed in 0u64..10_000, d in 0usize..3, what in 0u8..3, up in any::<bool>()) {
        let (p, w, o) = instance(3, 4, seed);
        let prob = RaProblem::new(&p, w, o, MultipleAccess::Tdma);
        let sol = solve_ra(&prob).unwrap();
        let factor = if up { 1.01 } else { 0.99 };
        let alt = perturbed(&prob, &sol.allocation, d, factor, what);
        prop_assert!(prob.objective(&alt) <= sol.objective_bits * (1.0 + 1e-9));
    }

    #[test]
    fn concave_along_feasible_segments(seed in 0u64..10_000, d in 0usize..3) {
        let (p, w, o) = instance(3, 4, seed);
        let prob = RaProblem::new(&p, w, o, MultipleAccess::Tdma);
        let sol = solve_ra(&prob).unwrap();
        let x = perturbed(&prob, &sol.allocation, d, 0.8, 0);
        let y = perturbed(&prob, &sol.allocation, (d + 1) % 3, 0.7, 2);
        let mid = ResourceAllocation::tdma(
            0.5 * (x.tau0 + y.tau0),
            x.tau1.iter().zip(&y.tau1).map(|(a, b)| 0.5 * (a + b)).collect(),
            x.energy.iter().zip(&y.energy).map(|(a, b)| 0.5 * (a + b)).collect(),
            x.freq.iter().zip(&y.freq).map(|(a, b)| 0.5 * (a + b)).collect(),
        ).unwrap();
        let lhs = prob.objective(&mid);
        let rhs = 0.5 * (prob.objective(&x) + prob.objective(&y));
        prop_assert!(lhs >= rhs * (1.0 - 1e-12));
    }

    #[test]
    fn better_gains_never_hurt(seed in 0u64..10_000, scale in 1.0f64..3.0) {
        let (p, w, o) = instance(3, 4, seed);
        let base = solve_ra(&RaProblem::new(&p, w.clone(), o.clone(), MultipleAccess::Tdma)).unwrap();
        let w2: Vec<f64> = w.iter().map(|g| g * scale).collect();
        let o2: Vec<f64> = o.iter().map(|g| g * scale).collect();
        let up = solve_ra(&RaProblem::new(&p, w2, o2, MultipleAccess::Tdma)).unwrap();
        prop_assert!(up.objective_bits >= base.objective_bits * (1.0 - 1e-9));
    }
}
