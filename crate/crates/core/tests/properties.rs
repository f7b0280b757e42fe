mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use qsrnet::blockpd::{
    block_cholesky, eps_pd, interleaving_permutation, sequential_positivity, BlockPartition,
};
use qsrnet::feasibility::{
    embedded_margin, solve_analysis_step, solve_synthesis_step, NeighborData, NodeProblem, StepOptions,
};
use qsrnet::fixtures;
use qsrnet::linalg::{min_eig, sym_eigenvalues, Mat};
use qsrnet::messenger::{messenger_matrix, CouplingScheme, FeedthroughRule, MessengerInputs, NeighborInputs};
use qsrnet::model::{supply_preset, Subsystem, SubsystemDynamics, SupplyRate, SupplyTarget};
use qsrnet::pipeline::{run_synthesis, PipelineOptions};
use qsrnet::sim::{audit_dissipation, integrate, Disturbance, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{rand_mat, rand_spd, rand_sym};

fn sizes_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=4, 1..=6).prop_filter("total at most 12", |s| s.iter().sum::<usize>() <= 12 && s.iter().sum::<usize>() >= 2)
}

fn shifted_gram(seed: u64, dim: usize, shift: f64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = rand_mat(&mut rng, dim, dim, 1.0);
    &g * g.transpose() / dim as f64 + Mat::identity(dim, dim) * shift
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn sequential_verdict_matches_eigenvalues(sizes in sizes_strategy(), seed in any::<u64>(), shift in -1.0f64..1.0) {
        let dim: usize = sizes.iter().sum();
        let w = shifted_gram(seed, dim, shift);
        let eps = eps_pd(&w);
        let lo = min_eig(&w);
        let tie = 1e-8 * (1.0 + w.norm());
        prop_assume!(lo < -tie || lo > eps + tie);
        let part = BlockPartition::new(sizes).unwrap();
        let verdict = sequential_positivity(&w, &part, &[]).unwrap();
        prop_assert_eq!(verdict.positive, lo > eps);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn interleaving_preserves_spectrum(ns in prop::collection::vec(1usize..=3, 1..=4), ls in prop::collection::vec(0usize..=2, 4), seed in any::<u64>()) {
        let ls = &ls[..ns.len()];
        let dim: usize = ns.iter().sum::<usize>() + ls.iter().sum::<usize>();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = rand_sym(&mut rng, dim, 1.0);
        let e = interleaving_permutation(&ns, ls).unwrap();
        let a = sym_eigenvalues(&g);
        let b = sym_eigenvalues(&(&e * &g * e.transpose()));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn cholesky_factor_is_block_lower_with_positive_diagonal(sizes in sizes_strategy(), seed in any::<u64>()) {
        let dim: usize = sizes.iter().sum();
        let w = shifted_gram(seed, dim, 0.1);
        let part = BlockPartition::new(sizes.clone()).unwrap();
        let l = block_cholesky(&w, &part).unwrap();
        for i in 0..dim {
            prop_assert!(l[(i, i)] > 0.0);
            for j in i + 1..dim {
                prop_assert_eq!(l[(i, j)], 0.0);
            }
        }
        prop_assert!((&l * l.transpose() - &w).norm() < 1e-10 * (1.0 + w.norm()));
    }

    #[test]
    fn presets_are_exactly_symmetric(gamma in 0.01f64..100.0, a in -10.0f64..10.0, width in 0.01f64..10.0, m in 1usize..4) {
        let rates = [
            supply_preset("passive", &[], m, m).unwrap(),
            supply_preset("l2", &[gamma], m, m + 1).unwrap(),
            supply_preset("sector", &[a, a + width], m, m).unwrap(),
        ];
        for r in rates {
            prop_assert!(r.q == r.q.transpose());
            prop_assert!(r.r == r.r.transpose());
        }
    }
}

fn random_dynamics(rng: &mut ChaCha8Rng, n: usize, stable: f64) -> SubsystemDynamics {
    let a = rand_mat(rng, n, n, 1.0) - Mat::identity(n, n) * stable;
    SubsystemDynamics::new(a, rand_mat(rng, n, 1, 1.0), rand_mat(rng, n, 1, 1.0), rand_mat(rng, n, n, 1.0), rand_mat(rng, 1, n, 1.0), None).unwrap()
}

fn random_strict_supply(rng: &mut ChaCha8Rng) -> SupplyRate {
    SupplyRate::new(rand_sym(rng, 1, 1.0), rand_mat(rng, 1, 1, 1.0), Mat::from_element(1, 1, rng.gen_range(0.2..3.0))).unwrap()
}

fn messenger(dy: &SubsystemDynamics, supply: &SupplyRate, p: &Mat, h_self: Option<Mat>, k_self: Option<Mat>, incoming: Vec<NeighborInputs>) -> qsrnet::messenger::MessengerOutput {
    messenger_matrix(&MessengerInputs {
        dynamics: dy,
        supply,
        p: p.clone(),
        h_self,
        k_self,
        incoming,
        rule: FeedthroughRule::Exact,
        scheme: CouplingScheme::ExactFill,
    })
    .unwrap()
}

#[test]
fn coupling_term_is_positive_semidefinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for _ in 0..400 {
        let rn = common::random_network(&mut rng, 3);
        let net = &rn.net;
        let mut done: Vec<(usize, NeighborInputs)> = Vec::new();
        for &i in &net.sequence {
            let di = &net.subsystems[i].modes[0];
            let incoming: Vec<NeighborInputs> = done
                .iter()
                .map(|(j, nb)| {
                    let dj = &net.subsystems[*j].modes[0];
                    NeighborInputs::from_raw(*j, di.dims().n, net.coupling.get(i, *j).cloned(), net.coupling.get(*j, i), &dj.b1, &dj.b3, rn.gains.get(i, *j).cloned(), rn.gains.get(*j, i).cloned(), nb.record.clone(), false, nb.fill.clone())
                })
                .collect();
            let had_neighbors = !incoming.is_empty();
            let out = messenger(di, &rn.supplies[i], &rn.p[i], net.coupling.get(i, i).cloned(), rn.gains.get(i, i).cloned(), incoming);
            if had_neighbors {
                let lo = min_eig(&out.mu_c);
                assert!(lo >= -1e-9 * (1.0 + out.mu_c.norm()), "coupling term min eig {lo}");
                checked += 1;
            }
            if min_eig(&out.record.m) <= 1e-6 {
                break;
            }
            let own = NeighborInputs {
                index: i,
                h_in: None,
                pb1h: Mat::zeros(0, 0),
                pb3: Mat::zeros(0, 0),
                k_ij: None,
                k_ji: None,
                record: out.record.clone(),
                structured: false,
                fill: out.fill.clone(),
            };
            done.push((i, own));
        }
    }
    assert!(checked >= 30, "only {checked} instances reached a coupled step");
}

/// Node 1 seeing a processed node 0; both data random.
fn coupled_instance(rng: &mut ChaCha8Rng) -> Option<(NodeProblem, Mat, Mat, SubsystemDynamics, SupplyRate, NeighborInputs)> {
    let (n0, n1) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
    let d0 = random_dynamics(rng, n0, 4.0);
    let s0 = random_strict_supply(rng);
    let p0 = rand_spd(rng, n0);
    let m0 = messenger(&d0, &s0, &p0, None, None, vec![]);
    if min_eig(&m0.record.m) <= 1e-3 {
        return None;
    }
    let stable = rng.gen_range(0.0..4.0);
    let d1 = random_dynamics(rng, n1, stable);
    let s1 = random_strict_supply(rng);
    let h10 = rand_mat(rng, 1, n0, 1.0);
    let h01 = rand_mat(rng, 1, n1, 1.0);
    let p1 = rand_spd(rng, n1) * rng.gen_range(0.05..1.0);
    let k1 = rand_mat(rng, n1, n1, 1.0);
    let nb = NeighborInputs::from_raw(0, n1, Some(h10.clone()), Some(&h01), &d0.b1, &d0.b3, None, None, m0.record.clone(), false, BTreeMap::new());
    let node = NodeProblem {
        index: 1,
        modes: vec![d1.clone()],
        supply: SupplyTarget::Fixed(s1.clone()),
        h_self: None,
        neighbors: vec![NeighborData {
            index: 0,
            h_in: Some(h10),
            variants: vec![(nb.pb1h.clone(), nb.pb3.clone())],
            record: m0.record,
            structured: false,
            fill: BTreeMap::new(),
            interacting: true,
        }],
    };
    Some((node, p1, k1, d1, s1, nb))
}

#[test]
fn embedded_lmi_sign_matches_messenger() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let opts = StepOptions::default();
    let (mut pos, mut neg) = (0, 0);
    let mut trials = 0;
    while pos + neg < 80 && trials < 2000 {
        trials += 1;
        let Some((node, p1, k1, d1, s1, nb)) = coupled_instance(&mut rng) else { continue };
        let m1 = messenger(&d1, &s1, &p1, None, Some(k1.clone()), vec![nb]);
        let lo = min_eig(&m1.record.m);
        if lo.abs() < 1e-6 * (1.0 + m1.record.m.norm()) {
            continue;
        }
        let t = embedded_margin(&node, &p1, Some(&k1), &opts).unwrap();
        assert_eq!(t > 0.0, lo > 0.0, "embedded {t:.3e} vs messenger {lo:.3e}");
        if lo > 0.0 {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    assert!(pos >= 10 && neg >= 10, "pos {pos} neg {neg}");
}

#[test]
fn larger_l2_levels_stay_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let opts = StepOptions::default();
    let mut checked = 0;
    for _ in 0..40 {
        let n = rng.gen_range(1..=3);
        let dy = random_dynamics(&mut rng, n, 2.5);
        let free = NodeProblem { index: 0, modes: vec![dy.clone()], supply: SupplyTarget::L2Free, h_self: None, neighbors: vec![] };
        let out = solve_analysis_step(&free, &opts).unwrap();
        let Some(rho) = out.certificate.as_ref().and_then(|c| c.rho) else { continue };
        let gamma = rho.sqrt();
        for factor in [1.0, 1.5, 4.0, 50.0] {
            let fixed = SupplyTarget::Fixed(supply_preset("l2", &[gamma * factor], 1, 1).unwrap());
            let node = NodeProblem { supply: fixed, ..free.clone() };
            assert!(solve_analysis_step(&node, &opts).unwrap().is_feasible(), "gamma {gamma} x {factor}");
        }
        checked += 1;
    }
    assert!(checked >= 20, "{checked}");
}

#[test]
fn fully_actuated_nodes_are_always_synthesizable() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let opts = StepOptions::default();
    for trial in 0..100 {
        let n = rng.gen_range(1..=3);
        let b3 = loop {
            let b = rand_mat(&mut rng, n, n, 1.0);
            if b.clone().svd(false, false).singular_values.min() > 0.2 {
                break b;
            }
        };
        let a = rand_mat(&mut rng, n, n, 3.0);
        let dy = SubsystemDynamics::new(a, rand_mat(&mut rng, n, 1, 1.0), rand_mat(&mut rng, n, 1, 1.0), b3, rand_mat(&mut rng, 1, n, 1.0), None).unwrap();
        let r = rng.gen_range(0.05..2.0);
        let supply = SupplyRate::new(rand_sym(&mut rng, 1, 2.0), rand_mat(&mut rng, 1, 1, 1.0), Mat::from_element(1, 1, r)).unwrap();
        let h_self = if rng.gen_bool(0.5) { Some(rand_mat(&mut rng, 1, n, 1.0)) } else { None };
        let node = NodeProblem { index: 0, modes: vec![dy], supply: SupplyTarget::Fixed(supply), h_self, neighbors: vec![] };
        let out = solve_synthesis_step(&node, &opts).unwrap();
        assert!(out.is_feasible(), "trial {trial}: {:?} {}", out.status, out.detail);
    }
}

#[test]
fn audit_converges_under_refinement() {
    let net = fixtures::t3_passive();
    let report = run_synthesis(&net, &PipelineOptions::default()).unwrap();
    let slack = |h: f64, stride: usize| {
        let sc = Scenario {
            comment: None,
            horizon: 2.0,
            step: h,
            x0: Some(vec![0.3, -0.2, 0.5, 0.1]),
            disturbance: Disturbance::Sinusoid { amplitude: 1.0, min_freq: 1.0, max_freq: 6.0 },
            seed: 9,
            initial_modes: None,
            switching: vec![],
            output_stride: 1,
        };
        let tr = integrate(&net, &report, &sc).unwrap();
        let a = audit_dissipation(&tr, stride);
        assert!(a.pass);
        a.min_slack
    };
    let (s1, s2, s3) = (slack(4e-3, 10), slack(2e-3, 20), slack(1e-3, 40));
    let estimate = (s1 - s2).abs() / 3.0;
    assert!((s2 - s3).abs() <= 10.0 * estimate + 1e-12, "{s1} {s2} {s3}");
}

#[test]
fn appending_keeps_existing_subsystems() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let base = common::random_network(&mut rng, 3).net;
        let n_new = rng.gen_range(1..=2);
        let sub = Subsystem::single("new", random_dynamics(&mut rng, n_new, 1.0));
        let to = rng.gen_range(0..3);
        let z_to = base.dims(to).z;
        let coupling = vec![(to, 3, rand_mat(&mut rng, z_to, n_new, 1.0)), (3, to, rand_mat(&mut rng, 1, base.dims(to).n, 1.0))];
        let ext = base.extend(sub, coupling, SupplyTarget::L2Free).unwrap();
        assert!(ext.validate().is_empty());
        assert_eq!(&ext.subsystems[..3], &base.subsystems[..]);
        assert_eq!(&ext.supplies[..3], &base.supplies[..]);
        for (&(i, j), h) in base.coupling.iter() {
            assert_eq!(ext.coupling.get(i, j), Some(h));
        }
    }
}
