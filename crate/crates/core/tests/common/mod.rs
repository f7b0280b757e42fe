#![allow(dead_code)]

use std::collections::BTreeMap;

use qsrnet::blockpd::{block_ldl, block_order_permutation, centralized_gamma, interleaving_permutation, BlockPartition};
use qsrnet::linalg::{symmetrize, Mat};
use qsrnet::messenger::{messenger_matrix, CouplingScheme, FeedthroughRule, MessengerInputs, NeighborInputs};
use qsrnet::model::{
    ControllerSet, CouplingMap, NetworkModel, Subsystem, SubsystemDynamics, SupplyRate, SupplyTarget,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

pub fn rand_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let g = rand_mat(rng, n, n, 1.0);
    &g * g.transpose() + Mat::identity(n, n) * 0.5
}

pub fn rand_sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Mat {
    symmetrize(&rand_mat(rng, n, n, scale))
}

/// Random network with strict supplies (invertible `R`), random couplings
/// (each ordered pair present with probability one half) and random gains on
/// interacting pairs.
pub struct RandomNet {
    pub net: NetworkModel,
    pub supplies: Vec<SupplyRate>,
    pub gains: ControllerSet,
    pub p: Vec<Mat>,
}

pub fn random_network(rng: &mut ChaCha8Rng, nodes: usize) -> RandomNet {
    let mut subs = Vec::new();
    let mut supplies = Vec::new();
    for i in 0..nodes {
        let n = rng.gen_range(1..=3);
        let z = rng.gen_range(1..=2);
        let l = rng.gen_range(1..=2);
        let p = rng.gen_range(1..=2);
        let m = rng.gen_range(1..=2);
        let d = if rng.gen_bool(0.3) { Some(rand_mat(rng, m, l, 0.5)) } else { None };
        let dynamics = SubsystemDynamics::new(
            rand_mat(rng, n, n, 2.0),
            rand_mat(rng, n, z, 1.0),
            rand_mat(rng, n, l, 1.0),
            rand_mat(rng, n, p, 1.0),
            rand_mat(rng, m, n, 1.0),
            d,
        )
        .unwrap();
        subs.push(Subsystem::single(format!("n{i}"), dynamics));
        let r = rand_sym(rng, l, 1.0) + Mat::identity(l, l) * 2.0;
        supplies.push(SupplyRate::new(rand_sym(rng, m, 1.0), rand_mat(rng, m, l, 1.0), r).unwrap());
    }
    let mut h = CouplingMap::new();
    for i in 0..nodes {
        for j in 0..nodes {
            if rng.gen_bool(0.5) {
                let (zi, nj) = (subs[i].dims().z, subs[j].dims().n);
                h.insert(i, j, rand_mat(rng, zi, nj, 1.0));
            }
        }
    }
    let mut gains = ControllerSet::new();
    for i in 0..nodes {
        let inter = h.interacting(i);
        for j in 0..nodes {
            if (j == i || inter.contains(&j)) && rng.gen_bool(0.6) {
                let (pi, nj) = (subs[i].dims().p, subs[j].dims().n);
                gains.insert(i, j, rand_mat(rng, pi, nj, 1.0));
            }
        }
    }
    let p = subs.iter().map(|s| rand_spd(rng, s.dims().n)).collect();
    let targets = supplies.iter().cloned().map(SupplyTarget::Fixed).collect();
    let mut seq: Vec<usize> = (0..nodes).collect();
    for k in (1..nodes).rev() {
        let j = rng.gen_range(0..=k);
        seq.swap(k, j);
    }
    let net = NetworkModel::new(subs, h, targets).with_sequence(seq);
    RandomNet { net, supplies, gains, p }
}

/// Largest relative gap between the messenger matrices along the sequence
/// and the block LDL' pivots of the permuted centralized matrix.
pub fn pivot_gap(rn: &RandomNet) -> f64 {
    let nodes = rn.net.len();
    let net = &rn.net;
    let mut worst: f64 = 0.0;
    let g = centralized_gamma(net, &rn.gains, &rn.p, &vec![0; nodes], &rn.supplies, FeedthroughRule::Exact).unwrap();
    let ns: Vec<usize> = (0..nodes).map(|i| net.dims(i).n).collect();
    let ls: Vec<usize> = (0..nodes).map(|i| net.dims(i).l).collect();
    let e = interleaving_permutation(&ns, &ls).unwrap();
    let sizes: Vec<usize> = ns.iter().zip(&ls).map(|(a, b)| a + b).collect();
    let o = block_order_permutation(&sizes, &net.sequence).unwrap();
    let w = &o * &e * &g.gamma * e.transpose() * o.transpose();
    let part = BlockPartition::new(net.sequence.iter().map(|&k| sizes[k]).collect()).unwrap();
    let (pivots, _) = block_ldl(&w, &part, &[]).unwrap();

    let mut done: Vec<(usize, NeighborInputs, BTreeMap<usize, Mat>)> = Vec::new();
    for (pos, &i) in net.sequence.iter().enumerate() {
        let di = &net.subsystems[i].modes[0];
        let incoming: Vec<NeighborInputs> = done
            .iter()
            .map(|(j, nb, _)| {
                let dj = &net.subsystems[*j].modes[0];
                NeighborInputs::from_raw(
                    *j,
                    di.dims().n,
                    net.coupling.get(i, *j).cloned(),
                    net.coupling.get(*j, i),
                    &dj.b1,
                    &dj.b3,
                    rn.gains.get(i, *j).cloned(),
                    rn.gains.get(*j, i).cloned(),
                    nb.record.clone(),
                    false,
                    nb.fill.clone(),
                )
            })
            .collect();
        let out = messenger_matrix(&MessengerInputs {
            dynamics: di,
            supply: &rn.supplies[i],
            p: rn.p[i].clone(),
            h_self: net.coupling.get(i, i).cloned(),
            k_self: rn.gains.get(i, i).cloned(),
            incoming,
            rule: FeedthroughRule::Exact,
            scheme: CouplingScheme::ExactFill,
        })
        .unwrap();
        let piv = &pivots[pos];
        worst = worst.max((&out.record.m - piv).norm() / (1.0 + piv.norm()));
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
        done.push((i, own, out.fill));
    }
    worst
}
