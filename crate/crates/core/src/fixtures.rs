//! Reference networks: the four-subsystem numerical example, the three-unit
//! microgrid, and a few small helpers used by tests and examples.

use crate::linalg::Mat;
use crate::model::{
    supply_preset, CouplingMap, NetworkModel, Subsystem, SubsystemDynamics, SupplyTarget,
};

fn m(rows: usize, cols: usize, data: &[f64]) -> Mat {
    Mat::from_row_slice(rows, cols, data)
}

fn s(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

fn dynamics(a: Mat, b1: Mat, b2: Mat, b3: Mat, c: Mat) -> SubsystemDynamics {
    SubsystemDynamics::new(a, b1, b2, b3, c, None).expect("fixture dimensions")
}

fn passive(dim: usize) -> SupplyTarget {
    SupplyTarget::Fixed(supply_preset("passive", &[], dim, dim).expect("passive preset"))
}

pub fn sigma1() -> Subsystem {
    Subsystem::single(
        "sigma1",
        dynamics(
            m(2, 2, &[-9.0, 1.0, 5.0, 7.0]),
            m(2, 1, &[1.0, 1.0]),
            m(2, 1, &[1.0, 0.5]),
            Mat::identity(2, 2),
            m(1, 2, &[3.0, 2.0]),
        ),
    )
}

pub fn sigma2() -> Subsystem {
    Subsystem::single("sigma2", dynamics(s(3.0), s(1.0), s(1.0), s(1.0), s(1.0)))
}

pub fn sigma3() -> Subsystem {
    Subsystem::single("sigma3", dynamics(s(-1.0), s(1.0), s(1.0), s(1.0), s(1.0)))
}

pub fn sigma4() -> Subsystem {
    Subsystem::single(
        "sigma4",
        dynamics(
            m(2, 2, &[2.0, 1.0, 3.0, 0.8]),
            m(2, 1, &[1.2, 0.8]),
            m(2, 1, &[0.5, -0.2]),
            m(2, 1, &[1.2, 0.8]),
            m(1, 2, &[2.1, 0.6]),
        ),
    )
}

fn t3_coupling() -> CouplingMap {
    let mut h = CouplingMap::new();
    h.insert(0, 0, m(1, 2, &[0.5, -0.7]));
    h.insert(0, 1, s(0.1));
    h.insert(1, 0, m(1, 2, &[1.0, -0.5]));
    h.insert(1, 1, s(0.5));
    h.insert(1, 2, s(-0.1));
    h.insert(2, 1, s(-0.7));
    h.insert(2, 2, s(0.2));
    h
}

/// Three-subsystem example network with passive targets.
pub fn t3_passive() -> NetworkModel {
    NetworkModel::new(vec![sigma1(), sigma2(), sigma3()], t3_coupling(), vec![passive(1); 3])
}

/// Fourth subsystem with its coupling blocks (extended-network indices)
/// and passive target.
pub fn sigma4_parts() -> (Subsystem, Vec<(usize, usize, Mat)>, SupplyTarget) {
    let coupling = vec![
        (3, 0, m(1, 2, &[-0.9, -0.3])),
        (3, 1, s(-0.9)),
        (3, 3, m(1, 2, &[1.1, 0.4])),
        (0, 3, m(1, 2, &[0.2, 0.2])),
        (1, 3, m(1, 2, &[0.2, 0.2])),
    ];
    (sigma4(), coupling, passive(1))
}

/// Four-subsystem example network, written out in full.
pub fn t4_passive() -> NetworkModel {
    let mut h = t3_coupling();
    for (to, from, blk) in sigma4_parts().1 {
        h.insert(to, from, blk);
    }
    NetworkModel::new(vec![sigma1(), sigma2(), sigma3(), sigma4()], h, vec![passive(1); 4])
}

/// `dx = a x + v + w + u`, `y = x`.
pub fn stable_scalar(name: &str, a: f64) -> Subsystem {
    Subsystem::single(name, dynamics(s(a), s(1.0), s(1.0), s(1.0), s(1.0)))
}

/// `count` uncoupled stable scalar nodes with passive targets.
pub fn decoupled_passive(count: usize) -> NetworkModel {
    let subs = (0..count).map(|i| stable_scalar(&format!("node{i}"), -1.0 - i as f64)).collect();
    NetworkModel::new(subs, CouplingMap::new(), vec![passive(1); count])
}

/// One node with an unstable mode that the rank-one input cannot reach.
pub fn rank_deficient() -> NetworkModel {
    let sub = Subsystem::single(
        "uncontrollable",
        dynamics(
            m(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            m(2, 1, &[0.0, 0.0]),
            m(2, 1, &[1.0, 1.0]),
            m(2, 2, &[0.0, 0.0, 1.0, 1.0]),
            m(1, 2, &[1.0, 1.0]),
        ),
    );
    NetworkModel::new(vec![sub], CouplingMap::new(), vec![passive(1)])
}

/// Microgrid parameters per generation unit.
#[derive(Debug, Clone, Copy)]
pub struct Dgu {
    pub xr: f64,
    pub xl: f64,
    pub xc: f64,
    pub k: f64,
}

/// Line between two units.
#[derive(Debug, Clone, Copy)]
pub struct Line {
    pub xr: f64,
    pub xl: f64,
}

pub const OMEGA0: f64 = 60.0;

pub const DGUS: [Dgu; 3] = [
    Dgu { xr: 1.2, xl: 93.7, xc: 62.86, k: 0.0435 },
    Dgu { xr: 1.6, xl: 94.8, xc: 62.86, k: 0.0435 },
    Dgu { xr: 1.5, xl: 107.7, xc: 62.86, k: 0.0435 },
];

pub const LINE_12: Line = Line { xr: 1.1, xl: 600.0 };
pub const LINE_13: Line = Line { xr: 0.9, xl: 400.0 };

fn z2(line: Line) -> f64 {
    line.xr * line.xr + (OMEGA0 * line.xl).powi(2)
}

/// State matrices of one unit connected to the given lines.
pub fn dgu_dynamics(unit: Dgu, lines: &[Line]) -> SubsystemDynamics {
    let sr: f64 = lines.iter().map(|l| l.xr / z2(*l)).sum::<f64>() / unit.xc;
    let sl: f64 = lines.iter().map(|l| OMEGA0 * l.xl / z2(*l)).sum::<f64>() / unit.xc;
    let (w, xc, xl, xr, k) = (OMEGA0, unit.xc, unit.xl, unit.xr, unit.k);
    let a = m(
        4,
        4,
        &[
            -sr, w - sl, k / xc, 0.0, //
            -w + sl, -sr, 0.0, k / xc, //
            -k / xl, 0.0, -xr / xl, w, //
            0.0, -k / xl, -w, -xr / xl,
        ],
    );
    let mut b2 = Mat::zeros(4, 2);
    b2[(0, 0)] = -1.0 / xc;
    b2[(1, 1)] = -1.0 / xc;
    let mut b3 = Mat::zeros(4, 2);
    b3[(2, 0)] = 1.0 / xl;
    b3[(3, 1)] = 1.0 / xl;
    dynamics(a, Mat::identity(4, 4), b2, b3, Mat::identity(4, 4))
}

/// Coupling block seen by `unit` through `line`.
pub fn dgu_coupling(unit: Dgu, line: Line) -> Mat {
    let zz = z2(line);
    let (r, x) = (line.xr / zz / unit.xc, OMEGA0 * line.xl / zz / unit.xc);
    let mut h = Mat::zeros(4, 4);
    h[(0, 0)] = r;
    h[(0, 1)] = x;
    h[(1, 0)] = -x;
    h[(1, 1)] = r;
    h
}

/// Three-unit microgrid. Unit 0 switches between being connected to unit 1
/// only (mode 0) and to units 1 and 2 (mode 1). Targets are L2 with free gain.
pub fn microgrid() -> NetworkModel {
    let [d1, d2, d3] = DGUS;
    let u1 = Subsystem::switched(
        "dgu1",
        vec![dgu_dynamics(d1, &[LINE_12]), dgu_dynamics(d1, &[LINE_12, LINE_13])],
    )
    .expect("mode dimensions agree");
    let u2 = Subsystem::single("dgu2", dgu_dynamics(d2, &[LINE_12]));
    let u3 = Subsystem::single("dgu3", dgu_dynamics(d3, &[LINE_13]));
    let mut h = CouplingMap::new();
    h.insert(0, 1, dgu_coupling(d1, LINE_12));
    h.insert(0, 2, dgu_coupling(d1, LINE_13));
    h.insert(1, 0, dgu_coupling(d2, LINE_12));
    h.insert(2, 0, dgu_coupling(d3, LINE_13));
    NetworkModel::new(vec![u1, u2, u3], h, vec![SupplyTarget::L2Free; 3])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_networks_are_proper() {
        for net in [t3_passive(), t4_passive(), decoupled_passive(3), rank_deficient(), microgrid()] {
            assert!(net.validate().is_empty(), "{}", net.validate());
        }
    }

    #[test]
    fn microgrid_modes_differ_only_in_line_terms() {
        let net = microgrid();
        let a0 = &net.subsystems[0].modes[0].a;
        let a1 = &net.subsystems[0].modes[1].a;
        let d = a1 - a0;
        assert!(d.view((2, 0), (2, 4)).iter().all(|v| *v == 0.0));
        assert!(d.view((0, 0), (2, 2)).iter().any(|v| *v != 0.0));
        assert_eq!(net.combination_count(), 2);
    }

    #[test]
    fn microgrid_current_damping_is_negative() {
        let u = dgu_dynamics(DGUS[0], &[LINE_12]);
        assert!(u.a[(2, 2)] < 0.0 && u.a[(3, 3)] < 0.0);
        assert_eq!(u.a[(2, 2)], u.a[(3, 3)]);
    }
}
