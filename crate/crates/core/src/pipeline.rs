//! Sequential certification run as message exchange between subsystem
//! agents: distributed analysis, distributed synthesis, compositional
//! synthesis and the switched variant.
//!
//! Each agent owns its dynamics and its rows of the coupling map. Agents
//! exchange JSON-serialized [`Message`]s over in-process channels; a payload
//! carries only a messenger record, the fill rows and the products
//! `P_k B1_k H_ki`, `P_k B3_k`, never the sender's state matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::blockpd::{centralized_gamma, GammaCheck};
use crate::error::{Error, Result};
use crate::feasibility::{
    solve_step, FeasibilityOutcome, FeasibilityStatus, GainLevel, NeighborData, NodeProblem, StepOptions,
};
use crate::linalg::{is_zero, Mat};
use crate::messenger::{CouplingScheme, FeedthroughRule, COMBINATION_CAP};
use crate::model::{
    canonical_hash, ControllerSet, CouplingMap, MessengerRecord, NetworkModel, NewSubsystemFile, Subsystem,
    SupplyRate, SupplyTarget,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Analysis,
    Synthesis,
    Compositional,
    SwitchedSynthesis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepStatus {
    AnalysisFeasible,
    Synthesized,
    Infeasible,
    NumericalFailure,
    NotReached,
}

impl StepStatus {
    pub fn is_certified(self) -> bool {
        matches!(self, StepStatus::AnalysisFeasible | StepStatus::Synthesized)
    }
}

/// `F_{i,column}` row of a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillEntry {
    pub column: usize,
    #[serde(rename = "F", with = "crate::linalg::rows")]
    pub f: Mat,
}

/// Gain block `K_{row,column}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainEntry {
    pub row: usize,
    pub column: usize,
    #[serde(rename = "K", with = "crate::linalg::rows")]
    pub k: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub subsystem: usize,
    pub name: String,
    pub status: StepStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_level: Option<GainLevel>,
    /// Processed subsystems whose payload this step used.
    pub payloads_from: Vec<usize>,
    pub margin: Option<f64>,
    #[serde(default)]
    pub combination_margins: Vec<f64>,
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supply: Option<SupplyRate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<MessengerRecord>,
    pub structured: bool,
    #[serde(default)]
    pub fill: Vec<FillEntry>,
    /// Smallest eigenvalue of the centralized matrix of the processed
    /// subnetwork after this step, over all mode combinations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subnetwork_min_eig: Option<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl StepReport {
    fn pending(i: usize, name: &str) -> Self {
        Self {
            subsystem: i,
            name: name.to_string(),
            status: StepStatus::NotReached,
            gain_level: None,
            payloads_from: vec![],
            margin: None,
            combination_margins: vec![],
            eps: 0.0,
            gamma: None,
            supply: None,
            record: None,
            structured: false,
            fill: vec![],
            subnetwork_min_eig: None,
            detail: String::new(),
            wall_time: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    pub robust_eps: f64,
    pub feedthrough: FeedthroughRule,
    pub coupling: CouplingScheme,
    pub lambda: f64,
}

/// Outcome of a pipeline run. Serializes deterministically (no timings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub tool_version: String,
    pub network_hash: String,
    pub algorithm: Algorithm,
    pub certified: bool,
    pub sequence: Vec<usize>,
    /// Subsystems whose node problem was solved in this run.
    pub solved: Vec<usize>,
    pub settings: ReportSettings,
    /// One entry per subsystem, in sequence order.
    pub steps: Vec<StepReport>,
    pub gains: Vec<GainEntry>,
}

impl CertificationReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string() + "\n")?;
        Ok(())
    }

    pub fn step(&self, i: usize) -> Option<&StepReport> {
        self.steps.iter().find(|s| s.subsystem == i)
    }

    pub fn controllers(&self) -> ControllerSet {
        let mut k = ControllerSet::new();
        for g in &self.gains {
            k.insert(g.row, g.column, g.k.clone());
        }
        k
    }

    pub fn gain(&self, row: usize, column: usize) -> Option<&Mat> {
        self.gains.iter().find(|g| g.row == row && g.column == column).map(|g| &g.k)
    }

    /// Energy matrices indexed by subsystem.
    pub fn energy_blocks(&self, count: usize) -> Result<Vec<Mat>> {
        (0..count)
            .map(|i| {
                self.step(i)
                    .and_then(|s| s.record.as_ref())
                    .map(|r| r.p.clone())
                    .ok_or_else(|| Error::InvalidNetwork(format!("no certificate for subsystem {i}")))
            })
            .collect()
    }

    /// Resolved supply rates indexed by subsystem.
    pub fn supplies(&self, count: usize) -> Result<Vec<SupplyRate>> {
        (0..count)
            .map(|i| {
                self.step(i)
                    .and_then(|s| s.supply.clone())
                    .ok_or_else(|| Error::InvalidNetwork(format!("no supply for subsystem {i}")))
            })
            .collect()
    }

    pub fn gammas(&self) -> Vec<Option<f64>> {
        let mut v: Vec<_> = self.steps.iter().map(|s| (s.subsystem, s.gamma)).collect();
        v.sort_by_key(|x| x.0);
        v.into_iter().map(|x| x.1).collect()
    }
}

/// Pipeline settings.
#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub step: StepOptions,
    /// Check the processed subnetwork centrally after every step.
    pub check_each_step: bool,
}

impl PipelineOptions {
    fn settings(&self) -> ReportSettings {
        ReportSettings {
            eps: self.step.eps,
            robust_eps: self.step.robust_eps,
            feedthrough: self.step.rule,
            coupling: self.step.scheme,
            lambda: self.step.lambda,
        }
    }
}

// ---------------------------------------------------------------------------
// Messages and agents.

/// Products a neighbor needs from the sender for one of the sender's modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingProducts {
    #[serde(rename = "PB1H", with = "crate::linalg::rows")]
    pub pb1h: Mat,
    #[serde(rename = "PB3", with = "crate::linalg::rows")]
    pub pb3: Mat,
}

/// Data a processed subsystem sends to a later one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub from: usize,
    pub record: MessengerRecord,
    pub structured: bool,
    pub fill: Vec<FillEntry>,
    pub products: Vec<CouplingProducts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Message {
    Payload(Payload),
    /// Gain `K_{row,column}` designed by `column` for the receiver `row`.
    Gain(GainEntry),
}

struct Bus {
    senders: Vec<Sender<String>>,
}

impl Bus {
    fn send(&self, to: usize, msg: &Message) -> Result<()> {
        let text = serde_json::to_string(msg)?;
        self.senders[to].send(text).map_err(|_| Error::Numerical(format!("agent {to} is gone")))
    }
}

#[derive(Debug, Clone)]
struct Certified {
    record: MessengerRecord,
    supply: SupplyRate,
    structured: bool,
    fill: BTreeMap<usize, Mat>,
}

struct Agent {
    index: usize,
    subsystem: Subsystem,
    supply: SupplyTarget,
    /// `H_{i,j}` including `j = i`.
    coupling_in: BTreeMap<usize, Mat>,
    inbox: Receiver<String>,
    cert: Option<Certified>,
    /// `K_{i,j}`.
    gains: BTreeMap<usize, Mat>,
}

impl Agent {
    /// Payload for subsystem `to` with state dimension `n_to`.
    fn payload_for(&self, to: usize, n_to: usize) -> Result<Payload> {
        let cert = self.cert.as_ref().ok_or_else(|| Error::InvalidNetwork(format!("subsystem {} is not certified", self.index)))?;
        let p = &cert.record.p;
        let mut products: Vec<CouplingProducts> = Vec::new();
        for dy in &self.subsystem.modes {
            let pb1h = match self.coupling_in.get(&to) {
                Some(h) => p * &dy.b1 * h,
                None => Mat::zeros(p.nrows(), n_to),
            };
            let c = CouplingProducts { pb1h, pb3: p * &dy.b3 };
            if !products.contains(&c) {
                products.push(c);
            }
        }
        Ok(Payload {
            from: self.index,
            record: cert.record.clone(),
            structured: cert.structured,
            fill: cert.fill.iter().map(|(k, f)| FillEntry { column: *k, f: f.clone() }).collect(),
            products,
        })
    }

    fn drain(&mut self) -> Result<Vec<Payload>> {
        let mut payloads = Vec::new();
        while let Ok(text) = self.inbox.try_recv() {
            match serde_json::from_str::<Message>(&text)? {
                Message::Payload(p) => payloads.push(p),
                Message::Gain(g) => {
                    if g.row != self.index {
                        return Err(Error::InvalidNetwork(format!("gain K[{},{}] routed to {}", g.row, g.column, self.index)));
                    }
                    self.gains.insert(g.column, g.k);
                }
            }
        }
        Ok(payloads)
    }

    fn problem(&self, payloads: &[Payload], interacting: &BTreeSet<usize>) -> NodeProblem {
        let neighbors = payloads
            .iter()
            .map(|pl| NeighborData {
                index: pl.from,
                h_in: self.coupling_in.get(&pl.from).cloned(),
                variants: pl.products.iter().map(|c| (c.pb1h.clone(), c.pb3.clone())).collect(),
                record: pl.record.clone(),
                structured: pl.structured,
                fill: pl.fill.iter().map(|f| (f.column, f.f.clone())).collect(),
                interacting: interacting.contains(&pl.from),
            })
            .collect();
        NodeProblem {
            index: self.index,
            modes: self.subsystem.modes.clone(),
            supply: self.supply.clone(),
            h_self: self.coupling_in.get(&self.index).cloned(),
            neighbors,
        }
    }
}

struct Runner<'a> {
    net: &'a NetworkModel,
    opts: &'a PipelineOptions,
    agents: Vec<Agent>,
    bus: Bus,
    /// Announced fill columns per certified subsystem.
    fill_keys: BTreeMap<usize, BTreeSet<usize>>,
    processed: Vec<usize>,
}

fn make_agents(net: &NetworkModel) -> (Vec<Agent>, Bus) {
    let mut senders = Vec::new();
    let mut agents = Vec::new();
    for (i, sub) in net.subsystems.iter().enumerate() {
        let (tx, rx) = channel();
        senders.push(tx);
        let coupling_in = net.coupling.iter().filter(|((to, _), _)| *to == i).map(|((_, from), h)| (*from, h.clone())).collect();
        agents.push(Agent {
            index: i,
            subsystem: sub.clone(),
            supply: net.supplies[i].clone(),
            coupling_in,
            inbox: rx,
            cert: None,
            gains: BTreeMap::new(),
        });
    }
    (agents, Bus { senders })
}

impl<'a> Runner<'a> {
    fn new(net: &'a NetworkModel, opts: &'a PipelineOptions) -> Self {
        let (agents, bus) = make_agents(net);
        Self { net, opts, agents, bus, fill_keys: BTreeMap::new(), processed: vec![] }
    }

    /// Processed subsystems whose payload step `i` needs, in sequence order.
    fn relevant(&self, i: usize) -> Vec<usize> {
        let interacting = self.net.coupling.interacting(i);
        let mut rel: Vec<usize> = Vec::new();
        for &k in &self.processed {
            let via_fill = self.opts.step.scheme == CouplingScheme::ExactFill
                && self.fill_keys.get(&k).map(|keys| keys.iter().any(|m| rel.contains(m))).unwrap_or(false);
            if interacting.contains(&k) || via_fill {
                rel.push(k);
            }
        }
        rel
    }

    fn install(&mut self, i: usize, cert: Certified, gains: BTreeMap<usize, Mat>) {
        self.fill_keys.insert(i, cert.fill.iter().filter(|(_, f)| !is_zero(f)).map(|(k, _)| *k).collect());
        self.agents[i].cert = Some(cert);
        self.agents[i].gains = gains;
        self.processed.push(i);
    }

    fn step(&mut self, i: usize, design: bool) -> Result<StepReport> {
        let started = Instant::now();
        let rel = self.relevant(i);
        let n_i = self.net.dims(i).n;
        for &k in &rel {
            let pl = self.agents[k].payload_for(i, n_i)?;
            self.bus.send(i, &Message::Payload(pl))?;
        }
        let payloads = self.agents[i].drain()?;
        let interacting = self.net.coupling.interacting(i);
        let problem = self.agents[i].problem(&payloads, &interacting);
        // A free L2 level makes the plain step feasible for almost any
        // stable subsystem; the level itself is what design improves.
        let plain_first = !design || !matches!(problem.supply, SupplyTarget::L2Free);
        let mut outcome = if plain_first {
            solve_step(&problem, GainLevel::None, &self.opts.step)?
        } else {
            FeasibilityOutcome::failed(FeasibilityStatus::Infeasible, 0.0, GainLevel::None, "")
        };
        if design && !outcome.is_feasible() {
            outcome = solve_step(&problem, GainLevel::SelfOnly, &self.opts.step)?;
            if !outcome.is_feasible() && problem.neighbors.iter().any(|n| n.interacting) {
                outcome = solve_step(&problem, GainLevel::Full, &self.opts.step)?;
            }
        }
        let mut rep = StepReport::pending(i, &self.net.subsystems[i].name);
        rep.payloads_from = rel;
        rep.eps = outcome.eps;
        rep.detail = outcome.detail.clone();
        rep.combination_margins = outcome.combination_margins.clone();
        if outcome.margin.is_finite() {
            rep.margin = Some(outcome.margin);
        }
        match (outcome.status, outcome.certificate.clone()) {
            (FeasibilityStatus::Feasible, Some(cert)) => {
                rep.status = if outcome.level == GainLevel::None { StepStatus::AnalysisFeasible } else { StepStatus::Synthesized };
                rep.gain_level = Some(outcome.level);
                rep.gamma = cert.rho.map(f64::sqrt);
                rep.supply = Some(cert.supply.clone());
                rep.record = Some(cert.record.clone());
                rep.structured = cert.structured;
                rep.fill = cert.fill.iter().map(|(k, f)| FillEntry { column: *k, f: f.clone() }).collect();
                let mut own = BTreeMap::new();
                if outcome.level > GainLevel::None {
                    if let Some(k) = &cert.k_self {
                        if !is_zero(k) {
                            own.insert(i, k.clone());
                        }
                    }
                    for (j, k) in &cert.k_out {
                        if !is_zero(k) {
                            own.insert(*j, k.clone());
                        }
                    }
                    for (j, k) in &cert.k_back {
                        if !is_zero(k) {
                            self.bus.send(*j, &Message::Gain(GainEntry { row: *j, column: i, k: k.clone() }))?;
                        }
                    }
                }
                self.install(i, Certified { record: cert.record, supply: cert.supply, structured: cert.structured, fill: cert.fill }, own);
                for k in self.processed.clone() {
                    self.agents[k].drain()?;
                }
                if self.opts.check_each_step {
                    rep.subnetwork_min_eig = Some(self.subnetwork_check()?);
                }
            }
            (FeasibilityStatus::NumericalFailure, _) => rep.status = StepStatus::NumericalFailure,
            _ => rep.status = StepStatus::Infeasible,
        }
        rep.wall_time = started.elapsed();
        Ok(rep)
    }

    fn gains(&self) -> Vec<GainEntry> {
        let mut out = Vec::new();
        for a in &self.agents {
            for (j, k) in &a.gains {
                out.push(GainEntry { row: a.index, column: *j, k: k.clone() });
            }
        }
        out
    }

    /// Central check of the processed subnetwork, relative to its scale.
    fn subnetwork_check(&self) -> Result<f64> {
        let nodes: Vec<usize> = self.processed.clone();
        let (sub, map) = subnetwork(self.net, &nodes)?;
        let mut k = ControllerSet::new();
        for g in self.gains() {
            if let (Some(r), Some(c)) = (map.get(&g.row), map.get(&g.column)) {
                k.insert(*r, *c, g.k);
            }
        }
        let mut p = vec![Mat::zeros(0, 0); nodes.len()];
        let mut supplies = Vec::new();
        for (pos, &i) in nodes.iter().enumerate() {
            let cert = self.agents[i].cert.as_ref().expect("processed subsystem is certified");
            p[pos] = cert.record.p.clone();
            supplies.push(cert.supply.clone());
        }
        let checks = all_combinations(&sub, &k, &p, &supplies, self.opts.step.rule)?;
        Ok(checks.iter().map(|(_, c)| c.min_eig / (1.0 + c.gamma.norm())).fold(f64::INFINITY, f64::min))
    }
}

/// Restricts a network to `nodes` (renumbered in the given order).
pub fn subnetwork(net: &NetworkModel, nodes: &[usize]) -> Result<(NetworkModel, BTreeMap<usize, usize>)> {
    let map: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(pos, &i)| (i, pos)).collect();
    let mut coupling = CouplingMap::new();
    for (&(to, from), h) in net.coupling.iter() {
        if let (Some(t), Some(f)) = (map.get(&to), map.get(&from)) {
            coupling.insert(*t, *f, h.clone());
        }
    }
    let subs = nodes.iter().map(|&i| net.subsystems[i].clone()).collect();
    let supplies = nodes.iter().map(|&i| net.supplies[i].clone()).collect();
    let out = NetworkModel::new(subs, coupling, supplies);
    out.ensure_valid()?;
    Ok((out, map))
}

/// Central check for every mode combination of `net`.
pub fn all_combinations(
    net: &NetworkModel,
    gains: &ControllerSet,
    p: &[Mat],
    supplies: &[SupplyRate],
    rule: FeedthroughRule,
) -> Result<Vec<(Vec<usize>, GammaCheck)>> {
    let count = net.combination_count();
    if count > COMBINATION_CAP {
        return Err(Error::CombinationBudget { count, cap: COMBINATION_CAP });
    }
    let mut out = Vec::with_capacity(count);
    for c in 0..count {
        let mut rest = c;
        let modes: Vec<usize> = net
            .subsystems
            .iter()
            .map(|s| {
                let m = rest % s.mode_count();
                rest /= s.mode_count();
                m
            })
            .collect();
        let g = centralized_gamma(net, gains, p, &modes, supplies, rule)?;
        out.push((modes, g));
    }
    Ok(out)
}

/// Bridge tolerance for a centralized check: `-1e-6 (1 + ||Gamma||)`.
pub fn bridge_holds(check: &GammaCheck) -> bool {
    check.min_eig >= -1e-6 * (1.0 + check.gamma.norm())
}

/// Re-checks a certified report centrally over every mode combination.
pub fn verify_report(net: &NetworkModel, report: &CertificationReport) -> Result<Vec<(Vec<usize>, GammaCheck)>> {
    let p = report.energy_blocks(net.len())?;
    let supplies = report.supplies(net.len())?;
    all_combinations(net, &report.controllers(), &p, &supplies, report.settings.feedthrough)
}

fn finish(
    net: &NetworkModel,
    opts: &PipelineOptions,
    algorithm: Algorithm,
    steps: Vec<StepReport>,
    gains: Vec<GainEntry>,
    solved: Vec<usize>,
) -> CertificationReport {
    let certified = steps.iter().all(|s| s.status.is_certified());
    CertificationReport {
        tool_version: TOOL_VERSION.to_string(),
        network_hash: canonical_hash(net),
        algorithm,
        certified,
        sequence: net.sequence.clone(),
        solved,
        settings: opts.settings(),
        steps,
        gains,
    }
}

fn run_sequence(net: &NetworkModel, opts: &PipelineOptions, design: bool, algorithm: Algorithm) -> Result<CertificationReport> {
    net.ensure_valid()?;
    let mut runner = Runner::new(net, opts);
    let mut steps = Vec::new();
    let mut solved = Vec::new();
    let mut stopped = false;
    for &i in &net.sequence {
        if stopped {
            steps.push(StepReport::pending(i, &net.subsystems[i].name));
            continue;
        }
        let rep = runner.step(i, design)?;
        solved.push(i);
        if !rep.status.is_certified() {
            stopped = true;
        }
        steps.push(rep);
    }
    let gains = runner.gains();
    Ok(finish(net, opts, algorithm, steps, gains, solved))
}

/// Distributed analysis: every step looks for an energy matrix without
/// control; the first failure ends the run.
pub fn run_analysis(net: &NetworkModel, opts: &PipelineOptions) -> Result<CertificationReport> {
    run_sequence(net, opts, false, Algorithm::Analysis)
}

/// Distributed synthesis: each step first tries analysis with zero new
/// gains, then designs `K_ii`, and finally `K_ii`, `K_ik`, `K_ki` toward
/// processed neighbors. Earlier steps are never revisited.
pub fn run_synthesis(net: &NetworkModel, opts: &PipelineOptions) -> Result<CertificationReport> {
    run_sequence(net, opts, true, Algorithm::Synthesis)
}

/// Synthesis for networks with switched subsystems: one energy matrix and
/// one gain set per subsystem valid for every mode combination.
pub fn run_switched_synthesis(net: &NetworkModel, opts: &PipelineOptions) -> Result<CertificationReport> {
    run_sequence(net, opts, true, Algorithm::SwitchedSynthesis)
}

/// Appends a subsystem to a certified network, solving only its own step.
/// Returns the extended network and the extended report; every earlier
/// step and gain is copied unchanged.
pub fn run_compositional(
    base: &NetworkModel,
    report: &CertificationReport,
    addition: &NewSubsystemFile,
    opts: &PipelineOptions,
) -> Result<(NetworkModel, CertificationReport)> {
    let base = base.clone().with_sequence(report.sequence.clone());
    base.ensure_valid()?;
    if canonical_hash(&base) != report.network_hash {
        return Err(Error::Integrity("report does not belong to this network".into()));
    }
    if !report.certified {
        return Err(Error::InvalidNetwork("base report is not certified".into()));
    }
    if base.subsystems.iter().any(|s| s.name == addition.subsystem.name) {
        return Err(Error::InvalidNetwork(format!("subsystem `{}` is already present", addition.subsystem.name)));
    }
    let ext = base.extend(addition.subsystem.clone(), addition.coupling.clone(), addition.supply.clone())?;
    let new = base.len();
    let mut runner = Runner::new(&ext, opts);
    for &i in &report.sequence {
        let st = report.step(i).ok_or_else(|| Error::InvalidNetwork(format!("report has no step for {i}")))?;
        let record = st.record.clone().ok_or_else(|| Error::InvalidNetwork(format!("no certificate for subsystem {i}")))?;
        let supply = st.supply.clone().ok_or_else(|| Error::InvalidNetwork(format!("no supply for subsystem {i}")))?;
        let fill = st.fill.iter().map(|f| (f.column, f.f.clone())).collect();
        let gains = report.gains.iter().filter(|g| g.row == i).map(|g| (g.column, g.k.clone())).collect();
        runner.install(i, Certified { record, supply, structured: st.structured, fill }, gains);
    }
    let rep = runner.step(new, true)?;
    let mut steps = report.steps.clone();
    steps.push(rep);
    let mut gains = report.gains.clone();
    for g in runner.gains() {
        if g.row == new || g.column == new {
            gains.push(g);
        }
    }
    let mut out = finish(&ext, opts, Algorithm::Compositional, steps, gains, vec![new]);
    out.settings = report.settings.clone();
    Ok((ext, out))
}
