//! Critical-value estimators.
//!
//! s* and s_A are limits that no finite computation reaches. Both are
//! replaced by a trend classification of finite sums along an explicit
//! schedule, wrapped in a bisection on s. Every report names the schedule
//! and thresholds it used, and a run whose trends stay ambiguous ends with a
//! bracket and no estimate.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::DimsError;
use crate::svf::log_phi_from_log_sv;
use crate::symbolic::{
    count_expansions, cut_index, cutset_family_tree, log_sum_pairwise, CutSetFamily, Node, Tree,
    DEFAULT_NODE_BUDGET,
};
use crate::system::{LevelSpec, Schedule, SystemSpec};

pub const THETA_LOW: f64 = 1e-3;
pub const THETA_HIGH: f64 = 1e3;
pub const DEFAULT_TOL: f64 = 0.01;

/// Schedule length of the automatic ε schedule and its span: ε runs over
/// `exp(-x)` for x between x_max/16 and x_max, evenly in log x.
const AUTO_EPS_COUNT: usize = 24;
const AUTO_EPS_PER_OCTAVE: f64 = 6.0;
/// Traversals that are a single chain stop at this depth.
const CHAIN_DEPTH_CAP: u64 = 1 << 14;
/// Horizon cap for the net-measure DP.
const DP_DEPTH_CAP: usize = 4096;
const PRESSURE_CHAIN_DEPTH: usize = 256;
const MAX_PROBES: usize = 80;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(rename = "s_star")]
    SStar,
    #[serde(rename = "s_A")]
    SA,
    #[serde(rename = "falconer")]
    Falconer,
    #[serde(rename = "moran_lower")]
    MoranLower,
    #[serde(rename = "moran_upper")]
    MoranUpper,
    #[serde(rename = "boxdim_slope")]
    BoxdimSlope,
}

/// Position of a probed s relative to the critical value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Below,
    Above,
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceEntry {
    Probe {
        s: f64,
        verdict: Verdict,
        tail_max: Option<f64>,
        tail_min: Option<f64>,
        slope: Option<f64>,
    },
    Point {
        k: usize,
        value: f64,
    },
    Scale {
        epsilon: f64,
        count: u64,
    },
}

/// An ε schedule used for branch index m, as ln(1/ε_j).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSchedule {
    pub m: usize,
    pub log_inv_eps: Vec<f64>,
}

/// Everything that determines the numbers in a report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleInfo {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_schedules: Option<Vec<EpsSchedule>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_pairs: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_budget: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub quantity: Quantity,
    /// Absent when the trend stayed indeterminate.
    pub estimate: Option<f64>,
    pub bracket: (f64, f64),
    pub schedule: ScheduleInfo,
    pub flags: Vec<String>,
    pub trace: Vec<TraceEntry>,
    /// min{estimate, d}, for quantities that can exceed the ambient dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension_bound: Option<f64>,
    /// Regression details for slope estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<LineFit>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub const FLAG_BUDGET: &str = "budget_exhausted";
pub const FLAG_INDETERMINATE: &str = "indeterminate_trend";
pub const FLAG_MONOTONICITY: &str = "monotonicity_violated";
pub const FLAG_UPPER_EXTENDED: &str = "upper_bound_extended";
pub const FLAG_UPPER_UNVERIFIED: &str = "upper_bound_unverified";

impl DimensionReport {
    /// The estimate, or IndeterminateTrend carrying the bracket.
    pub fn value(&self) -> Result<f64, DimsError> {
        self.estimate.ok_or(DimsError::IndeterminateTrend {
            lo: self.bracket.0,
            hi: self.bracket.1,
        })
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    fn flag(&mut self, flag: &str) {
        if !self.has_flag(flag) {
            self.flags.push(flag.to_string());
        }
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

// ---------------------------------------------------------------------------
// Trend classification

/// Summary of the tail of a log-sum sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailStats {
    pub max: f64,
    pub min: f64,
    pub slope: f64,
    pub first: f64,
    pub last: f64,
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Which tail statistic must clear θ_high for a "below" verdict: the
/// maximum matches a limsup, the minimum a quantity that must stay large.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrowthTest {
    TailMax,
    TailMin,
}

/// Classifies ln-sums `ys` along the schedule positions `xs` using the last
/// half of the schedule.
///
/// Below: the chosen tail statistic exceeds ln θ_high, or the tail trends up
/// (positive least-squares slope and last > first). Above: the tail maximum
/// is under ln θ_low and not rising, or the tail trends down.
pub fn classify(xs: &[f64], ys: &[f64], growth: GrowthTest) -> (Verdict, Option<TailStats>) {
    assert_eq!(xs.len(), ys.len());
    let n = ys.len();
    let start = if n >= 4 { n / 2 } else { 0 };
    let (tx, ty) = (&xs[start..], &ys[start..]);
    if ty.is_empty() || ty.iter().any(|v| v.is_nan()) {
        return (Verdict::Indeterminate, None);
    }
    if ty.iter().any(|v| v.is_infinite()) {
        return (Verdict::Indeterminate, None);
    }
    let stats = TailStats {
        max: ty.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        min: ty.iter().cloned().fold(f64::INFINITY, f64::min),
        slope: if ty.len() >= 2 { ls_slope(tx, ty) } else { 0.0 },
        first: ty[0],
        last: ty[ty.len() - 1],
    };
    let grow_stat = match growth {
        GrowthTest::TailMax => stats.max,
        GrowthTest::TailMin => stats.min,
    };
    let verdict = if grow_stat > THETA_HIGH.ln() {
        Verdict::Below
    } else if stats.max < THETA_LOW.ln() && stats.slope <= 0.0 {
        Verdict::Above
    } else if stats.slope > 0.0 && stats.last > stats.first {
        Verdict::Below
    } else if stats.slope < 0.0 && stats.last < stats.first {
        Verdict::Above
    } else {
        Verdict::Indeterminate
    };
    (verdict, Some(stats))
}

// ---------------------------------------------------------------------------
// Bisection

struct Probe {
    verdict: Verdict,
    stats: Option<TailStats>,
}

struct BisectOutcome {
    estimate: Option<f64>,
    bracket: (f64, f64),
    trace: Vec<TraceEntry>,
    flags: Vec<&'static str>,
}

/// Bisection on [lo, hi] with lo assumed below the critical value. The upper
/// end is probed first and doubled while it still classifies below.
///
/// Indeterminate probes split the bracket into an inner indeterminate zone;
/// the driver then narrows only the two outer gaps. The result is an
/// estimate when the confirmed bracket ends up within `tol`.
fn bisect<F>(lo: f64, hi: f64, tol: f64, mut probe: F) -> Result<BisectOutcome, DimsError>
where
    F: FnMut(f64) -> Result<Probe, DimsError>,
{
    let mut trace = Vec::new();
    let mut flags = Vec::new();
    let record = |s: f64, p: &Probe, trace: &mut Vec<TraceEntry>| {
        trace.push(TraceEntry::Probe {
            s,
            verdict: p.verdict,
            tail_max: p.stats.and_then(|t| finite(t.max)),
            tail_min: p.stats.and_then(|t| finite(t.min)),
            slope: p.stats.and_then(|t| finite(t.slope)),
        });
    };

    let mut lo = lo;
    let mut hi = hi;
    let mut max_below = f64::NEG_INFINITY;
    let mut min_above = f64::INFINITY;
    let mut violated = false;
    let mut indet: Vec<f64> = Vec::new();
    let mut probes = 0usize;

    // Upper end.
    loop {
        let p = probe(hi)?;
        probes += 1;
        record(hi, &p, &mut trace);
        match p.verdict {
            Verdict::Above => {
                min_above = hi;
                break;
            }
            Verdict::Below if probes < 8 => {
                max_below = hi;
                lo = hi;
                hi *= 2.0;
                if !flags.contains(&FLAG_UPPER_EXTENDED) {
                    flags.push(FLAG_UPPER_EXTENDED);
                }
            }
            _ => {
                flags.push(FLAG_UPPER_UNVERIFIED);
                break;
            }
        }
    }

    while probes < MAX_PROBES {
        indet.retain(|s| *s > lo && *s < hi);
        indet.sort_by(f64::total_cmp);
        let (a, b) = match (indet.first(), indet.last()) {
            (Some(first), Some(last)) => {
                if first - lo >= hi - last {
                    (lo, *first)
                } else {
                    (*last, hi)
                }
            }
            _ => (lo, hi),
        };
        let done = if indet.is_empty() {
            hi - lo <= tol
        } else {
            b - a <= tol / 2.0
        };
        if done {
            break;
        }
        let s = 0.5 * (a + b);
        let p = probe(s)?;
        probes += 1;
        record(s, &p, &mut trace);
        match p.verdict {
            Verdict::Below => {
                if s >= min_above {
                    violated = true;
                }
                max_below = max_below.max(s);
                lo = lo.max(s);
            }
            Verdict::Above => {
                if s <= max_below {
                    violated = true;
                }
                min_above = min_above.min(s);
                hi = hi.min(s);
            }
            Verdict::Indeterminate => indet.push(s),
        }
        if violated {
            break;
        }
    }

    if violated {
        flags.push(FLAG_MONOTONICITY);
        flags.push(FLAG_INDETERMINATE);
        let lo2 = lo.min(hi).min(min_above);
        let hi2 = hi.max(lo).max(max_below);
        return Ok(BisectOutcome {
            estimate: None,
            bracket: (lo2, hi2),
            trace,
            flags,
        });
    }
    let estimate = if hi - lo <= tol {
        Some(0.5 * (lo + hi))
    } else {
        flags.push(FLAG_INDETERMINATE);
        None
    };
    Ok(BisectOutcome {
        estimate,
        bracket: (lo, hi),
        trace,
        flags,
    })
}

// ---------------------------------------------------------------------------
// s*

#[derive(Clone, Debug, PartialEq)]
pub struct SstarOptions {
    pub tol: f64,
    /// Explicit ε schedule; `None` derives one per branch index from the budget.
    pub eps_schedule: Option<Vec<f64>>,
    pub node_budget: u64,
}

impl Default for SstarOptions {
    fn default() -> Self {
        SstarOptions {
            tol: DEFAULT_TOL,
            eps_schedule: None,
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }
}

/// Automatic ε schedule for branch index m: finds the largest x = ln(1/ε)
/// whose traversal stays within a quarter of the budget (or the chain depth
/// cap) and spreads the schedule geometrically below it.
/// Returns ln ε_j.
pub(crate) fn auto_eps_schedule(tree: &Tree, m: usize, node_budget: u64) -> (Vec<f64>, bool) {
    let mut limit = (node_budget / 4).max(16);
    if tree.is_chain() {
        limit = limit.min(CHAIN_DEPTH_CAP);
    }
    let count = |x: f64| count_expansions(tree, m, -x, limit);
    // Doubling brackets x_max; tree sizes grow roughly exponentially in x,
    // so the last two counts extrapolate to the budget, checked once.
    let mut starved = false;
    let mut lo = (0.0, 1u64);
    let x_max;
    match count(1.0) {
        None => {
            starved = true;
            x_max = 1.0;
        }
        Some(c) => {
            let mut hi = (1.0, c);
            let mut fail = f64::INFINITY;
            while hi.0 < 1e6 {
                match count(2.0 * hi.0) {
                    Some(c2) => {
                        lo = hi;
                        hi = (2.0 * hi.0, c2);
                    }
                    None => {
                        fail = 2.0 * hi.0;
                        break;
                    }
                }
            }
            let (x1, c1) = hi;
            let rate = ((c1.max(1) as f64) / (lo.1.max(1) as f64)).ln() / (x1 - lo.0);
            let target = if rate > 0.0 {
                x1 + 0.95 * ((limit as f64) / c1.max(1) as f64).ln() / rate
            } else {
                fail
            };
            let target = target.min(fail).min(1e6);
            x_max = if tree.is_chain() {
                // Chains are cheap to count: bisect to the cap exactly.
                let (mut a, mut b) = (x1, fail.min(1e6));
                for _ in 0..12 {
                    let mid = 0.5 * (a + b);
                    if count(mid).is_some() {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                a
            } else if target > x1 && count(target).is_some() {
                target
            } else {
                x1
            };
        }
    }
    let eps = (1..=AUTO_EPS_COUNT)
        .map(|j| -x_max * 2f64.powf(-((AUTO_EPS_COUNT - j) as f64) / AUTO_EPS_PER_OCTAVE))
        .collect();
    (eps, starved)
}

fn check_tol(tol: f64) -> Result<(), DimsError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(DimsError::InvalidArgument(format!(
            "tol must be positive, got {tol}"
        )));
    }
    Ok(())
}

/// s* = inf{s : limsup_{ε→0} Σ_{Σ*(s,ε)} φ^s(T_u) < ∞}, classified on the
/// tail maximum of the cut-set sums.
pub fn estimate_sstar(
    spec: &SystemSpec,
    opts: &SstarOptions,
) -> Result<DimensionReport, DimsError> {
    check_tol(opts.tol)?;
    if let Some(eps) = &opts.eps_schedule {
        let ok = !eps.is_empty()
            && eps.iter().all(|e| *e > 0.0 && *e < 1.0)
            && eps.windows(2).all(|w| w[0] > w[1]);
        if !ok {
            return Err(DimsError::InvalidArgument(
                "epsilon schedule must be strictly decreasing in (0, 1)".into(),
            ));
        }
    }
    let tree = Tree::new(spec);
    let d = spec.dim();
    let mut families: Vec<Option<CutSetFamily>> = vec![None; d + 1];
    let mut flags: Vec<String> = Vec::new();

    let outcome = bisect(0.0, d as f64 + 1.0, opts.tol, |s| {
        let m = cut_index(s, d);
        if families[m].is_none() {
            let eps = match &opts.eps_schedule {
                Some(e) => e.iter().map(|v| v.ln()).collect(),
                None => {
                    let (e, starved) = auto_eps_schedule(&tree, m, opts.node_budget);
                    if starved && !flags.iter().any(|f| f == FLAG_BUDGET) {
                        flags.push(FLAG_BUDGET.to_string());
                    }
                    e
                }
            };
            let fam = cutset_family_tree(&tree, m, &eps, opts.node_budget);
            if fam.truncated() && !flags.iter().any(|f| f == FLAG_BUDGET) {
                flags.push(FLAG_BUDGET.to_string());
            }
            families[m] = Some(fam);
        }
        let fam = families[m].as_ref().unwrap();
        let xs: Vec<f64> = fam.log_epsilons().iter().map(|e| -e).collect();
        let ys = fam.log_sums(s);
        let (verdict, stats) = classify(&xs, &ys, GrowthTest::TailMax);
        Ok(Probe { verdict, stats })
    })?;

    let eps_schedules = families
        .iter()
        .flatten()
        .map(|f| EpsSchedule {
            m: f.m(),
            log_inv_eps: f.log_epsilons().iter().map(|e| -e).collect(),
        })
        .collect();
    let mut report = DimensionReport {
        quantity: Quantity::SStar,
        estimate: outcome.estimate,
        bracket: outcome.bracket,
        schedule: ScheduleInfo {
            kind: "epsilon".into(),
            eps_schedules: Some(eps_schedules),
            theta_low: Some(THETA_LOW),
            theta_high: Some(THETA_HIGH),
            tol: Some(opts.tol),
            node_budget: Some(opts.node_budget),
            ..Default::default()
        },
        flags: Vec::new(),
        trace: outcome.trace,
        dimension_bound: outcome.estimate.map(|e| e.min(d as f64)),
        fit: None,
    };
    for f in flags.iter().map(String::as_str).chain(outcome.flags) {
        report.flag(f);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Net measure

/// M^s_{(k)} truncated at horizon K: the cheapest cover of Σ^∞ by cylinders
/// with depths in [k, K].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetMeasureTable {
    pub s: f64,
    pub k: usize,
    pub horizon: usize,
    pub value: f64,
    pub log_value: f64,
}

/// The compressed tree to a fixed depth in preorder, with per-node singular
/// values, so that the DP can be re-run for many s.
pub(crate) struct DpTree {
    d: usize,
    depth: Vec<u32>,
    children: Vec<u32>,
    log_count: Vec<f64>,
    log_sv: Vec<f64>,
}

impl DpTree {
    pub(crate) fn build(tree: &Tree, max_depth: usize) -> DpTree {
        let d = tree.dim();
        let mut out = DpTree {
            d,
            depth: Vec::new(),
            children: Vec::new(),
            log_count: Vec::new(),
            log_sv: Vec::new(),
        };
        let mut stack = vec![(Node::root(d), 0.0)];
        while let Some((node, lc)) = stack.pop() {
            let groups = if node.depth < max_depth {
                tree.groups(node.depth + 1)
            } else {
                &[]
            };
            out.depth.push(node.depth as u32);
            out.children.push(groups.len() as u32);
            out.log_count.push(lc);
            out.log_sv.extend_from_slice(&node.log_sv);
            for g in groups.iter().rev() {
                stack.push((node.child(g, false), g.log_count));
            }
        }
        out
    }

    /// ln M(k_p, K_p) for each pair.
    pub(crate) fn eval(&self, s: f64, pairs: &[(usize, usize)]) -> Vec<f64> {
        type V = SmallVec<[f64; 16]>;
        let mut horizons: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        horizons.sort_unstable();
        horizons.dedup();
        let pair_h: Vec<usize> = pairs
            .iter()
            .map(|p| horizons.binary_search(&p.1).unwrap())
            .collect();
        let (nh, np) = (horizons.len(), pairs.len());
        let mut stack: Vec<(f64, V, V)> = Vec::new();
        let mut terms: SmallVec<[f64; 16]> = SmallVec::new();
        for i in (0..self.depth.len()).rev() {
            let t = self.depth[i] as usize;
            let lphi = log_phi_from_log_sv(&self.log_sv[i * self.d..(i + 1) * self.d], s);
            let nc = self.children[i] as usize;
            let mut w: V = SmallVec::from_elem(f64::NEG_INFINITY, nh);
            let mut sp: V = SmallVec::from_elem(f64::NEG_INFINITY, np);
            if nc > 0 {
                let base = stack.len() - nc;
                for h in 0..nh {
                    if horizons[h] > t {
                        terms.clear();
                        for c in (base..stack.len()).rev() {
                            terms.push(stack[c].0 + stack[c].1[h]);
                        }
                        w[h] = lphi.min(log_sum_pairwise(&terms));
                    }
                }
                for (p, pair) in pairs.iter().enumerate() {
                    if pair.0 > t {
                        terms.clear();
                        for c in (base..stack.len()).rev() {
                            terms.push(stack[c].0 + stack[c].2[p]);
                        }
                        sp[p] = log_sum_pairwise(&terms);
                    }
                }
                stack.truncate(base);
            }
            for h in 0..nh {
                if horizons[h] == t {
                    w[h] = lphi;
                }
            }
            for (p, pair) in pairs.iter().enumerate() {
                if pair.0 == t {
                    sp[p] = w[pair_h[p]];
                }
            }
            stack.push((self.log_count[i], w, sp));
        }
        let root = stack.pop().expect("tree has a root");
        root.2.to_vec()
    }
}

fn check_pairs(pairs: &[(usize, usize)]) -> Result<(), DimsError> {
    if pairs.is_empty() || pairs.iter().any(|&(k, kk)| k < 1 || kk < k) {
        return Err(DimsError::InvalidArgument(
            "depth pairs need 1 ≤ k ≤ K".into(),
        ));
    }
    Ok(())
}

/// Exact DP for the cheapest cover with cylinder depths in [k, K]. Fails
/// with BudgetExhausted when the tree to depth K exceeds `node_budget`.
pub fn net_measure(
    spec: &SystemSpec,
    s: f64,
    k: usize,
    horizon: usize,
    node_budget: u64,
) -> Result<NetMeasureTable, DimsError> {
    if s.is_nan() || s < 0.0 {
        return Err(DimsError::InvalidArgument(format!(
            "s must be non-negative, got {s}"
        )));
    }
    check_pairs(&[(k, horizon)])?;
    let tree = Tree::new(spec);
    if tree.max_depth_within(node_budget as f64, horizon) < horizon {
        return Err(DimsError::BudgetExhausted {
            budget: node_budget,
        });
    }
    let dp = DpTree::build(&tree, horizon);
    let log_value = dp.eval(s, &[(k, horizon)])[0];
    Ok(NetMeasureTable {
        s,
        k,
        horizon,
        value: log_value.exp(),
        log_value,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaOptions {
    pub tol: f64,
    /// Explicit (k, K) pairs; `None` derives them from the budget.
    pub depth_schedule: Option<Vec<(usize, usize)>>,
    pub node_budget: u64,
}

impl Default for SaOptions {
    fn default() -> Self {
        SaOptions {
            tol: DEFAULT_TOL,
            depth_schedule: None,
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }
}

/// Default (k, K) pairs. Deep trees (aggregated chains) get windows
/// [k, 4k] with k geometric; shallow ones (2j, 2j+Δ) ending at the budget
/// depth.
pub(crate) fn default_depth_pairs(k_cap: usize) -> Vec<(usize, usize)> {
    if k_cap >= 64 {
        let top = (k_cap / 4) as f64;
        let mut pairs: Vec<(usize, usize)> = (1..=8)
            .map(|j| {
                let k = (top * 2f64.powf(-((8 - j) as f64) / 2.0)).round().max(1.0) as usize;
                (k, 4 * k)
            })
            .collect();
        pairs.dedup();
        pairs
    } else {
        let delta = k_cap.saturating_sub(16).max(1);
        (1..=8)
            .map(|j| (2 * j, 2 * j + delta))
            .filter(|p| p.1 <= k_cap)
            .collect()
    }
}

/// s_A = sup{s : M^s(Σ^∞) = ∞}, classified on the tail minimum of the
/// truncated net measures.
pub fn estimate_sa(spec: &SystemSpec, opts: &SaOptions) -> Result<DimensionReport, DimsError> {
    check_tol(opts.tol)?;
    let tree = Tree::new(spec);
    let d = spec.dim();
    let mut flags = Vec::new();
    let pairs = match &opts.depth_schedule {
        Some(p) => {
            check_pairs(p)?;
            p.clone()
        }
        None => {
            let k_cap = tree.max_depth_within((opts.node_budget / 4) as f64, DP_DEPTH_CAP);
            let p = default_depth_pairs(k_cap);
            if p.len() < 2 {
                flags.push(FLAG_BUDGET);
                return Err(DimsError::BudgetExhausted {
                    budget: opts.node_budget,
                });
            }
            p
        }
    };
    let horizon = pairs.iter().map(|p| p.1).max().unwrap();
    if tree.max_depth_within(opts.node_budget as f64, horizon) < horizon {
        return Err(DimsError::BudgetExhausted {
            budget: opts.node_budget,
        });
    }
    let dp = DpTree::build(&tree, horizon);
    let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
    let outcome = bisect(0.0, d as f64 + 1.0, opts.tol, |s| {
        let ys = dp.eval(s, &pairs);
        let (verdict, stats) = classify(&xs, &ys, GrowthTest::TailMin);
        Ok(Probe { verdict, stats })
    })?;
    let mut report = DimensionReport {
        quantity: Quantity::SA,
        estimate: outcome.estimate,
        bracket: outcome.bracket,
        schedule: ScheduleInfo {
            kind: "depth_pairs".into(),
            depth_pairs: Some(pairs),
            theta_low: Some(THETA_LOW),
            theta_high: Some(THETA_HIGH),
            tol: Some(opts.tol),
            node_budget: Some(opts.node_budget),
            ..Default::default()
        },
        flags: Vec::new(),
        trace: outcome.trace,
        dimension_bound: outcome.estimate.map(|e| e.min(d as f64)),
        fit: None,
    };
    for f in flags.into_iter().chain(outcome.flags) {
        report.flag(f);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Pressure

/// Singular values of all words at two depths, kept for repeated sums.
struct DepthLayers {
    d: usize,
    depths: [usize; 2],
    log_mult: [Vec<f64>; 2],
    log_sv: [Vec<f64>; 2],
}

impl DepthLayers {
    fn build(tree: &Tree, depths: [usize; 2]) -> Self {
        let d = tree.dim();
        let mut out = DepthLayers {
            d,
            depths,
            log_mult: [Vec::new(), Vec::new()],
            log_sv: [Vec::new(), Vec::new()],
        };
        let deepest = depths[1];
        let mut stack = vec![Node::root(d)];
        while let Some(node) = stack.pop() {
            for (i, &k) in depths.iter().enumerate() {
                if node.depth == k {
                    out.log_mult[i].push(node.log_mult);
                    out.log_sv[i].extend_from_slice(&node.log_sv);
                }
            }
            if node.depth < deepest {
                for g in tree.groups(node.depth + 1).iter().rev() {
                    stack.push(node.child(g, false));
                }
            }
        }
        out
    }

    /// ln Σ_{|u|=k} φ^s(T_u) for both depths.
    fn log_z(&self, s: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (i, o) in out.iter_mut().enumerate() {
            let terms: Vec<f64> = self.log_mult[i]
                .iter()
                .enumerate()
                .map(|(j, lm)| {
                    lm + log_phi_from_log_sv(&self.log_sv[i][j * self.d..(j + 1) * self.d], s)
                })
                .collect();
            *o = log_sum_pairwise(&terms);
        }
        out
    }

    /// ln p(s) from the growth between the two depths.
    fn log_pressure(&self, s: f64) -> f64 {
        let z = self.log_z(s);
        (z[1] - z[0]) / (self.depths[1] - self.depths[0]) as f64
    }
}

/// Root of p(s) = lim (Σ_{|u|=k} φ^s(T_u))^{1/k} = 1 for a single level
/// used at every depth. `max_depth` defaults to the deepest level whose
/// width fits a quarter of the budget (256 for aggregated chains).
pub fn pressure_root(
    level: &LevelSpec,
    tol: f64,
    max_depth: Option<usize>,
    node_budget: u64,
) -> Result<DimensionReport, DimsError> {
    check_tol(tol)?;
    if level.branch_count() < 2 {
        return Err(DimsError::InvalidArgument(
            "pressure needs at least two maps".into(),
        ));
    }
    let d = level.maps()[0].dim();
    let tree = Tree::from_schedule(d, &Schedule::constant(level.clone()));
    let limit = (node_budget / 4).max(4) as f64;
    let k = match max_depth {
        Some(k) => {
            if k < 2 {
                return Err(DimsError::InvalidArgument(
                    "max_depth must be at least 2".into(),
                ));
            }
            if tree.width(k) > node_budget as f64 {
                return Err(DimsError::BudgetExhausted {
                    budget: node_budget,
                });
            }
            k
        }
        None => {
            let mut k = 2;
            while k < PRESSURE_CHAIN_DEPTH && tree.width(k + 1) <= limit {
                k += 1;
            }
            if tree.width(k) > node_budget as f64 {
                return Err(DimsError::BudgetExhausted {
                    budget: node_budget,
                });
            }
            k
        }
    };
    let layers = DepthLayers::build(&tree, [k / 2, k]);
    let mut trace = Vec::new();
    let mut flags = Vec::new();
    let mut lo = 0.0;
    let mut hi = d as f64 + 1.0;
    while layers.log_pressure(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        flags.push(FLAG_UPPER_EXTENDED.to_string());
    }
    while hi - lo > tol {
        let s = 0.5 * (lo + hi);
        let lp = layers.log_pressure(s);
        trace.push(TraceEntry::Probe {
            s,
            verdict: if lp > 0.0 {
                Verdict::Below
            } else {
                Verdict::Above
            },
            tail_max: None,
            tail_min: None,
            slope: finite(lp),
        });
        if lp > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
    }
    flags.dedup();
    let estimate = 0.5 * (lo + hi);
    Ok(DimensionReport {
        quantity: Quantity::Falconer,
        estimate: Some(estimate),
        bracket: (lo, hi),
        schedule: ScheduleInfo {
            kind: "depth".into(),
            max_depth: Some(k),
            tol: Some(tol),
            node_budget: Some(node_budget),
            ..Default::default()
        },
        flags,
        trace,
        dimension_bound: Some(estimate.min(d as f64)),
        fit: None,
    })
}

/// pressure_root on a stationary spec.
pub fn falconer(
    spec: &SystemSpec,
    tol: f64,
    node_budget: u64,
) -> Result<DimensionReport, DimsError> {
    if !spec.schedule().is_stationary() {
        return Err(DimsError::NotStationary);
    }
    pressure_root(spec.level(1), tol, None, node_budget)
}

// ---------------------------------------------------------------------------
// Moran formulas

/// ln|c| for each map of each schedule level; errors on the first non-scalar.
fn scalar_ratios(spec: &SystemSpec) -> Result<Vec<Vec<f64>>, DimsError> {
    if let Some((level, map)) = spec.first_non_scalar() {
        return Err(DimsError::NonScalarMap { level, map });
    }
    Ok(spec
        .schedule()
        .levels()
        .iter()
        .map(|l| {
            l.maps()
                .iter()
                .map(|m| m.scalar_value().unwrap().abs().ln())
                .collect()
        })
        .collect())
}

/// ln Σ_j c_j^d.
fn level_log_sum(log_c: &[f64], d: f64) -> f64 {
    let terms: Vec<f64> = log_c.iter().map(|l| l * d).collect();
    log_sum_pairwise(&terms)
}

/// Solves Σ_l count_l·ln Σ_j c_{l,j}^x = 0 for x; the left side is
/// decreasing in x.
fn solve_moran(ratios: &[Vec<f64>], counts: &[usize], d_max: f64) -> f64 {
    let f = |x: f64| -> f64 {
        ratios
            .iter()
            .zip(counts)
            .filter(|(_, c)| **c > 0)
            .map(|(r, c)| *c as f64 * level_log_sum(r, x))
            .sum()
    };
    if f(0.0) <= 0.0 {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = d_max;
    while f(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// d_k: the root of Π_{i=1}^k Σ_j c_{i,j}^{d_k} = 1 for scalar maps.
pub fn moran_dk(spec: &SystemSpec, k: usize) -> Result<f64, DimsError> {
    if k == 0 {
        return Err(DimsError::InvalidArgument("k must be at least 1".into()));
    }
    let ratios = scalar_ratios(spec)?;
    let mut counts = vec![0usize; ratios.len()];
    for i in 1..=k {
        counts[spec.schedule().level_index(i)] += 1;
    }
    Ok(solve_moran(&ratios, &counts, spec.dim() as f64 + 1.0))
}

/// d_* and d^* as the minimum and maximum of d_k over [k_max/2, k_max].
pub fn moran_dims(
    spec: &SystemSpec,
    k_max: usize,
) -> Result<(DimensionReport, DimensionReport), DimsError> {
    if k_max == 0 {
        return Err(DimsError::InvalidArgument(
            "k_max must be at least 1".into(),
        ));
    }
    let ratios = scalar_ratios(spec)?;
    let d = spec.dim() as f64;
    let mut counts = vec![0usize; ratios.len()];
    let mut trace = Vec::with_capacity(k_max);
    let mut values = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        counts[spec.schedule().level_index(k)] += 1;
        let v = solve_moran(&ratios, &counts, d + 1.0);
        values.push(v);
        trace.push(TraceEntry::Point { k, value: v });
    }
    let w0 = (k_max / 2).max(1);
    let window = &values[w0 - 1..];
    let lower = window.iter().cloned().fold(f64::INFINITY, f64::min);
    let upper = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let make = |quantity, v: f64| DimensionReport {
        quantity,
        estimate: Some(v),
        bracket: (v, v),
        schedule: ScheduleInfo {
            kind: "moran".into(),
            window: Some((w0, k_max)),
            ..Default::default()
        },
        flags: Vec::new(),
        trace: trace.clone(),
        dimension_bound: Some(v.min(d)),
        fit: None,
    };
    Ok((
        make(Quantity::MoranLower, lower),
        make(Quantity::MoranUpper, upper),
    ))
}
