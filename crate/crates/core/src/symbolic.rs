//! Words over the level alphabets, matrix products along the symbolic tree,
//! and the stopping families Σ*(s, ε).
//!
//! Traversals run on a compressed tree: the maps of each level are grouped
//! by exact equality and every group is expanded once, carrying the group
//! size as a multiplicity. Levels whose maps are all identical therefore
//! cost one node per depth however large n_k is.
//!
//! Products are held as `exp(log_scale) · M` with M renormalised after every
//! multiplication, and ln|det| is tracked additively, so singular values stay
//! representable at depths where the raw entries would underflow.

use rayon::prelude::*;
use smallvec::SmallVec;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use crate::error::SymbolicError;
use crate::linalg::{mul_unchecked, raw_singular_values, Matrix, SingularValues};
use crate::svf::{branch_index, log_phi_from_log_sv};
use crate::system::SystemSpec;

/// Default number of expanded nodes a traversal may use.
pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

/// Sub-trees handed to worker threads are rooted at the first depth with at
/// least this many compressed nodes.
const PARALLEL_FANOUT: f64 = 64.0;

pub(crate) type LogSv = SmallVec<[f64; 8]>;

/// A finite word u = u₁…u_k with 1-based digits.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Word(Vec<usize>);

impl Word {
    pub fn new(digits: Vec<usize>) -> Self {
        Word(digits)
    }

    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn digits(&self) -> &[usize] {
        &self.0
    }

    pub fn child(&self, digit: usize) -> Word {
        let mut d = self.0.clone();
        d.push(digit);
        Word(d)
    }

    /// u|n.
    pub fn prefix(&self, n: usize) -> Word {
        Word(self.0[..n.min(self.0.len())].to_vec())
    }

    /// True when `self` is a curtailment of `digits`.
    pub fn is_prefix_of(&self, digits: &[usize]) -> bool {
        digits.len() >= self.0.len() && digits[..self.0.len()] == self.0[..]
    }

    /// Dot-separated digits, e.g. `1.3.2`; the empty word prints as `-`.
    pub fn label(&self) -> String {
        if self.0.is_empty() {
            return "-".to_string();
        }
        self.0
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(".")
    }
}

/// Checks every digit against its level's branch count.
pub fn check_word(spec: &SystemSpec, w: &Word) -> Result<(), SymbolicError> {
    for (i, &digit) in w.digits().iter().enumerate() {
        let n = spec.level(i + 1).branch_count();
        if digit == 0 || digit > n {
            return Err(SymbolicError::InvalidDigit {
                position: i + 1,
                digit,
                branch_count: n,
            });
        }
    }
    Ok(())
}

/// u ∧ v: the longest common prefix.
pub fn common_prefix(u: &Word, v: &Word) -> Word {
    let n = u.0.iter().zip(&v.0).take_while(|(a, b)| a == b).count();
    u.prefix(n)
}

/// T_u together with its singular values.
#[derive(Clone, Debug)]
pub struct ProductNode {
    pub word: Word,
    pub product: Matrix,
    pub sv: SingularValues,
    log_sv: Vec<f64>,
}

impl ProductNode {
    /// ln α_i(T_u), descending. Serves as the per-exponent cache for φ^s.
    pub fn log_singular_values(&self) -> &[f64] {
        &self.log_sv
    }

    pub fn log_phi(&self, s: f64) -> f64 {
        log_phi_from_log_sv(&self.log_sv, s)
    }
}

/// T_u = T_{1,u₁} ⋯ T_{k,u_k}, multiplied left to right.
pub fn product(spec: &SystemSpec, w: &Word) -> Result<ProductNode, SymbolicError> {
    check_word(spec, w)?;
    let d = spec.dim();
    let mut p = Matrix::identity(d);
    let mut scaled = ScaledProduct::identity(d);
    for (i, &digit) in w.digits().iter().enumerate() {
        let t = &spec.level(i + 1).maps()[digit - 1];
        p = mul_unchecked(&p, t);
        scaled = scaled.child(t, t.det().abs().ln());
    }
    let log_sv = scaled.log_sv().to_vec();
    let sv = SingularValues::from_sorted(log_sv.iter().map(|v| v.exp()).collect());
    Ok(ProductNode {
        word: w.clone(),
        product: p,
        sv,
        log_sv,
    })
}

// ---------------------------------------------------------------------------
// Scaled products and the compressed tree

#[derive(Clone, Debug)]
pub(crate) struct ScaledProduct {
    m: Matrix,
    log_scale: f64,
    log_det: f64,
}

impl ScaledProduct {
    pub(crate) fn identity(d: usize) -> Self {
        ScaledProduct {
            m: Matrix::identity(d),
            log_scale: 0.0,
            log_det: 0.0,
        }
    }

    pub(crate) fn child(&self, t: &Matrix, log_abs_det_t: f64) -> Self {
        let mut m = mul_unchecked(&self.m, t);
        let norm = m.max_abs();
        let mut log_scale = self.log_scale;
        if norm > 0.0 {
            m.scale_in_place(1.0 / norm);
            log_scale += norm.ln();
        }
        ScaledProduct {
            m,
            log_scale,
            log_det: self.log_det + log_abs_det_t,
        }
    }

    /// ln of the singular values. The smallest one is recovered from ln|det|
    /// so it stays accurate however ill-conditioned the product is.
    pub(crate) fn log_sv(&self) -> LogSv {
        let d = self.m.dim();
        if d == 1 {
            return SmallVec::from_slice(&[self.log_det]);
        }
        let sv = raw_singular_values(&self.m);
        let mut out: LogSv = sv[..d - 1]
            .iter()
            .map(|v| self.log_scale + v.ln())
            .collect();
        let head: f64 = out.iter().sum();
        out.push(self.log_det - head);
        out
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Group {
    pub(crate) matrix: Matrix,
    pub(crate) log_abs_det: f64,
    /// 1-based index of the first map in the group.
    pub(crate) first: usize,
    pub(crate) count: usize,
    pub(crate) log_count: f64,
}

/// The schedule with every level's maps grouped by equality.
#[derive(Clone, Debug)]
pub(crate) struct Tree {
    dim: usize,
    levels: Vec<Vec<Group>>,
    index: LevelIndex,
}

#[derive(Clone, Debug)]
struct LevelIndex {
    schedule: crate::system::Schedule,
    cached: Vec<u32>,
}

const LEVEL_CACHE: usize = 1 << 16;

impl LevelIndex {
    fn get(&self, k: usize) -> usize {
        if k < self.cached.len() {
            self.cached[k] as usize
        } else {
            self.schedule.level_index(k)
        }
    }
}

impl Tree {
    pub(crate) fn new(spec: &SystemSpec) -> Self {
        Tree::from_schedule(spec.dim(), spec.schedule())
    }

    pub(crate) fn from_schedule(dim: usize, schedule: &crate::system::Schedule) -> Self {
        let levels = schedule
            .levels()
            .iter()
            .map(|l| {
                let mut groups: Vec<Group> = Vec::new();
                for (i, m) in l.maps().iter().enumerate() {
                    if let Some(g) = groups.iter_mut().find(|g| &g.matrix == m) {
                        g.count += 1;
                    } else {
                        groups.push(Group {
                            matrix: m.clone(),
                            log_abs_det: m.det().abs().ln(),
                            first: i + 1,
                            count: 1,
                            log_count: 0.0,
                        });
                    }
                }
                for g in &mut groups {
                    g.log_count = (g.count as f64).ln();
                }
                groups
            })
            .collect();
        let schedule = schedule.clone();
        let cached = (0..LEVEL_CACHE)
            .map(|k| {
                if k == 0 {
                    0
                } else {
                    schedule.level_index(k) as u32
                }
            })
            .collect();
        Tree {
            dim,
            levels,
            index: LevelIndex { schedule, cached },
        }
    }

    /// Groups of level k ≥ 1.
    pub(crate) fn groups(&self, k: usize) -> &[Group] {
        &self.levels[self.index.get(k)]
    }

    pub(crate) fn dim(&self) -> usize {
        self.dim
    }

    /// First depth whose compressed width reaches `target`, capped at `max`
    /// and at 64.
    fn split_depth(&self, target: f64, max: usize) -> usize {
        let mut width = 1.0;
        let max = max.min(64);
        for t in 0..max {
            if width >= target {
                return t;
            }
            width *= self.groups(t + 1).len() as f64;
        }
        max
    }

    /// Largest K ≤ cap whose nodes at depths 0..=K number at most `limit`.
    pub(crate) fn max_depth_within(&self, limit: f64, cap: usize) -> usize {
        let mut total = 1.0;
        let mut width = 1.0;
        for k in 1..=cap {
            width *= self.groups(k).len() as f64;
            total += width;
            if total > limit {
                return k - 1;
            }
        }
        cap
    }

    /// Compressed width at depth k.
    pub(crate) fn width(&self, k: usize) -> f64 {
        (1..=k).map(|t| self.groups(t).len() as f64).product()
    }

    /// True when no level needs more than one compressed child.
    pub(crate) fn is_chain(&self) -> bool {
        self.levels.iter().all(|g| g.len() == 1)
    }
}

/// A node of the compressed tree during a traversal.
#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) depth: usize,
    pub(crate) prod: ScaledProduct,
    pub(crate) log_sv: LogSv,
    pub(crate) log_mult: f64,
    pub(crate) word: Vec<usize>,
}

impl Node {
    pub(crate) fn root(d: usize) -> Self {
        Node {
            depth: 0,
            prod: ScaledProduct::identity(d),
            log_sv: SmallVec::from_elem(0.0, d),
            log_mult: 0.0,
            word: Vec::new(),
        }
    }

    pub(crate) fn child(&self, g: &Group, track_word: bool) -> Node {
        let prod = self.prod.child(&g.matrix, g.log_abs_det);
        let log_sv = prod.log_sv();
        let word = if track_word {
            let mut w = self.word.clone();
            w.push(g.first);
            w
        } else {
            Vec::new()
        };
        Node {
            depth: self.depth + 1,
            prod,
            log_sv,
            log_mult: self.log_mult + g.log_count,
            word,
        }
    }

    /// ln α_m with m clamped to d.
    pub(crate) fn log_alpha(&self, m: usize) -> f64 {
        self.log_sv[m.clamp(1, self.log_sv.len()) - 1]
    }
}

// ---------------------------------------------------------------------------
// Deterministic log-domain summation

/// ln(eᵃ + eᵇ).
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Streaming pairwise summation in plain arithmetic.
#[derive(Clone, Debug, Default)]
pub(crate) struct PairwiseSum {
    slots: SmallVec<[Option<f64>; 32]>,
}

impl PairwiseSum {
    pub(crate) fn push(&mut self, term: f64) {
        let mut carry = term;
        for slot in self.slots.iter_mut() {
            match slot.take() {
                None => {
                    *slot = Some(carry);
                    return;
                }
                Some(v) => carry += v,
            }
        }
        self.slots.push(Some(carry));
    }

    pub(crate) fn total(&self) -> f64 {
        self.slots.iter().flatten().fold(0.0, |acc, v| acc + v)
    }
}

/// Pairwise sum of a slice of logs.
pub(crate) fn log_sum_pairwise(logs: &[f64]) -> f64 {
    match logs.len() {
        0 => f64::NEG_INFINITY,
        1 => logs[0],
        n => {
            let (a, b) = logs.split_at(n / 2);
            log_add(log_sum_pairwise(a), log_sum_pairwise(b))
        }
    }
}

// ---------------------------------------------------------------------------
// Node budget

pub(crate) struct Budget {
    limit: u64,
    used: AtomicU64,
    exhausted: AtomicBool,
    exact: bool,
}

const BUDGET_BATCH: u64 = 1024;

impl Budget {
    fn new(limit: u64, exact: bool) -> Self {
        Budget {
            limit,
            used: AtomicU64::new(0),
            exhausted: AtomicBool::new(false),
            exact,
        }
    }

    pub(crate) fn exhausted(&self) -> bool {
        self.exhausted.load(Ordering::Relaxed)
    }

    pub(crate) fn used(&self) -> u64 {
        self.used.load(Ordering::Relaxed)
    }
}

/// Per-task budget handle. In exact mode every expansion is checked against
/// the shared limit; otherwise expansions are flushed in batches and an
/// overrun only aborts the pass.
pub(crate) struct Meter<'a> {
    budget: &'a Budget,
    pending: u64,
}

impl<'a> Meter<'a> {
    pub(crate) fn new(budget: &'a Budget) -> Self {
        Meter { budget, pending: 0 }
    }

    /// Accounts one expansion; false means the node must not be expanded.
    pub(crate) fn take(&mut self) -> bool {
        if self.budget.exhausted() {
            return false;
        }
        if self.budget.exact {
            let prev = self.budget.used.fetch_add(1, Ordering::Relaxed);
            if prev >= self.budget.limit {
                self.budget.used.fetch_sub(1, Ordering::Relaxed);
                self.budget.exhausted.store(true, Ordering::Relaxed);
                return false;
            }
            return true;
        }
        self.pending += 1;
        if self.pending >= BUDGET_BATCH {
            self.flush();
        }
        !self.budget.exhausted()
    }

    fn flush(&mut self) {
        if self.pending == 0 {
            return;
        }
        let total = self.budget.used.fetch_add(self.pending, Ordering::Relaxed) + self.pending;
        self.pending = 0;
        if total > self.budget.limit {
            self.budget.exhausted.store(true, Ordering::Relaxed);
        }
    }
}

impl Drop for Meter<'_> {
    fn drop(&mut self) {
        self.flush();
    }
}

/// Outcome of a split traversal: the per-task results in DFS order.
pub(crate) struct SplitRun<R> {
    pub(crate) head: R,
    pub(crate) tasks: Vec<R>,
    pub(crate) truncated: bool,
    pub(crate) used: u64,
}

/// Runs a traversal as a sequential head over depths < split followed by
/// independent sub-tree tasks rooted at the split depth. The decomposition
/// depends only on the tree, so results are identical for any thread count.
/// If a parallel pass overruns the budget it is repeated sequentially with
/// exact accounting, which makes truncation deterministic too.
///
/// `head` walks the shallow part and returns sub-tree roots; `task` handles
/// one root.
pub(crate) fn split_run<N, R, H, T>(
    tree: &Tree,
    limit: u64,
    max_split: usize,
    head: H,
    task: T,
) -> SplitRun<R>
where
    N: Send,
    R: Send,
    H: Fn(usize, &mut Meter) -> (R, Vec<N>),
    T: Fn(N, &mut Meter) -> R + Sync + Send,
{
    let split = tree.split_depth(PARALLEL_FANOUT, max_split);
    let parallel = rayon::current_num_threads() > 1;
    if parallel {
        let budget = Budget::new(limit, false);
        let (h, roots) = {
            let mut meter = Meter::new(&budget);
            head(split, &mut meter)
        };
        if !budget.exhausted() {
            let tasks: Vec<R> = roots
                .into_par_iter()
                .map(|n| {
                    let mut meter = Meter::new(&budget);
                    task(n, &mut meter)
                })
                .collect();
            if !budget.exhausted() && budget.used() <= limit {
                return SplitRun {
                    head: h,
                    tasks,
                    truncated: false,
                    used: budget.used(),
                };
            }
        }
    }
    let budget = Budget::new(limit, true);
    let mut meter = Meter::new(&budget);
    let (h, roots) = head(split, &mut meter);
    let tasks: Vec<R> = roots.into_iter().map(|n| task(n, &mut meter)).collect();
    drop(meter);
    SplitRun {
        head: h,
        tasks,
        truncated: budget.exhausted(),
        used: budget.used(),
    }
}

// ---------------------------------------------------------------------------
// Cut-sets

/// One member of Σ*(s, ε). With aggregation, `word` is the representative
/// of `exp(log_multiplicity)` words sharing the same product.
#[derive(Clone, Debug, PartialEq)]
pub struct CutEntry {
    pub word: Word,
    pub log_phi: f64,
    pub log_alpha_m: f64,
    pub log_multiplicity: f64,
}

/// The stopping family Σ*(s, ε) = {u : α_m(T_u) ≤ ε < α_m(T_{u⁻})}.
#[derive(Clone, Debug)]
pub struct CutSet {
    pub s: f64,
    pub m: usize,
    pub epsilon: f64,
    pub entries: Vec<CutEntry>,
    pub truncated: bool,
    pub node_budget_used: u64,
}

/// Σ over a cut-set of φ^s(T_u).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutSetSum {
    pub value: f64,
    pub log_value: f64,
    /// Set when the cut-set was truncated; the value is then a lower bound.
    pub lower_bound: bool,
}

/// Branch index used for cut-set membership: m−1 < s ≤ m, clamped to d.
pub fn cut_index(s: f64, d: usize) -> usize {
    branch_index(s).clamp(1, d)
}

/// Builds Σ*(s, ε) by depth-first descent through words with α_m > ε.
/// Exhausting `node_budget` expansions stops the walk and flags `truncated`.
pub fn cutset(spec: &SystemSpec, s: f64, epsilon: f64, node_budget: u64) -> CutSet {
    assert!(epsilon > 0.0 && epsilon < 1.0, "epsilon must lie in (0, 1)");
    assert!(s > 0.0, "s must be positive");
    let tree = Tree::new(spec);
    let m = cut_index(s, spec.dim());
    let log_eps = epsilon.ln();
    let budget = Budget::new(node_budget, true);
    let mut meter = Meter::new(&budget);
    let mut entries = Vec::new();
    let mut stack = vec![Node::root(spec.dim())];
    // Children are pushed in reverse so they pop in lexicographic order.
    while let Some(node) = stack.pop() {
        if node.depth > 0 && node.log_alpha(m) <= log_eps {
            entries.push(CutEntry {
                word: Word::new(node.word.clone()),
                log_phi: log_phi_from_log_sv(&node.log_sv, s),
                log_alpha_m: node.log_alpha(m),
                log_multiplicity: node.log_mult,
            });
            continue;
        }
        if !meter.take() {
            break;
        }
        let groups = tree.groups(node.depth + 1);
        for g in groups.iter().rev() {
            stack.push(node.child(g, true));
        }
    }
    drop(meter);
    CutSet {
        s,
        m,
        epsilon,
        entries,
        truncated: budget.exhausted(),
        node_budget_used: budget.used(),
    }
}

/// Pairwise sum of multiplicity-weighted φ^s over the entries, in order.
pub fn cutset_sum(c: &CutSet) -> CutSetSum {
    let logs: Vec<f64> = c
        .entries
        .iter()
        .map(|e| e.log_phi + e.log_multiplicity)
        .collect();
    let log_value = log_sum_pairwise(&logs);
    CutSetSum {
        value: log_value.exp(),
        log_value,
        lower_bound: c.truncated,
    }
}

/// ln Σ_{Σ*(s,ε_j)} φ^s for a whole decreasing schedule of ε in one pass.
#[derive(Clone, Debug)]
pub struct CutSetProfile {
    pub s: f64,
    pub m: usize,
    pub epsilons: Vec<f64>,
    pub log_sums: Vec<f64>,
    pub truncated: bool,
    pub nodes_expanded: u64,
}

/// The cut-sets Σ*(m, ε_j) of a whole ε schedule, enumerated once. Membership
/// depends on m only, so every s with the same branch index reuses the
/// entries and only the summation is repeated.
///
/// Per entry: `head` = ln mult + Σ_{i<m} ln α_i, `tail` = ln α_m, and the
/// half-open range of schedule indices whose cut-set contains it.
#[derive(Clone, Debug)]
pub struct CutSetFamily {
    m: usize,
    d: usize,
    log_eps: Vec<f64>,
    head: Vec<f64>,
    tail: Vec<f64>,
    log_mult: Vec<f64>,
    range: Vec<(u32, u32)>,
    truncated: bool,
    nodes_expanded: u64,
}

const SUM_CHUNK: usize = 1 << 15;

impl CutSetFamily {
    pub fn m(&self) -> usize {
        self.m
    }

    /// ln ε_j; kept in log form because deep schedules underflow.
    pub fn log_epsilons(&self) -> &[f64] {
        &self.log_eps
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn nodes_expanded(&self) -> u64 {
        self.nodes_expanded
    }

    /// Number of stored (aggregated) entries.
    pub fn len(&self) -> usize {
        self.head.len()
    }

    pub fn is_empty(&self) -> bool {
        self.head.is_empty()
    }

    /// True when s selects the branch index this family was built for.
    pub fn accepts(&self, s: f64) -> bool {
        s > 0.0 && cut_index(s, self.d) == self.m
    }

    fn log_phi(&self, i: usize, s: f64) -> f64 {
        if branch_index(s) > self.d {
            // s > d: (s/d)·ln|det|, ln|det| = Σ ln α_i.
            let log_det = self.head[i] - self.log_mult[i] + self.tail[i];
            self.log_mult[i] + log_det * s / self.d as f64
        } else {
            self.head[i] + (s - self.m as f64 + 1.0) * self.tail[i]
        }
    }

    /// ln Σ_{Σ*(s,ε_j)} φ^s(T_u) for every j. Entries are summed pairwise in
    /// fixed-size chunks and the chunk totals pairwise again, so the result
    /// does not depend on the thread count.
    pub fn log_sums(&self, s: f64) -> Vec<f64> {
        assert!(self.accepts(s), "s = {s} has a different branch index");
        let n_eps = self.log_eps.len();
        // Within a chunk each column is shifted by its maximum and summed in
        // plain arithmetic; chunk totals are combined in the log domain.
        let chunks: Vec<Vec<f64>> = (0..self.len().div_ceil(SUM_CHUNK))
            .into_par_iter()
            .map(|c| {
                let range = c * SUM_CHUNK..((c + 1) * SUM_CHUNK).min(self.len());
                let terms: Vec<f64> = range.clone().map(|i| self.log_phi(i, s)).collect();
                let mut shift = vec![f64::NEG_INFINITY; n_eps];
                for (t, i) in terms.iter().zip(range.clone()) {
                    let (lo, hi) = self.range[i];
                    for m in &mut shift[lo as usize..hi as usize] {
                        *m = m.max(*t);
                    }
                }
                let mut acc = vec![PairwiseSum::default(); n_eps];
                for (t, i) in terms.iter().zip(range) {
                    let (lo, hi) = self.range[i];
                    for j in lo as usize..hi as usize {
                        acc[j].push((t - shift[j]).exp());
                    }
                }
                acc.iter()
                    .zip(&shift)
                    .map(|(a, m)| {
                        if m.is_finite() {
                            m + a.total().ln()
                        } else {
                            *m
                        }
                    })
                    .collect()
            })
            .collect();
        (0..n_eps)
            .map(|j| {
                let col: Vec<f64> = chunks.iter().map(|c| c[j]).collect();
                log_sum_pairwise(&col)
            })
            .collect()
    }
}

/// Schedule positions j with a ≤ ln ε_j < parent: contiguous because the
/// schedule is decreasing.
fn eps_range(log_eps: &[f64], a: f64, parent: f64) -> (u32, u32) {
    let lo = log_eps.partition_point(|le| *le >= parent);
    let hi = log_eps.partition_point(|le| *le >= a);
    (lo as u32, hi.max(lo) as u32)
}

#[derive(Default)]
struct FamilyPart {
    head: Vec<f64>,
    tail: Vec<f64>,
    log_mult: Vec<f64>,
    range: Vec<(u32, u32)>,
}

impl FamilyPart {
    fn emit(&mut self, node: &Node, m: usize, parent_a: f64, log_eps: &[f64]) {
        let a = node.log_alpha(m);
        let r = eps_range(log_eps, a, parent_a);
        if r.0 == r.1 {
            return;
        }
        let head: f64 = node.log_sv[..m - 1].iter().sum();
        self.head.push(node.log_mult + head);
        self.tail.push(a);
        self.log_mult.push(node.log_mult);
        self.range.push(r);
    }

    fn append(&mut self, other: FamilyPart) {
        self.head.extend(other.head);
        self.tail.extend(other.tail);
        self.log_mult.extend(other.log_mult);
        self.range.extend(other.range);
    }
}

pub(crate) fn cutset_family_tree(
    tree: &Tree,
    m: usize,
    log_eps: &[f64],
    node_budget: u64,
) -> CutSetFamily {
    assert!(!log_eps.is_empty());
    assert!(
        log_eps.windows(2).all(|w| w[0] > w[1])
            && log_eps[0] < 0.0
            && log_eps.iter().all(|v| v.is_finite()),
        "epsilon schedule must be strictly decreasing in (0, 1)"
    );
    let m = m.clamp(1, tree.dim());
    let log_eps = log_eps.to_vec();
    let log_eps_min = *log_eps.last().unwrap();

    // Depth-first walk below one root; the stack pops children in order.
    let walk = |start: Vec<(Node, f64)>, stop_depth: Option<usize>, meter: &mut Meter| {
        let mut part = FamilyPart::default();
        let mut roots = Vec::new();
        let mut stack = start;
        while let Some((node, parent_a)) = stack.pop() {
            if stop_depth == Some(node.depth) {
                roots.push((node, parent_a));
                continue;
            }
            let a = if node.depth == 0 {
                0.0
            } else {
                part.emit(&node, m, parent_a, &log_eps);
                node.log_alpha(m)
            };
            if a <= log_eps_min {
                continue;
            }
            if !meter.take() {
                break;
            }
            for g in tree.groups(node.depth + 1).iter().rev() {
                stack.push((node.child(g, false), a));
            }
        }
        (part, roots)
    };

    let run = split_run(
        tree,
        node_budget,
        usize::MAX,
        |split, meter| {
            walk(
                vec![(Node::root(tree.dim()), f64::INFINITY)],
                Some(split),
                meter,
            )
        },
        |root, meter| walk(vec![root], None, meter).0,
    );
    let mut all = run.head;
    for t in run.tasks {
        all.append(t);
    }
    CutSetFamily {
        m,
        d: tree.dim(),
        log_eps,
        head: all.head,
        tail: all.tail,
        log_mult: all.log_mult,
        range: all.range,
        truncated: run.truncated,
        nodes_expanded: run.used,
    }
}

/// Enumerates Σ*(m, ε_j) for a strictly decreasing schedule, given as
/// ln ε_j, in one pass.
pub fn cutset_family(
    spec: &SystemSpec,
    m: usize,
    log_epsilons: &[f64],
    node_budget: u64,
) -> CutSetFamily {
    cutset_family_tree(&Tree::new(spec), m, log_epsilons, node_budget)
}

/// Cut-set sums at one exponent for every ε of a decreasing schedule.
pub fn cutset_profile(
    spec: &SystemSpec,
    s: f64,
    epsilons: &[f64],
    node_budget: u64,
) -> CutSetProfile {
    assert!(s > 0.0, "s must be positive");
    let log_eps: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    let fam = cutset_family(spec, cut_index(s, spec.dim()), &log_eps, node_budget);
    CutSetProfile {
        s,
        m: fam.m,
        epsilons: epsilons.to_vec(),
        log_sums: fam.log_sums(s),
        truncated: fam.truncated,
        nodes_expanded: fam.nodes_expanded,
    }
}

/// Expansions needed to reach Σ*(m, ε), counted up to `limit`. Returns
/// `None` once the count exceeds the limit.
pub(crate) fn count_expansions(tree: &Tree, m: usize, log_eps: f64, limit: u64) -> Option<u64> {
    let mut count = 0u64;
    let mut stack = vec![Node::root(tree.dim())];
    while let Some(node) = stack.pop() {
        let a = if node.depth == 0 {
            0.0
        } else {
            node.log_alpha(m)
        };
        if a <= log_eps {
            continue;
        }
        count += 1;
        if count > limit {
            return None;
        }
        for g in tree.groups(node.depth + 1).iter().rev() {
            stack.push(node.child(g, false));
        }
    }
    Some(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::linalg::mat_mul;
    use crate::system::{BoxRegion, LevelSpec, Schedule, TranslationScheme};

    fn shear_spec() -> SystemSpec {
        let a = LevelSpec::new(
            vec![
                Matrix::new(2, &[0.5, 0.5, 0.0, 0.5]).unwrap(),
                Matrix::new(2, &[0.4, 0.0, 0.0, 0.4]).unwrap(),
            ],
            None,
        );
        let b = LevelSpec::new(
            vec![
                Matrix::new(2, &[0.3, 0.0, 0.0, 0.3]).unwrap(),
                Matrix::new(2, &[0.5, 0.0, 0.5, 0.5]).unwrap(),
            ],
            None,
        );
        SystemSpec::new(
            2,
            Schedule::periodic(vec![a, b]),
            TranslationScheme {
                kind: crate::system::TranslationKind::RandomIid,
                alphabet: None,
                region: Some(BoxRegion {
                    lo: vec![0.0, 0.0],
                    hi: vec![0.5, 0.5],
                }),
                seed: None,
                table: None,
            },
            BoxRegion {
                lo: vec![0.0, 0.0],
                hi: vec![1.0, 1.0],
            },
        )
        .unwrap()
    }

    #[test]
    fn product_examples() {
        let spec = fixtures::load("example_5_4").unwrap();
        let p = product(&spec, &Word::new(vec![2, 7])).unwrap();
        assert!((p.product.get(0, 0) - 1.0 / 81.0).abs() < 1e-16);
        assert!((p.product.get(1, 1) - 1.0 / 9.0).abs() < 1e-16);

        let e = product(&spec, &Word::empty()).unwrap();
        assert_eq!(e.product, Matrix::identity(2));
        assert!(e.sv.values().iter().all(|v| (*v - 1.0).abs() < 1e-15));

        let spec = shear_spec();
        let p = product(&spec, &Word::new(vec![1, 2])).unwrap();
        for (got, want) in p.product.entries().iter().zip([0.5, 0.25, 0.25, 0.25]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(product(&spec, &Word::new(vec![3])).is_err());
    }

    #[test]
    fn scaled_log_sv_matches_direct() {
        let spec = shear_spec();
        let w = Word::new(vec![1, 2, 2, 1, 1, 2, 1, 1]);
        let p = product(&spec, &w).unwrap();
        let direct = raw_singular_values(&p.product);
        for (l, v) in p.log_singular_values().iter().zip(direct) {
            assert!((l.exp() - v).abs() <= 1e-9 * v);
        }
    }

    #[test]
    fn common_prefix_examples() {
        let u = Word::new(vec![1, 2, 3]);
        assert_eq!(
            common_prefix(&u, &Word::new(vec![1, 2, 1])),
            Word::new(vec![1, 2])
        );
        assert_eq!(
            common_prefix(&Word::new(vec![1]), &Word::new(vec![2])),
            Word::empty()
        );
        assert_eq!(common_prefix(&u, &u), u);
    }

    #[test]
    fn middle_thirds_cutset_is_level_five() {
        let spec = fixtures::load("middle_thirds").unwrap();
        let c = cutset(&spec, 0.5, 3f64.powi(-5) * (1.0 + 1e-12), 1000);
        assert!(!c.truncated);
        assert_eq!(c.entries.len(), 1);
        assert!((c.entries[0].log_multiplicity - 32f64.ln()).abs() < 1e-12);
        assert_eq!(c.entries[0].word.len(), 5);
    }

    #[test]
    fn example_5_4_cutset_is_level_two() {
        let spec = fixtures::load("example_5_4").unwrap();
        let c = cutset(&spec, 4.0 / 3.0, 81f64.recip() * (1.0 + 1e-12), 1000);
        assert_eq!(c.m, 2);
        let total: f64 = c.entries.iter().map(|e| e.log_multiplicity.exp()).sum();
        assert!((total - 27.0).abs() < 1e-9);
        assert!(c.entries.iter().all(|e| e.word.len() == 2));
        let sum = cutset_sum(&c);
        // 27 equal terms 3^{-2}·9^{-2/3}.
        let oracle = 27.0 * 3f64.powf(-10.0 / 3.0);
        assert!((sum.value - oracle).abs() < 1e-12);
        assert!((sum.value - 0.69336).abs() < 1e-4);
    }

    #[test]
    fn coarse_epsilon_stops_at_depth_one() {
        let spec = shear_spec();
        let c = cutset(&spec, 1.5, 0.9, 1000);
        let words: Vec<_> = c.entries.iter().map(|e| e.word.clone()).collect();
        assert_eq!(words, vec![Word::new(vec![1]), Word::new(vec![2])]);
    }

    #[test]
    fn middle_thirds_sums() {
        let spec = fixtures::load("middle_thirds").unwrap();
        let eps = 3f64.powi(-5) * (1.0 + 1e-12);
        let s_sim = 2f64.ln() / 3f64.ln();
        let c = cutset(&spec, s_sim, eps, 1000);
        assert!((cutset_sum(&c).value - 1.0).abs() < 1e-12);
        let c = cutset(&spec, 1.0, eps, 1000);
        assert!((cutset_sum(&c).value - 32.0 / 243.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_is_flagged() {
        let spec = shear_spec();
        let c = cutset(&spec, 1.0, 1e-6, 10);
        assert!(c.truncated);
        assert_eq!(c.node_budget_used, 10);
        assert!(cutset_sum(&c).lower_bound);
    }

    #[test]
    fn profile_matches_single_cutsets() {
        let spec = shear_spec();
        let eps = [0.3, 0.1, 0.03, 0.01, 0.003];
        for s in [0.7, 1.3, 2.4] {
            let prof = cutset_profile(&spec, s, &eps, 1_000_000);
            assert!(!prof.truncated);
            for (j, e) in eps.iter().enumerate() {
                let c = cutset(&spec, s, *e, 1_000_000);
                let direct = cutset_sum(&c).log_value;
                assert!((prof.log_sums[j] - direct).abs() < 1e-12, "s={s} eps={e}");
            }
        }
    }

    #[test]
    fn profile_independent_of_thread_count() {
        let spec = shear_spec();
        let eps: Vec<f64> = (1..=10).map(|j| 0.7f64.powi(2 * j)).collect();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(6)
            .build()
            .unwrap();
        let a = one.install(|| cutset_profile(&spec, 1.2, &eps, 10_000_000));
        let b = many.install(|| cutset_profile(&spec, 1.2, &eps, 10_000_000));
        assert_eq!(a.log_sums, b.log_sums);
        assert_eq!(a.nodes_expanded, b.nodes_expanded);
        // Truncated runs agree as well.
        let half = a.nodes_expanded / 2;
        let a = one.install(|| cutset_profile(&spec, 1.2, &eps, half));
        let b = many.install(|| cutset_profile(&spec, 1.2, &eps, half));
        assert!(a.truncated && b.truncated);
        assert_eq!(a.log_sums, b.log_sums);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let logs: Vec<f64> = (0..1000).map(|i| -(i as f64) * 0.01).collect();
        let naive: f64 = logs.iter().map(|v| v.exp()).sum::<f64>().ln();
        let mut p = PairwiseSum::default();
        for v in &logs {
            p.push(v.exp());
        }
        assert!((p.total().ln() - naive).abs() < 1e-12);
        assert!((log_sum_pairwise(&logs) - naive).abs() < 1e-12);
    }

    #[test]
    fn product_matches_manual_chain() {
        let spec = shear_spec();
        let w = Word::new(vec![2, 1, 1]);
        let l1 = &spec.level(1).maps()[1];
        let l2 = &spec.level(2).maps()[0];
        let l3 = &spec.level(3).maps()[0];
        let manual = mat_mul(&mat_mul(l1, l2).unwrap(), l3).unwrap();
        assert_eq!(product(&spec, &w).unwrap().product, manual);
    }
}
