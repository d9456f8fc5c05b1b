//! Self-affine Moran systems: level schedules, matrix collections,
//! translation schemes and the seed region, plus config parsing and the
//! standing-assumption checks.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::SpecError;
use crate::linalg::{raw_singular_values, Matrix, MAX_DIM, SINGULAR_DET};

/// Levels scanned by the vanishing-diameter heuristic.
pub const DIAMETER_SCAN_LEVELS: usize = 10_000;
/// Threshold the running product of level-wise max α₁ must drop below.
pub const DIAMETER_SCAN_THRESHOLD: f64 = 1e-3;

/// One level Ξ_k: its maps and, optionally, the translation attached to each
/// child index.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSpec {
    maps: Vec<Matrix>,
    digits: Option<Vec<Vec<f64>>>,
}

impl LevelSpec {
    pub fn new(maps: Vec<Matrix>, digits: Option<Vec<Vec<f64>>>) -> Self {
        LevelSpec { maps, digits }
    }

    pub fn branch_count(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[Matrix] {
        &self.maps
    }

    pub fn digits(&self) -> Option<&[Vec<f64>]> {
        self.digits.as_deref()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Periodic,
    ExplicitPrefixThenPeriodic,
    GeometricBlocks,
}

/// Finite rule producing Ξ_k for every k ≥ 1.
///
/// * `constant`: the single listed level everywhere.
/// * `periodic`: `levels[(k−1) mod L]`.
/// * `explicit_prefix_then_periodic`: the first `L − period` levels once,
///   then the last `period` levels cyclically.
/// * `geometric_blocks`: with base b and ratio r, level k uses
///   `levels[j mod L]` where j counts the i ≥ 0 with b·rⁱ < r·k. Block
///   boundaries therefore sit at k = b·r^{i−1}; b = 3, r = 2 with two levels
///   gives the alternation 1 | 2–3 | 4–6 | 7–12 | 13–24 | …
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    kind: ScheduleKind,
    levels: Vec<LevelSpec>,
    block_base: Option<u64>,
    block_ratio: Option<u64>,
    period: Option<usize>,
}

impl Schedule {
    pub fn constant(level: LevelSpec) -> Self {
        Schedule {
            kind: ScheduleKind::Constant,
            levels: vec![level],
            block_base: None,
            block_ratio: None,
            period: None,
        }
    }

    pub fn periodic(levels: Vec<LevelSpec>) -> Self {
        assert!(!levels.is_empty());
        Schedule {
            kind: ScheduleKind::Periodic,
            levels,
            block_base: None,
            block_ratio: None,
            period: None,
        }
    }

    pub fn prefix_then_periodic(levels: Vec<LevelSpec>, period: usize) -> Self {
        assert!(period >= 1 && period <= levels.len());
        Schedule {
            kind: ScheduleKind::ExplicitPrefixThenPeriodic,
            levels,
            block_base: None,
            block_ratio: None,
            period: Some(period),
        }
    }

    pub fn geometric_blocks(levels: Vec<LevelSpec>, base: u64, ratio: u64) -> Self {
        assert!(!levels.is_empty() && base >= 1 && ratio >= 2);
        Schedule {
            kind: ScheduleKind::GeometricBlocks,
            levels,
            block_base: Some(base),
            block_ratio: Some(ratio),
            period: None,
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// The distinct level specifications the rule cycles through.
    pub fn levels(&self) -> &[LevelSpec] {
        &self.levels
    }

    /// Index into [`Schedule::levels`] used at level `k ≥ 1`.
    pub fn level_index(&self, k: usize) -> usize {
        assert!(k >= 1, "levels are numbered from 1");
        let len = self.levels.len();
        match self.kind {
            ScheduleKind::Constant => 0,
            ScheduleKind::Periodic => (k - 1) % len,
            ScheduleKind::ExplicitPrefixThenPeriodic => {
                let period = self.period.unwrap_or(len);
                let prefix = len - period;
                if k <= prefix {
                    k - 1
                } else {
                    prefix + (k - 1 - prefix) % period
                }
            }
            ScheduleKind::GeometricBlocks => {
                let base = self.block_base.unwrap_or(1) as u128;
                let ratio = self.block_ratio.unwrap_or(2) as u128;
                let target = ratio * k as u128;
                let mut boundary = base;
                let mut j = 0usize;
                while boundary < target {
                    j += 1;
                    boundary = boundary.saturating_mul(ratio);
                }
                j % len
            }
        }
    }

    pub fn level(&self, k: usize) -> &LevelSpec {
        &self.levels[self.level_index(k)]
    }

    /// True when every level uses the same collection of maps.
    pub fn is_stationary(&self) -> bool {
        self.levels.iter().all(|l| l.maps == self.levels[0].maps)
    }
}

/// Axis-aligned box in R^d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    /// The box grown by `margin` on every side.
    pub fn inflated(&self, margin: f64) -> BoxRegion {
        BoxRegion {
            lo: self.lo.iter().map(|a| a - margin).collect(),
            hi: self.hi.iter().map(|b| b + margin).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationKind {
    DigitGrid,
    FiniteAlphabet,
    RandomIid,
    Explicit,
}

/// Explicit translation for one word (digits 1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitTranslation {
    pub word: Vec<usize>,
    pub w: Vec<f64>,
}

/// How the translation w_{u_1…u_j} of each map is chosen.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslationScheme {
    pub kind: TranslationKind,
    pub alphabet: Option<Vec<Vec<f64>>>,
    pub region: Option<BoxRegion>,
    pub seed: Option<u64>,
    pub table: Option<Vec<ExplicitTranslation>>,
}

impl TranslationScheme {
    pub fn digit_grid() -> Self {
        TranslationScheme {
            kind: TranslationKind::DigitGrid,
            alphabet: None,
            region: None,
            seed: None,
            table: None,
        }
    }
}

/// A fully materialised self-affine Moran system.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec {
    dim: usize,
    schedule: Schedule,
    translations: TranslationScheme,
    seed_region: BoxRegion,
}

/// α₊ = sup α₁(T_{k,i}) and α₋ = inf α_d(T_{k,i}).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AlphaBounds {
    pub alpha_plus: f64,
    pub alpha_minus: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

/// A violated standing assumption. `level` is the 1-based position in the
/// schedule's level list, `map` the 1-based map index within it.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "code")]
pub enum Finding {
    ContractionViolated {
        level: usize,
        map: usize,
        op_norm: f64,
    },
    NonsingularityViolated {
        level: usize,
        map: usize,
        det: f64,
    },
    DiameterNotVanishing {
        levels_scanned: usize,
        running_product: f64,
    },
    HalfNormExceeded {
        sup_norm: f64,
    },
}

impl Finding {
    pub fn code(&self) -> &'static str {
        match self {
            Finding::ContractionViolated { .. } => "ContractionViolated",
            Finding::NonsingularityViolated { .. } => "NonsingularityViolated",
            Finding::DiameterNotVanishing { .. } => "DiameterNotVanishing",
            Finding::HalfNormExceeded { .. } => "HalfNormExceeded",
        }
    }

    pub fn severity(&self) -> Severity {
        match self {
            Finding::HalfNormExceeded { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::ContractionViolated {
                level,
                map,
                op_norm,
            } => write!(f, "ContractionViolated: level {level} map {map} has norm {op_norm}"),
            Finding::NonsingularityViolated { level, map, det } => {
                write!(f, "NonsingularityViolated: level {level} map {map} has det {det:e}")
            }
            Finding::DiameterNotVanishing {
                levels_scanned,
                running_product,
            } => write!(
                f,
                "DiameterNotVanishing: max alpha_1 product is {running_product:e} after {levels_scanned} levels"
            ),
            Finding::HalfNormExceeded { sup_norm } => {
                write!(f, "HalfNormExceeded: sup norm {sup_norm} >= 1/2")
            }
        }
    }
}

impl SystemSpec {
    pub fn new(
        dim: usize,
        schedule: Schedule,
        translations: TranslationScheme,
        seed_region: BoxRegion,
    ) -> Result<Self, SpecError> {
        let spec = SystemSpec {
            dim,
            schedule,
            translations,
            seed_region,
        };
        spec.check_structure()?;
        Ok(spec)
    }

    /// Parses a config document without running [`validate`].
    pub fn parse_unvalidated(document: &str) -> Result<Self, SpecError> {
        let de = &mut serde_json::Deserializer::from_str(document);
        let doc: ConfigDoc = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = match e.path().to_string().as_str() {
                "?" | "." => "document".to_string(),
                p => p.to_string(),
            };
            SpecError::schema(path, e.into_inner().to_string())
        })?;
        doc.into_spec()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn translations(&self) -> &TranslationScheme {
        &self.translations
    }

    pub fn seed_region(&self) -> &BoxRegion {
        &self.seed_region
    }

    pub fn level(&self, k: usize) -> &LevelSpec {
        self.schedule.level(k)
    }

    /// True when every map of every level is `c·I`.
    pub fn first_non_scalar(&self) -> Option<(usize, usize)> {
        for (li, level) in self.schedule.levels.iter().enumerate() {
            for (mi, m) in level.maps.iter().enumerate() {
                if m.scalar_value().is_none() {
                    return Some((li + 1, mi + 1));
                }
            }
        }
        None
    }

    fn check_structure(&self) -> Result<(), SpecError> {
        let d = self.dim;
        if d == 0 || d > MAX_DIM {
            return Err(SpecError::schema(
                "dim",
                format!("must be in 1..={MAX_DIM}"),
            ));
        }
        check_region(&self.seed_region, d, "seed_region")?;
        let sched = &self.schedule;
        if sched.levels.is_empty() {
            return Err(SpecError::schema(
                "schedule.levels",
                "at least one level required",
            ));
        }
        match sched.kind {
            ScheduleKind::Constant if sched.levels.len() != 1 => {
                return Err(SpecError::schema(
                    "schedule.levels",
                    "constant schedule takes exactly one level",
                ))
            }
            ScheduleKind::ExplicitPrefixThenPeriodic => match sched.period {
                Some(p) if p >= 1 && p <= sched.levels.len() => {}
                _ => {
                    return Err(SpecError::schema(
                        "schedule.period",
                        "required, between 1 and the number of levels",
                    ))
                }
            },
            ScheduleKind::GeometricBlocks => {
                if !matches!(sched.block_base, Some(b) if b >= 1) {
                    return Err(SpecError::schema("schedule.block_base", "required, >= 1"));
                }
                if !matches!(sched.block_ratio, Some(r) if r >= 2) {
                    return Err(SpecError::schema("schedule.block_ratio", "required, >= 2"));
                }
            }
            _ => {}
        }
        for (li, level) in sched.levels.iter().enumerate() {
            let path = format!("schedule.levels[{li}]");
            if level.maps.len() < 2 {
                return Err(SpecError::schema(
                    format!("{path}.branch_count"),
                    "every level needs at least 2 maps",
                ));
            }
            for (mi, m) in level.maps.iter().enumerate() {
                if m.dim() != d {
                    return Err(SpecError::schema(
                        format!("{path}.maps[{mi}]"),
                        format!("expected a {d}x{d} matrix"),
                    ));
                }
            }
            if let Some(digits) = &level.digits {
                if digits.len() != level.maps.len() {
                    return Err(SpecError::schema(
                        format!("{path}.digits"),
                        "one digit per map required",
                    ));
                }
                for (di, v) in digits.iter().enumerate() {
                    check_vector(v, d, &format!("{path}.digits[{di}]"))?;
                }
            }
        }
        let tr = &self.translations;
        match tr.kind {
            TranslationKind::DigitGrid => {
                if let Some(li) = sched.levels.iter().position(|l| l.digits.is_none()) {
                    return Err(SpecError::schema(
                        format!("schedule.levels[{li}].digits"),
                        "digit_grid translations need digits at every level",
                    ));
                }
            }
            TranslationKind::FiniteAlphabet => match &tr.alphabet {
                Some(a) if !a.is_empty() => {
                    for (i, v) in a.iter().enumerate() {
                        check_vector(v, d, &format!("translations.alphabet[{i}]"))?;
                    }
                }
                _ => {
                    return Err(SpecError::schema(
                        "translations.alphabet",
                        "finite_alphabet needs a non-empty alphabet",
                    ))
                }
            },
            TranslationKind::RandomIid => match &tr.region {
                Some(r) => check_region(r, d, "translations.region")?,
                None => {
                    return Err(SpecError::schema(
                        "translations.region",
                        "random_iid needs a region",
                    ))
                }
            },
            TranslationKind::Explicit => match &tr.table {
                Some(t) => {
                    for (i, e) in t.iter().enumerate() {
                        check_vector(&e.w, d, &format!("translations.table[{i}].w"))?;
                        if e.word.is_empty() || e.word.contains(&0) {
                            return Err(SpecError::schema(
                                format!("translations.table[{i}].word"),
                                "non-empty word with 1-based digits required",
                            ));
                        }
                    }
                }
                None => {
                    return Err(SpecError::schema(
                        "translations.table",
                        "explicit translations need a table",
                    ))
                }
            },
        }
        Ok(())
    }
}

fn check_vector(v: &[f64], d: usize, path: &str) -> Result<(), SpecError> {
    if v.len() != d {
        return Err(SpecError::schema(path, format!("expected {d} coordinates")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SpecError::schema(path, "coordinates must be finite"));
    }
    Ok(())
}

fn check_region(r: &BoxRegion, d: usize, path: &str) -> Result<(), SpecError> {
    check_vector(&r.lo, d, &format!("{path}.lo"))?;
    check_vector(&r.hi, d, &format!("{path}.hi"))?;
    if r.lo.iter().zip(&r.hi).any(|(a, b)| a >= b) {
        return Err(SpecError::schema(path, "box must have non-empty interior"));
    }
    Ok(())
}

/// Parses and validates; any error-severity finding is returned as
/// [`SpecError::Invariant`].
pub fn parse_spec(document: &str) -> Result<SystemSpec, SpecError> {
    let spec = SystemSpec::parse_unvalidated(document)?;
    let errors: Vec<Finding> = validate(&spec)
        .into_iter()
        .filter(|f| f.severity() == Severity::Error)
        .collect();
    if errors.is_empty() {
        Ok(spec)
    } else {
        Err(SpecError::Invariant(errors))
    }
}

/// The level in force at depth `k ≥ 1`.
pub fn level(spec: &SystemSpec, k: usize) -> &LevelSpec {
    spec.level(k)
}

/// Checks the standing assumptions. Empty output means all hold.
pub fn validate(spec: &SystemSpec) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut sup_norm = 0.0_f64;
    for (li, level) in spec.schedule.levels.iter().enumerate() {
        for (mi, m) in level.maps.iter().enumerate() {
            let sv = raw_singular_values(m);
            sup_norm = sup_norm.max(sv[0]);
            if sv[0] >= 1.0 {
                findings.push(Finding::ContractionViolated {
                    level: li + 1,
                    map: mi + 1,
                    op_norm: sv[0],
                });
            }
            let det = m.det();
            if det.abs() <= SINGULAR_DET {
                findings.push(Finding::NonsingularityViolated {
                    level: li + 1,
                    map: mi + 1,
                    det,
                });
            }
        }
    }

    // Running product of the level-wise max α₁ as a proxy for max |J_u|.
    let level_max: Vec<f64> = spec
        .schedule
        .levels
        .iter()
        .map(|l| {
            l.maps
                .iter()
                .map(|m| raw_singular_values(m)[0])
                .fold(0.0, f64::max)
        })
        .collect();
    let log_threshold = DIAMETER_SCAN_THRESHOLD.ln();
    let mut log_product = 0.0;
    let mut vanished = false;
    for k in 1..=DIAMETER_SCAN_LEVELS {
        log_product += level_max[spec.schedule.level_index(k)].ln();
        if log_product < log_threshold {
            vanished = true;
            break;
        }
    }
    if !vanished {
        findings.push(Finding::DiameterNotVanishing {
            levels_scanned: DIAMETER_SCAN_LEVELS,
            running_product: log_product.exp(),
        });
    }

    if sup_norm >= 0.5 {
        findings.push(Finding::HalfNormExceeded { sup_norm });
    }
    findings
}

/// Exact α± over the schedule's distinct levels.
pub fn alpha_bounds(spec: &SystemSpec) -> AlphaBounds {
    let mut alpha_plus = 0.0_f64;
    let mut alpha_minus = f64::INFINITY;
    for level in &spec.schedule.levels {
        for m in &level.maps {
            let sv = raw_singular_values(m);
            alpha_plus = alpha_plus.max(sv[0]);
            alpha_minus = alpha_minus.min(*sv.last().unwrap());
        }
    }
    AlphaBounds {
        alpha_plus,
        alpha_minus,
    }
}

// ---------------------------------------------------------------------------
// Config document

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    dim: usize,
    seed_region: BoxRegion,
    schedule: ScheduleDoc,
    translations: TranslationDoc,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleDoc {
    kind: ScheduleKind,
    levels: Vec<LevelDoc>,
    block_base: Option<u64>,
    block_ratio: Option<u64>,
    period: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelDoc {
    branch_count: usize,
    maps: Vec<Vec<f64>>,
    digits: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum Density {
    Uniform,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TranslationDoc {
    kind: TranslationKind,
    alphabet: Option<Vec<Vec<f64>>>,
    region: Option<BoxRegion>,
    #[serde(alias = "assignment_seed")]
    seed: Option<u64>,
    #[allow(dead_code)]
    density: Option<Density>,
    table: Option<Vec<ExplicitTranslation>>,
}

impl ConfigDoc {
    fn into_spec(self) -> Result<SystemSpec, SpecError> {
        let d = self.dim;
        if d == 0 || d > MAX_DIM {
            return Err(SpecError::schema(
                "dim",
                format!("must be in 1..={MAX_DIM}"),
            ));
        }
        let mut sd = self.schedule;
        let mut levels = Vec::with_capacity(sd.levels.len());
        for (li, l) in std::mem::take(&mut sd.levels).into_iter().enumerate() {
            let path = format!("schedule.levels[{li}]");
            if l.maps.len() != l.branch_count {
                return Err(SpecError::schema(
                    format!("{path}.maps"),
                    format!(
                        "branch_count is {} but {} maps given",
                        l.branch_count,
                        l.maps.len()
                    ),
                ));
            }
            let mut maps = Vec::with_capacity(l.maps.len());
            for (mi, entries) in l.maps.iter().enumerate() {
                let m = Matrix::new(d, entries)
                    .map_err(|e| SpecError::schema(format!("{path}.maps[{mi}]"), e.to_string()))?;
                maps.push(m);
            }
            levels.push(LevelSpec::new(maps, l.digits));
        }
        if sd.kind == ScheduleKind::Periodic {
            if let Some(p) = sd.period {
                if p != levels.len() {
                    return Err(SpecError::schema(
                        "schedule.period",
                        "periodic schedules cycle through all levels",
                    ));
                }
            }
        }
        let schedule = Schedule {
            kind: sd.kind,
            levels,
            block_base: sd.block_base,
            block_ratio: sd.block_ratio,
            period: sd.period,
        };
        let t = self.translations;
        let translations = TranslationScheme {
            kind: t.kind,
            alphabet: t.alphabet,
            region: t.region,
            seed: t.seed,
            table: t.table,
        };
        SystemSpec::new(d, schedule, translations, self.seed_region)
    }
}
