//! Points of the attractor, box counts and rasters.
//!
//! A depth-K word u is sent to
//!
//! ```text
//! Π(u) = w_{u|1} + T_{u|1} w_{u|2} + … + T_{u|K−1} w_{u|K} + T_{u|K} x₀
//! ```
//!
//! with x₀ the centre of the seed region J. The distance to the limit point
//! is at most α₊^K·|J|.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::AttractorError;
use crate::linalg::{mul_unchecked, Matrix};
use crate::symbolic::{check_word, Word};
use crate::system::{alpha_bounds, BoxRegion, SystemSpec, TranslationKind};

/// Largest word count `full_enumeration` accepts.
pub const ENUMERATION_LIMIT: u64 = 10_000_000;
/// Points generated per independently seeded block in `random_codes`.
const BLOCK: usize = 4096;

type Vector = SmallVec<[f64; 8]>;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn extend_hash(h: u64, digit: usize) -> u64 {
    mix(h ^ (digit as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

fn unit_f64(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Resolves w_{u|k} for every prefix of a word. Random schemes are pure
/// functions of (seed, prefix), so words sharing a prefix share its
/// translation without any cache.
pub struct Translations<'a> {
    spec: &'a SystemSpec,
    seed: u64,
    table: HashMap<Vec<usize>, Vector>,
}

impl<'a> Translations<'a> {
    /// `run_seed` is used when the scheme carries no seed of its own.
    pub fn new(spec: &'a SystemSpec, run_seed: u64) -> Self {
        let t = spec.translations();
        let table = t
            .table
            .iter()
            .flatten()
            .map(|e| (e.word.clone(), SmallVec::from_slice(&e.w)))
            .collect();
        Translations {
            spec,
            seed: t.seed.unwrap_or(run_seed),
            table,
        }
    }

    fn root_hash(&self) -> u64 {
        mix(self.seed)
    }

    /// w for the prefix `word` (|word| = k ≥ 1), whose hash is `h`.
    fn resolve(&self, word: &[usize], h: u64) -> Result<Vector, AttractorError> {
        let k = word.len();
        let digit = word[k - 1];
        let t = self.spec.translations();
        let unresolved = || AttractorError::UnresolvedTranslation(word.to_vec());
        match t.kind {
            TranslationKind::DigitGrid => {
                let digits = self.spec.level(k).digits().ok_or_else(unresolved)?;
                Ok(SmallVec::from_slice(&digits[digit - 1]))
            }
            TranslationKind::FiniteAlphabet => {
                let alphabet = t
                    .alphabet
                    .as_ref()
                    .filter(|a| !a.is_empty())
                    .ok_or_else(unresolved)?;
                Ok(SmallVec::from_slice(
                    &alphabet[(h % alphabet.len() as u64) as usize],
                ))
            }
            TranslationKind::RandomIid => {
                let region = t.region.as_ref().ok_or_else(unresolved)?;
                Ok(region
                    .lo
                    .iter()
                    .zip(&region.hi)
                    .enumerate()
                    .map(|(i, (a, b))| a + (b - a) * unit_f64(mix(h.wrapping_add(i as u64))))
                    .collect())
            }
            TranslationKind::Explicit => self.table.get(word).cloned().ok_or_else(unresolved),
        }
    }

    /// Π(u) at finite depth, written to `out`.
    fn project_into(&self, word: &[usize], out: &mut [f64]) -> Result<(), AttractorError> {
        let d = self.spec.dim();
        let mut p = Matrix::identity(d);
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut h = self.root_hash();
        for k in 1..=word.len() {
            h = extend_hash(h, word[k - 1]);
            let w = self.resolve(&word[..k], h)?;
            for (o, v) in out.iter_mut().zip(p.apply(&w)) {
                *o += v;
            }
            p = mul_unchecked(&p, &self.spec.level(k).maps()[word[k - 1] - 1]);
        }
        let x0 = self.spec.seed_region().center();
        for (o, v) in out.iter_mut().zip(p.apply(&x0)) {
            *o += v;
        }
        Ok(())
    }
}

/// Π(u) for a word of length K ≥ 1, anchored at the centre of J.
pub fn project(spec: &SystemSpec, w: &Word, run_seed: u64) -> Result<Vec<f64>, AttractorError> {
    if w.is_empty() {
        return Err(AttractorError::InvalidArgument(
            "word must be non-empty".into(),
        ));
    }
    check_word(spec, w)?;
    let mut out = vec![0.0; spec.dim()];
    Translations::new(spec, run_seed).project_into(w.digits(), &mut out)?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    FullEnumeration,
    RandomCodes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub depth: usize,
    pub mode: SampleMode,
    pub seed: u64,
    pub count: usize,
}

/// Points in R^d stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub dim: usize,
    pub coords: Vec<f64>,
    pub generation: Generation,
    /// α₊^K·|J|, the distance bound to the limit set.
    pub truncation_error: f64,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// A cloud from explicit points, e.g. for tests.
    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Self {
        PointCloud {
            dim,
            coords: points.iter().flatten().cloned().collect(),
            generation: Generation {
                depth: 0,
                mode: SampleMode::FullEnumeration,
                seed: 0,
                count: points.len(),
            },
            truncation_error: 0.0,
        }
    }
}

/// Π n_k for k = 1..=depth, as a float to survive overflow.
pub fn word_count(spec: &SystemSpec, depth: usize) -> f64 {
    (1..=depth)
        .map(|k| spec.level(k).branch_count() as f64)
        .product()
}

/// Generates attractor points from depth-K words. `full_enumeration` takes
/// every word in lexicographic order (`count` is ignored); `random_codes`
/// draws `count` words digit by digit, uniformly, from ChaCha streams seeded
/// per block of 4096 points.
pub fn sample_cloud(
    spec: &SystemSpec,
    depth: usize,
    mode: SampleMode,
    count: usize,
    seed: u64,
) -> Result<PointCloud, AttractorError> {
    if depth == 0 {
        return Err(AttractorError::InvalidArgument(
            "depth must be at least 1".into(),
        ));
    }
    let d = spec.dim();
    let tr = Translations::new(spec, seed);
    let coords = match mode {
        SampleMode::FullEnumeration => {
            let size = word_count(spec, depth);
            if size > ENUMERATION_LIMIT as f64 {
                return Err(AttractorError::EnumerationTooLarge {
                    size,
                    limit: ENUMERATION_LIMIT,
                });
            }
            enumerate_all(spec, &tr, depth, size as usize)?
        }
        SampleMode::RandomCodes => {
            let blocks = count.div_ceil(BLOCK);
            let parts: Result<Vec<Vec<f64>>, AttractorError> = (0..blocks)
                .into_par_iter()
                .map(|b| {
                    let n = BLOCK.min(count - b * BLOCK);
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(b as u64)));
                    let mut word = vec![0usize; depth];
                    let mut out = vec![0.0; n * d];
                    for i in 0..n {
                        for (k, u) in word.iter_mut().enumerate() {
                            *u = rng.gen_range(1..=spec.level(k + 1).branch_count());
                        }
                        tr.project_into(&word, &mut out[i * d..(i + 1) * d])?;
                    }
                    Ok(out)
                })
                .collect();
            parts?.concat()
        }
    };
    let n = coords.len() / d;
    let ab = alpha_bounds(spec);
    Ok(PointCloud {
        dim: d,
        coords,
        generation: Generation {
            depth,
            mode,
            seed,
            count: n,
        },
        truncation_error: ab.alpha_plus.powi(depth as i32) * spec.seed_region().diameter(),
    })
}

/// Every depth-K word in lexicographic order, sharing prefix work.
fn enumerate_all(
    spec: &SystemSpec,
    tr: &Translations,
    depth: usize,
    size: usize,
) -> Result<Vec<f64>, AttractorError> {
    let d = spec.dim();
    let x0 = spec.seed_region().center();
    let mut out = Vec::with_capacity(size * d);
    // Per depth: running product, partial sum and prefix hash.
    let mut prods = vec![Matrix::identity(d); depth + 1];
    let mut sums: Vec<Vec<f64>> = vec![vec![0.0; d]; depth + 1];
    let mut hashes = vec![tr.root_hash(); depth + 1];
    let mut word = vec![0usize; depth];
    let mut k = 0usize;
    loop {
        // Advance the digit at position k (0-based) or backtrack.
        if word[k] == spec.level(k + 1).branch_count() {
            word[k] = 0;
            if k == 0 {
                break;
            }
            k -= 1;
            continue;
        }
        word[k] += 1;
        let u = word[k];
        hashes[k + 1] = extend_hash(hashes[k], u);
        let w = tr.resolve(&word[..=k], hashes[k + 1])?;
        let pw = prods[k].apply(&w);
        sums[k + 1] = sums[k].iter().zip(pw).map(|(a, b)| a + b).collect();
        prods[k + 1] = mul_unchecked(&prods[k], &spec.level(k + 1).maps()[u - 1]);
        if k + 1 == depth {
            let tail = prods[depth].apply(&x0);
            out.extend(sums[depth].iter().zip(tail).map(|(a, b)| a + b));
        } else {
            k += 1;
        }
    }
    Ok(out)
}

/// Occupied half-open cells [iε, (i+1)ε)^d of the origin-anchored grid.
pub fn box_count(cloud: &PointCloud, epsilon: f64) -> u64 {
    assert!(epsilon > 0.0, "epsilon must be positive");
    if cloud.is_empty() {
        return 0;
    }
    let d = cloud.dim;
    let cells: Vec<i64> = cloud
        .coords
        .par_iter()
        .map(|x| (x / epsilon).floor() as i64)
        .collect();
    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    for c in cells.chunks_exact(d) {
        for i in 0..d {
            lo[i] = lo[i].min(c[i]);
            hi[i] = hi[i].max(c[i]);
        }
    }
    let spans: Vec<u128> = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| (b - a) as u128 + 1)
        .collect();
    let fits = spans
        .iter()
        .try_fold(1u128, |acc, s| {
            acc.checked_mul(*s).filter(|v| *v <= u64::MAX as u128)
        })
        .is_some();
    if fits {
        let mut keys: Vec<u64> = cells
            .par_chunks_exact(d)
            .map(|c| {
                let mut key = 0u128;
                for i in 0..d {
                    key = key * spans[i] + (c[i] - lo[i]) as u128;
                }
                key as u64
            })
            .collect();
        keys.par_sort_unstable();
        keys.dedup();
        keys.len() as u64
    } else {
        let mut keys: Vec<&[i64]> = cells.chunks_exact(d).collect();
        keys.par_sort_unstable();
        keys.dedup();
        keys.len() as u64
    }
}

/// Counts at each scale with the least-squares fit of ln N against ln 1/ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCountCurve {
    pub scales: Vec<f64>,
    pub counts: Vec<u64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl BoxCountCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,count,log_inv_eps,log_count\n");
        for (e, c) in self.scales.iter().zip(&self.counts) {
            s.push_str(&format!("{},{},{},{}\n", e, c, -e.ln(), (*c as f64).ln()));
        }
        s
    }
}

/// Least-squares slope of (ln 1/ε, ln N_ε). Needs at least three distinct
/// positive scales and a non-empty cloud.
pub fn boxdim_fit(cloud: &PointCloud, scales: &[f64]) -> Result<BoxCountCurve, AttractorError> {
    let mut distinct: Vec<f64> = scales.to_vec();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    if distinct.len() < 3 || distinct.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(AttractorError::DegenerateScales(format!(
            "need at least 3 distinct positive scales, got {scales:?}"
        )));
    }
    if cloud.is_empty() {
        return Err(AttractorError::DegenerateScales("empty cloud".into()));
    }
    let counts: Vec<u64> = scales.iter().map(|e| box_count(cloud, *e)).collect();
    let xs: Vec<f64> = scales.iter().map(|e| -e.ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|c| (*c as f64).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(BoxCountCurve {
        scales: scales.to_vec(),
        counts,
        slope,
        intercept,
        r2,
    })
}

/// Dyadic scales 2^-1, 2^-2, … down to twice the truncation error, without
/// scales where more than a tenth of the points sit in separate cells.
pub fn default_scales(cloud: &PointCloud) -> Vec<f64> {
    let floor = (2.0 * cloud.truncation_error).max(1e-12);
    let limit = (cloud.len() as u64 / 10).max(1);
    let mut out = Vec::new();
    let mut e = 0.5;
    while e >= floor && out.len() < 40 {
        if box_count(cloud, e) > limit {
            break;
        }
        out.push(e);
        e *= 0.5;
    }
    out
}

/// Square binary raster; row 0 is the top.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub resolution: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn occupied(&self) -> usize {
        self.pixels.iter().filter(|p| **p != 0).count()
    }

    /// Value at column x, row y counted from the bottom.
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[(self.resolution - 1 - y) * self.resolution + x]
    }

    /// Binary portable graymap, maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.resolution, self.resolution).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Marks every pixel of `region` hit by a point; points outside are dropped.
/// The origin is the lower-left corner of the region.
pub fn render(
    cloud: &PointCloud,
    region: &BoxRegion,
    resolution: usize,
) -> Result<Raster, AttractorError> {
    if cloud.dim != 2 {
        return Err(AttractorError::NotPlanar(cloud.dim));
    }
    if resolution == 0 {
        return Err(AttractorError::InvalidArgument(
            "resolution must be positive".into(),
        ));
    }
    let mut pixels = vec![0u8; resolution * resolution];
    let r = resolution as f64;
    let cell = |v: f64, lo: f64, hi: f64| -> Option<usize> {
        let t = (v - lo) / (hi - lo) * r;
        if t >= 0.0 && t < r {
            Some(t as usize)
        } else if v == hi {
            Some(resolution - 1)
        } else {
            None
        }
    };
    for p in cloud.points() {
        if let (Some(x), Some(y)) = (
            cell(p[0], region.lo[0], region.hi[0]),
            cell(p[1], region.lo[1], region.hi[1]),
        ) {
            pixels[(resolution - 1 - y) * resolution + x] = 255;
        }
    }
    Ok(Raster { resolution, pixels })
}
