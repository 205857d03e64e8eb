//! Slide complexity scoring and difficulty tiering.
//!
//! Each slide contributes three raw features: element count, distinct
//! element-type count and grid coverage. Every feature is standardised over
//! the whole cohort and squashed through a sigmoid, then the three are
//! combined with convex weights into a score in `(0, 1)`. Scores are split
//! into three tiers by one-dimensional k-means.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cgseg::{self, CgsegConfig, CgsegError};
use crate::inventory::{self, InventoryError, ShapeRecord};
use crate::raster::{self, RasterError, RasterImage};

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("cannot normalise an empty list")]
    EmptyInput,
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("tiering needs at least 3 distinct scores, found {0}")]
    TooFewDistinct(usize),
    #[error("record {0} has not been scored")]
    Unscored(String),
    #[error("tier {tier} has {available} members, {requested} requested")]
    UndersizedTier {
        tier: Tier,
        available: usize,
        requested: usize,
    },
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error(transparent)]
    Cgseg(#[from] CgsegError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Inventory(#[from] InventoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityFeatures {
    pub element_count: usize,
    pub type_count: usize,
    pub coverage: f64,
}

impl ComplexityFeatures {
    fn as_array(&self) -> [f64; 3] {
        [self.element_count as f64, self.type_count as f64, self.coverage]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Simple,
    Medium,
    Complex,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Simple, Tier::Medium, Tier::Complex];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Simple => "simple",
            Tier::Medium => "medium",
            Tier::Complex => "complex",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRecord {
    pub id: String,
    pub features: ComplexityFeatures,
    #[serde(default)]
    pub normalized: Option<[f64; 3]>,
    #[serde(default)]
    pub z: Option<f64>,
    #[serde(default)]
    pub tier: Option<Tier>,
}

impl ComplexityRecord {
    pub fn new(id: impl Into<String>, features: ComplexityFeatures) -> Self {
        Self {
            id: id.into(),
            features,
            normalized: None,
            z: None,
            tier: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for ScmWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
            epsilon: 1e-6,
        }
    }
}

impl ScmWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, ScmError> {
        let w = Self {
            alpha,
            beta,
            gamma,
            ..Self::default()
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ScmError> {
        if [self.alpha, self.beta, self.gamma].iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(ScmError::Weights("weights must be non-negative".into()));
        }
        let sum = self.alpha + self.beta + self.gamma;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ScmError::Weights(format!("weights sum to {sum}, expected 1")));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(ScmError::Weights("epsilon must be positive".into()));
        }
        Ok(())
    }

    fn combine(&self, n: [f64; 3]) -> f64 {
        self.alpha * n[0] + self.beta * n[1] + self.gamma * n[2]
    }
}

pub fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Population mean and standard deviation of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub sd: f64,
}

impl FeatureStats {
    pub fn of(xs: &[f64]) -> Result<Self, ScmError> {
        if xs.is_empty() {
            return Err(ScmError::EmptyInput);
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            sd: var.sqrt(),
        })
    }

    pub fn apply(&self, x: f64, epsilon: f64) -> f64 {
        sigmoid((x - self.mean) / (self.sd + epsilon))
    }
}

pub fn normalize(xs: &[f64], epsilon: f64) -> Result<Vec<f64>, ScmError> {
    let stats = FeatureStats::of(xs)?;
    Ok(xs.iter().map(|&x| stats.apply(x, epsilon)).collect())
}

/// Per-dimension statistics of a scored cohort, kept so new samples can be
/// scored against a frozen normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub dims: [FeatureStats; 3],
}

impl CohortStats {
    pub fn of(features: &[ComplexityFeatures]) -> Result<Self, ScmError> {
        if features.is_empty() {
            return Err(ScmError::EmptyCohort);
        }
        let column = |d: usize| features.iter().map(|f| f.as_array()[d]).collect::<Vec<_>>();
        Ok(Self {
            dims: [
                FeatureStats::of(&column(0))?,
                FeatureStats::of(&column(1))?,
                FeatureStats::of(&column(2))?,
            ],
        })
    }

    pub fn normalized(&self, f: &ComplexityFeatures, epsilon: f64) -> [f64; 3] {
        let raw = f.as_array();
        [0, 1, 2].map(|d| self.dims[d].apply(raw[d], epsilon))
    }

    pub fn score(&self, f: &ComplexityFeatures, weights: &ScmWeights) -> f64 {
        weights.combine(self.normalized(f, weights.epsilon))
    }
}

/// Normalises every dimension over the whole cohort and fills `normalized`
/// and `z` on each record.
pub fn score_cohort(
    records: &mut [ComplexityRecord],
    weights: &ScmWeights,
) -> Result<CohortStats, ScmError> {
    weights.validate()?;
    let features: Vec<_> = records.iter().map(|r| r.features).collect();
    let stats = CohortStats::of(&features)?;
    for r in records.iter_mut() {
        let n = stats.normalized(&r.features, weights.epsilon);
        r.normalized = Some(n);
        r.z = Some(weights.combine(n));
    }
    Ok(stats)
}

pub fn features_from_inventory(
    shapes: &[ShapeRecord],
    img: &RasterImage,
    cfg: &CgsegConfig,
) -> Result<ComplexityFeatures, ScmError> {
    let types: BTreeSet<&str> = shapes.iter().map(|s| s.type_name.as_str()).collect();
    Ok(ComplexityFeatures {
        element_count: shapes.len(),
        type_count: types.len(),
        coverage: cgseg::coverage_ratio(img, cfg)?,
    })
}

/// Reads `<id>.json` inventories paired with `<id>.png` renders.
pub fn load_corpus(dir: &Path, cfg: &CgsegConfig) -> Result<Vec<ComplexityRecord>, ScmError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| ScmError::Corpus(format!("cannot read {}: {e}", dir.display())))?;
    let mut ids = BTreeSet::new();
    for entry in entries {
        let path = entry
            .map_err(|e| ScmError::Corpus(e.to_string()))?
            .path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem() {
                ids.insert(stem.to_string_lossy().into_owned());
            }
        }
    }
    let mut records = Vec::with_capacity(ids.len());
    for id in ids {
        let shapes = inventory::load_inventory(dir.join(format!("{id}.json")))?;
        let png = dir.join(format!("{id}.png"));
        if !png.is_file() {
            return Err(ScmError::Corpus(format!("missing image for sample {id}")));
        }
        let img = raster::load_image(&png)?;
        records.push(ComplexityRecord::new(id, features_from_inventory(&shapes, &img, cfg)?));
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tiering {
    /// Ascending: simple, medium, complex.
    pub centers: [f64; 3],
    pub tiers: Vec<Tier>,
}

const KMEANS_MAX_ITERS: usize = 100;
const KMEANS_TOL: f64 = 1e-9;

fn nearest(centers: &[f64; 3], x: f64) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if (x - centers[k]).abs() < (x - centers[best]).abs() {
            best = k;
        }
    }
    best
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn lloyd(sorted: &[f64], mut centers: [f64; 3]) -> ([f64; 3], f64) {
    for _ in 0..KMEANS_MAX_ITERS {
        let mut sums = [0.0; 3];
        let mut counts = [0usize; 3];
        for &x in sorted {
            let k = nearest(&centers, x);
            sums[k] += x;
            counts[k] += 1;
        }
        let mut moved = 0.0f64;
        for k in 0..3 {
            if counts[k] > 0 {
                let c = sums[k] / counts[k] as f64;
                moved = moved.max((c - centers[k]).abs());
                centers[k] = c;
            }
        }
        if moved < KMEANS_TOL {
            break;
        }
    }
    centers.sort_by(f64::total_cmp);
    let sse = sorted
        .iter()
        .map(|&x| (x - centers[nearest(&centers, x)]).powi(2))
        .sum();
    (centers, sse)
}

/// Three-way 1-D k-means over complexity scores.
///
/// Lloyd iterations start from the quartiles. A second run starts from the
/// max-min spread (minimum, maximum, then the point farthest from both) and
/// replaces the first only when it reaches a strictly lower within-cluster
/// sum of squares, which keeps small outer groups from being swallowed when
/// one group dominates the quartiles.
pub fn kmeans_tier(zs: &[f64]) -> Result<Tiering, ScmError> {
    let mut sorted = zs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(ScmError::TooFewDistinct(distinct.len()));
    }

    let quartiles = [0.25, 0.5, 0.75].map(|q| quantile(&sorted, q));
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let mut spread_pick = distinct[1];
    let mut best_gap = f64::NEG_INFINITY;
    for &x in &distinct {
        let gap = (x - lo).min(hi - x);
        if gap > best_gap {
            best_gap = gap;
            spread_pick = x;
        }
    }
    let mut spread = [lo, spread_pick, hi];
    spread.sort_by(f64::total_cmp);

    let (mut centers, sse) = lloyd(&sorted, quartiles);
    let (alt_centers, alt_sse) = lloyd(&sorted, spread);
    if alt_sse < sse {
        centers = alt_centers;
    }
    let tiers = zs.iter().map(|&z| Tier::ALL[nearest(&centers, z)]).collect();
    Ok(Tiering { centers, tiers })
}

/// Tiers every scored record in place.
pub fn tier_cohort(records: &mut [ComplexityRecord]) -> Result<[f64; 3], ScmError> {
    let zs = records
        .iter()
        .map(|r| r.z.ok_or_else(|| ScmError::Unscored(r.id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let tiering = kmeans_tier(&zs)?;
    for (r, t) in records.iter_mut().zip(&tiering.tiers) {
        r.tier = Some(*t);
    }
    Ok(tiering.centers)
}

/// Seeded uniform sampling without replacement, `n_per_tier` ids from each
/// tier. Ids within a tier are returned in ascending order.
pub fn sample_tiers(
    records: &[ComplexityRecord],
    n_per_tier: usize,
    seed: u64,
) -> Result<BTreeMap<Tier, Vec<String>>, ScmError> {
    let mut by_tier: BTreeMap<Tier, Vec<&str>> = Tier::ALL.iter().map(|t| (*t, Vec::new())).collect();
    for r in records {
        if let Some(t) = r.tier {
            by_tier.get_mut(&t).expect("all tiers present").push(&r.id);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for (tier, mut ids) in by_tier {
        if ids.len() < n_per_tier {
            return Err(ScmError::UndersizedTier {
                tier,
                available: ids.len(),
                requested: n_per_tier,
            });
        }
        ids.sort_unstable();
        let mut picked: Vec<String> = rand::seq::index::sample(&mut rng, ids.len(), n_per_tier)
            .into_iter()
            .map(|i| ids[i].to_string())
            .collect();
        picked.sort();
        out.insert(tier, picked);
    }
    Ok(out)
}

/// Share of the cohort in each tier, in percent.
pub fn tier_proportions(records: &[ComplexityRecord]) -> BTreeMap<Tier, f64> {
    let total = records.iter().filter(|r| r.tier.is_some()).count().max(1) as f64;
    Tier::ALL
        .iter()
        .map(|t| {
            let n = records.iter().filter(|r| r.tier == Some(*t)).count();
            (*t, 100.0 * n as f64 / total)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inventory::InchBox;
    use proptest::prelude::*;

    fn feats(c: usize, e: usize, v: f64) -> ComplexityFeatures {
        ComplexityFeatures {
            element_count: c,
            type_count: e,
            coverage: v,
        }
    }

    #[test]
    fn normalize_examples() {
        assert!(normalize(&[3.0; 5], 1e-6).unwrap().iter().all(|&x| x == 0.5));
        assert_eq!(normalize(&[42.0], 1e-6).unwrap(), vec![0.5]);
        let n = normalize(&[0.0, 10.0], 1e-6).unwrap();
        assert!((n[0] - 0.26894).abs() < 1e-4);
        assert!((n[1] - 0.73106).abs() < 1e-4);
        assert!(matches!(normalize(&[], 1e-6), Err(ScmError::EmptyInput)));
    }

    #[test]
    fn score_cohort_examples() {
        let mut one = vec![ComplexityRecord::new("a", feats(7, 3, 0.4))];
        score_cohort(&mut one, &ScmWeights::new(0.2, 0.3, 0.5).unwrap()).unwrap();
        assert_eq!(one[0].z, Some(0.5));

        // Two records: each dimension standardises to -1 and +1.
        let mut two = vec![
            ComplexityRecord::new("a", feats(1, 1, 0.1)),
            ComplexityRecord::new("b", feats(9, 3, 0.9)),
        ];
        score_cohort(&mut two, &ScmWeights::default()).unwrap();
        let lo = (1.0 / (1.0 + (4.0 / (4.0 + 1e-6f64)).exp())
            + 1.0 / (1.0 + (1.0 / (1.0 + 1e-6f64)).exp())
            + 1.0 / (1.0 + (0.4 / (0.4 + 1e-6f64)).exp()))
            / 3.0;
        assert!((two[0].z.unwrap() - lo).abs() < 1e-12);
        assert!((two[1].z.unwrap() - (1.0 - lo)).abs() < 1e-12);

        let mut degenerate = two.clone();
        score_cohort(&mut degenerate, &ScmWeights::new(1.0, 0.0, 0.0).unwrap()).unwrap();
        for r in &degenerate {
            assert_eq!(r.z.unwrap(), r.normalized.unwrap()[0]);
        }
        assert!(matches!(score_cohort(&mut [], &ScmWeights::default()), Err(ScmError::EmptyCohort)));
    }

    #[test]
    fn weights_validation() {
        assert!(ScmWeights::new(0.5, 0.5, 0.1).is_err());
        assert!(ScmWeights::new(-0.5, 1.0, 0.5).is_err());
        assert!(ScmWeights::new(0.25, 0.25, 0.5).is_ok());
    }

    #[test]
    fn inventory_features() {
        let img = RasterImage::filled(200, 200, [255, 255, 255]);
        let cfg = CgsegConfig::default();
        assert_eq!(features_from_inventory(&[], &img, &cfg).unwrap(), feats(0, 0, 0.0));
        let b = InchBox::default();
        let shapes = vec![
            ShapeRecord::new("textbox", b, "a"),
            ShapeRecord::new("textbox", b, "b"),
            ShapeRecord::new("textbox", b, "c"),
            ShapeRecord::new("picture", b, ""),
        ];
        let f = features_from_inventory(&shapes, &img, &cfg).unwrap();
        assert_eq!((f.element_count, f.type_count), (4, 2));
    }

    #[test]
    fn kmeans_three_groups_and_errors() {
        let mut zs = vec![0.1; 10];
        zs.extend([0.5; 10]);
        zs.extend([0.9; 10]);
        let t = kmeans_tier(&zs).unwrap();
        assert_eq!(&t.tiers[..10], &[Tier::Simple; 10]);
        assert_eq!(&t.tiers[10..20], &[Tier::Medium; 10]);
        assert_eq!(&t.tiers[20..], &[Tier::Complex; 10]);
        assert!((t.centers[0] - 0.1).abs() < 1e-12);
        assert!(matches!(kmeans_tier(&[0.2, 0.2, 0.7]), Err(ScmError::TooFewDistinct(2))));
    }

    #[test]
    fn kmeans_unbalanced_groups() {
        let mut zs = vec![0.1, 0.11, 0.12];
        zs.extend((0..100).map(|i| 0.5 + i as f64 * 1e-4));
        zs.extend([0.9, 0.91]);
        let t = kmeans_tier(&zs).unwrap();
        assert_eq!(&t.tiers[..3], &[Tier::Simple; 3]);
        assert!(t.tiers[3..103].iter().all(|&x| x == Tier::Medium));
        assert_eq!(&t.tiers[103..], &[Tier::Complex; 2]);
    }

    #[test]
    fn sampling_examples() {
        let mut recs: Vec<_> = (0..3)
            .map(|i| {
                let mut r = ComplexityRecord::new(format!("s{i}"), feats(0, 0, 0.0));
                r.tier = Some(Tier::ALL[i]);
                r
            })
            .collect();
        let picked = sample_tiers(&recs, 1, 9).unwrap();
        assert_eq!(picked[&Tier::Medium], vec!["s1".to_string()]);
        assert!(matches!(sample_tiers(&recs, 2, 9), Err(ScmError::UndersizedTier { .. })));

        recs.clear();
        for i in 0..1000 {
            let mut r = ComplexityRecord::new(format!("r{i:04}"), feats(0, 0, 0.0));
            r.tier = Some(Tier::ALL[i % 3]);
            recs.push(r);
        }
        let a = sample_tiers(&recs, 100, 42).unwrap();
        let b = sample_tiers(&recs, 100, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values().map(Vec::len).sum::<usize>(), 300);
        assert!(a.values().all(|v| v.len() == 100));
        let distinct: BTreeSet<_> = a.values().flatten().collect();
        assert_eq!(distinct.len(), 300);
        assert_ne!(a, sample_tiers(&recs, 100, 43).unwrap());
    }

    proptest! {
        #[test]
        fn normalize_is_bounded_and_order_preserving(xs in prop::collection::vec(-1e3f64..1e3, 1..50)) {
            let n = normalize(&xs, 1e-6).unwrap();
            for i in 0..xs.len() {
                prop_assert!(n[i] > 0.0 && n[i] < 1.0);
                for j in 0..xs.len() {
                    if xs[i] < xs[j] {
                        prop_assert!(n[i] < n[j]);
                    }
                }
            }
        }

        #[test]
        fn normalize_ignores_affine_shift(xs in prop::collection::vec(0f64..100.0, 2..30), k in -50f64..50.0) {
            let shifted: Vec<f64> = xs.iter().map(|x| x + k).collect();
            let a = normalize(&xs, 1e-6).unwrap();
            let b = normalize(&shifted, 1e-6).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn score_is_monotone_under_frozen_stats(
            raw in prop::collection::vec((0usize..40, 0usize..10, 0f64..1.0), 2..20),
            bump in 1usize..5,
        ) {
            let features: Vec<_> = raw.iter().map(|&(c, e, v)| feats(c, e, v)).collect();
            let stats = CohortStats::of(&features).unwrap();
            let w = ScmWeights::default();
            let f = features[0];
            let base = stats.score(&f, &w);
            prop_assert!(base > 0.0 && base < 1.0);
            prop_assert!(stats.score(&feats(f.element_count + bump, f.type_count, f.coverage), &w) >= base);
            prop_assert!(stats.score(&feats(f.element_count, f.type_count + bump, f.coverage), &w) >= base);
            prop_assert!(stats.score(&feats(f.element_count, f.type_count, f.coverage + 0.01), &w) >= base);
        }
    }
}
