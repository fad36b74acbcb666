//! Exact brute-force descriptor matching with the Lowe ratio and mutual
//! nearest-neighbour filters.

mod pipeline;

pub use pipeline::{match_count, match_count_with, FeatureSource, Pipeline};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::descriptors::{DescriptorError, DescriptorKind, DescriptorSet, Descriptors};
use crate::features::FeatureError;

pub const DEFAULT_LOWE_RATIO: f64 = 0.75;
pub const DEFAULT_MNN_THRESHOLD: f64 = 0.95;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("cannot match {query} descriptors against {reference} descriptors")]
    KindMismatch { query: DescriptorKind, reference: DescriptorKind },
    #[error("reference descriptor set is empty")]
    EmptyReference,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid pipeline `{spec}`: {reason}")]
    InvalidPipeline { spec: String, reason: String },
    #[error("invalid match filter `{0}`")]
    InvalidFilter(String),
    #[error("pipeline `{0}` reads external features and needs a feature store")]
    ExternalFeatures(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Hamming,
    Euclidean,
}

impl Metric {
    pub fn for_kind(kind: DescriptorKind) -> Self {
        match kind {
            DescriptorKind::Float128 => Metric::Euclidean,
            DescriptorKind::Binary256 => Metric::Hamming,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchFilter {
    LoweRatio(f64),
    MutualNn(f64),
}

impl fmt::Display for MatchFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchFilter::LoweRatio(r) => write!(f, "lowe:{r}"),
            MatchFilter::MutualNn(t) => write!(f, "mnn:{t}"),
        }
    }
}

impl FromStr for MatchFilter {
    type Err = MatchError;

    /// `lowe`, `lowe:<ratio>`, `mnn` or `mnn:<threshold>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MatchError::InvalidFilter(s.to_string());
        let (name, value) = match s.split_once(':') {
            Some((n, v)) => (n, Some(v.parse::<f64>().map_err(|_| bad())?)),
            None => (s, None),
        };
        if value.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
            return Err(bad());
        }
        match name {
            "lowe" => Ok(MatchFilter::LoweRatio(value.unwrap_or(DEFAULT_LOWE_RATIO))),
            "mnn" => Ok(MatchFilter::MutualNn(value.unwrap_or(DEFAULT_MNN_THRESHOLD))),
            _ => Err(bad()),
        }
    }
}

impl Serialize for MatchFilter {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MatchFilter {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub ref_idx: usize,
    pub distance: f64,
}

/// The nearest reference descriptors of one query descriptor, closest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnEntry {
    pub query_idx: usize,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub query_idx: usize,
    pub ref_idx: usize,
    pub distance: f64,
}

/// Filtered matches, sorted by query index; every query index appears at most once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
    pub metric: Metric,
    pub filter: MatchFilter,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

enum Packed {
    Float(Vec<Option<[f32; 128]>>),
    Binary(Vec<[u64; 4]>),
}

/// Descriptors laid out for distance computation; degenerate float vectors
/// become `None`.
fn pack(set: &DescriptorSet) -> Packed {
    match set.descriptors() {
        Descriptors::Float(v) => {
            Packed::Float(v.iter().map(|d| if d.iter().all(|&c| c == 0.0) { None } else { Some(*d) }).collect())
        }
        Descriptors::Binary(v) => Packed::Binary(
            v.iter()
                .map(|d| {
                    let mut w = [0u64; 4];
                    for (i, chunk) in d.chunks_exact(8).enumerate() {
                        w[i] = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
                    }
                    w
                })
                .collect(),
        ),
    }
}

#[inline]
pub fn hamming(a: &[u8; 32], b: &[u8; 32]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Euclidean distance accumulated in `f64` in component order.
#[inline]
pub fn euclidean(a: &[f32; 128], b: &[f32; 128]) -> f64 {
    let mut s = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        s += d * d;
    }
    s.sqrt()
}

/// Keeps the `k` best `(distance, index)` pairs in ascending order. Indices
/// arrive in ascending order, so an equal distance never displaces.
/// `raw` is any value monotone in the distance (the squared sum for floats).
struct TopK {
    k: usize,
    items: Vec<Neighbor>,
    raw: Vec<f64>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, items: Vec::with_capacity(k + 1), raw: Vec::with_capacity(k + 1) }
    }

    /// Raw value a candidate has to beat, if the list is full.
    #[inline]
    fn bound(&self) -> Option<f64> {
        (self.items.len() == self.k).then(|| self.raw[self.k - 1])
    }

    #[inline]
    fn offer(&mut self, ref_idx: usize, distance: f64, raw: f64) {
        if self.items.len() == self.k && distance >= self.items[self.k - 1].distance {
            return;
        }
        let pos = self.items.partition_point(|n| n.distance <= distance);
        self.items.insert(pos, Neighbor { ref_idx, distance });
        self.raw.insert(pos, raw);
        self.items.truncate(self.k);
        self.raw.truncate(self.k);
    }
}

fn float_knn_one(q: &[f32; 128], refs: &[Option<[f32; 128]>], k: usize) -> Vec<Neighbor> {
    let mut top = TopK::new(k);
    for (r, d) in refs.iter().enumerate() {
        let Some(d) = d else { continue };
        // Partial sums only grow, and a candidate whose full sum reaches the
        // k-th best loses (equal distance, higher index), so stop early.
        let bound = top.bound();
        let mut s = 0.0f64;
        let mut aborted = false;
        for chunk in 0..8 {
            for i in chunk * 16..chunk * 16 + 16 {
                let diff = q[i] as f64 - d[i] as f64;
                s += diff * diff;
            }
            if bound.is_some_and(|b| s >= b) {
                aborted = true;
                break;
            }
        }
        if !aborted {
            top.offer(r, s.sqrt(), s);
        }
    }
    top.items
}

fn binary_knn_one(q: &[u64; 4], refs: &[[u64; 4]], k: usize) -> Vec<Neighbor> {
    let mut top = TopK::new(k);
    for (r, d) in refs.iter().enumerate() {
        let dist = (q[0] ^ d[0]).count_ones()
            + (q[1] ^ d[1]).count_ones()
            + (q[2] ^ d[2]).count_ones()
            + (q[3] ^ d[3]).count_ones();
        top.offer(r, dist as f64, dist as f64);
    }
    top.items
}

fn check_kinds(query: &DescriptorSet, refset: &DescriptorSet) -> Result<(), MatchError> {
    if query.kind() != refset.kind() {
        return Err(MatchError::KindMismatch { query: query.kind(), reference: refset.kind() });
    }
    Ok(())
}

/// Exact `k` nearest reference descriptors of every query descriptor:
/// Hamming distance for binary sets, Euclidean for float sets. Ties go to
/// the lower reference index. Degenerate (all-zero) float descriptors take
/// part on neither side, so they produce no entry.
pub fn knn_match(query: &DescriptorSet, refset: &DescriptorSet, k: usize) -> Result<Vec<KnnEntry>, MatchError> {
    check_kinds(query, refset)?;
    if k == 0 {
        return Err(MatchError::ZeroK);
    }
    if refset.is_empty() {
        return Err(MatchError::EmptyReference);
    }
    let entries = match (pack(query), pack(refset)) {
        (Packed::Float(q), Packed::Float(r)) => q
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.as_ref().map(|d| KnnEntry { query_idx: i, neighbors: float_knn_one(d, &r, k) }))
            .filter(|e| !e.neighbors.is_empty())
            .collect(),
        (Packed::Binary(q), Packed::Binary(r)) => {
            q.iter().enumerate().map(|(i, d)| KnnEntry { query_idx: i, neighbors: binary_knn_one(d, &r, k) }).collect()
        }
        _ => unreachable!("kinds checked"),
    };
    Ok(entries)
}

/// Lowe ratio test on 2-NN results: keeps the nearest neighbour when
/// `d1 < ratio * d2`. Entries with a single neighbour are kept; `d2 == 0`
/// rejects.
pub fn lowe_filter(knn: &[KnnEntry], ratio: f64, metric: Metric) -> MatchSet {
    let pairs = knn
        .iter()
        .filter_map(|e| {
            let first = e.neighbors.first()?;
            let keep = match e.neighbors.get(1) {
                None => true,
                Some(second) => first.distance < ratio * second.distance,
            };
            keep.then_some(Match { query_idx: e.query_idx, ref_idx: first.ref_idx, distance: first.distance })
        })
        .collect();
    MatchSet { pairs, metric, filter: MatchFilter::LoweRatio(ratio) }
}

/// Mutual nearest neighbours: `(q, r)` is kept when `r` is the nearest
/// reference of `q`, `q` is the nearest query of `r`, and
/// `d1(q) / d2(q) < threshold` (waived when `q` has no second neighbour).
pub fn mutual_nn_filter(query: &DescriptorSet, refset: &DescriptorSet, threshold: f64) -> Result<MatchSet, MatchError> {
    check_kinds(query, refset)?;
    let metric = Metric::for_kind(query.kind());
    let empty = MatchSet { pairs: Vec::new(), metric, filter: MatchFilter::MutualNn(threshold) };
    if query.is_empty() || refset.is_empty() {
        return Ok(empty);
    }
    let forward = knn_match(query, refset, 2)?;
    let backward = knn_match(refset, query, 1)?;
    let mut nearest_query = vec![None; refset.len()];
    for e in &backward {
        nearest_query[e.query_idx] = Some(e.neighbors[0].ref_idx);
    }
    let pairs = forward
        .iter()
        .filter_map(|e| {
            let first = e.neighbors[0];
            if nearest_query[first.ref_idx] != Some(e.query_idx) {
                return None;
            }
            let distinct = e.neighbors.get(1).is_none_or(|second| first.distance / second.distance < threshold);
            distinct.then_some(Match { query_idx: e.query_idx, ref_idx: first.ref_idx, distance: first.distance })
        })
        .collect();
    Ok(MatchSet { pairs, ..empty })
}

/// Matches two sets with the given filter. An empty set on either side
/// yields no matches.
pub fn filter_matches(
    query: &DescriptorSet,
    refset: &DescriptorSet,
    filter: MatchFilter,
) -> Result<MatchSet, MatchError> {
    check_kinds(query, refset)?;
    match filter {
        MatchFilter::LoweRatio(ratio) => {
            let metric = Metric::for_kind(query.kind());
            if refset.is_empty() {
                return Ok(MatchSet { pairs: Vec::new(), metric, filter });
            }
            Ok(lowe_filter(&knn_match(query, refset, 2)?, ratio, metric))
        }
        MatchFilter::MutualNn(t) => mutual_nn_filter(query, refset, t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Keypoint;

    fn kps(n: usize) -> Vec<Keypoint> {
        (0..n).map(|i| Keypoint { x: i as f32, y: 0.0, response: 1.0, octave: 0, angle: None, diameter: 7.0 }).collect()
    }

    fn binary(v: Vec<[u8; 32]>) -> DescriptorSet {
        DescriptorSet::new(kps(v.len()), Descriptors::Binary(v)).unwrap()
    }

    fn float(v: Vec<[f32; 128]>) -> DescriptorSet {
        DescriptorSet::new(kps(v.len()), Descriptors::Float(v)).unwrap()
    }

    fn with_bits(n: usize) -> [u8; 32] {
        let mut d = [0u8; 32];
        for i in 0..n {
            d[i / 8] |= 1 << (i % 8);
        }
        d
    }

    fn axis(i: usize, scale: f32) -> [f32; 128] {
        let mut d = [0f32; 128];
        d[i] = scale;
        d
    }

    #[test]
    fn query_in_reference_found_at_zero() {
        let refs = binary(vec![with_bits(5), with_bits(9), with_bits(2)]);
        let q = binary(vec![with_bits(9)]);
        let knn = knn_match(&q, &refs, 1).unwrap();
        assert_eq!(knn[0].neighbors, vec![Neighbor { ref_idx: 1, distance: 0.0 }]);
    }

    #[test]
    fn two_closest_in_order() {
        let refs = binary(vec![with_bits(3), with_bits(1), with_bits(2)]);
        let knn = knn_match(&binary(vec![[0; 32]]), &refs, 2).unwrap();
        assert_eq!(
            knn[0].neighbors,
            vec![Neighbor { ref_idx: 1, distance: 1.0 }, Neighbor { ref_idx: 2, distance: 2.0 }]
        );
    }

    #[test]
    fn k_larger_than_reference() {
        let refs = binary(vec![with_bits(3), with_bits(1)]);
        let knn = knn_match(&binary(vec![[0; 32], [1; 32]]), &refs, 5).unwrap();
        assert!(knn.iter().all(|e| e.neighbors.len() == 2));
    }

    #[test]
    fn ties_prefer_lower_index() {
        let refs = binary(vec![with_bits(4), with_bits(2), with_bits(2)]);
        let knn = knn_match(&binary(vec![[0; 32]]), &refs, 1).unwrap();
        assert_eq!(knn[0].neighbors[0].ref_idx, 1);
    }

    #[test]
    fn errors() {
        let b = binary(vec![[0; 32]]);
        let f = float(vec![axis(0, 1.0)]);
        assert!(matches!(knn_match(&b, &f, 1), Err(MatchError::KindMismatch { .. })));
        assert!(matches!(knn_match(&b, &binary(vec![]), 1), Err(MatchError::EmptyReference)));
        assert!(matches!(mutual_nn_filter(&f, &b, 0.95), Err(MatchError::KindMismatch { .. })));
    }

    #[test]
    fn zero_floats_are_skipped() {
        let refs = float(vec![[0.0; 128], axis(1, 1.0)]);
        let q = float(vec![[0.0; 128], axis(2, 1.0)]);
        let knn = knn_match(&q, &refs, 2).unwrap();
        assert_eq!(knn.len(), 1);
        assert_eq!(knn[0].query_idx, 1);
        assert_eq!(knn[0].neighbors.len(), 1);
        assert_eq!(knn[0].neighbors[0].ref_idx, 1);
        assert!((knn[0].neighbors[0].distance - 2f64.sqrt()).abs() < 1e-12);
    }

    fn entry(d1: f64, d2: f64) -> KnnEntry {
        KnnEntry {
            query_idx: 0,
            neighbors: vec![Neighbor { ref_idx: 0, distance: d1 }, Neighbor { ref_idx: 1, distance: d2 }],
        }
    }

    #[test]
    fn lowe_inequality() {
        let kept = |d1, d2| lowe_filter(&[entry(d1, d2)], 0.75, Metric::Euclidean).len() == 1;
        assert!(kept(0.0, 1.0));
        assert!(kept(0.7, 1.0));
        assert!(!kept(0.8, 1.0));
        assert!(!kept(0.75, 1.0));
        assert!(!kept(0.0, 0.0));
        let single = KnnEntry { query_idx: 3, neighbors: vec![Neighbor { ref_idx: 0, distance: 9.0 }] };
        assert_eq!(lowe_filter(&[single], 0.75, Metric::Hamming).pairs[0].query_idx, 3);
    }

    #[test]
    fn mutual_singletons() {
        let a = float(vec![axis(0, 1.0)]);
        let m = mutual_nn_filter(&a, &a.clone(), 0.95).unwrap();
        assert_eq!(m.pairs, vec![Match { query_idx: 0, ref_idx: 0, distance: 0.0 }]);
    }

    #[test]
    fn mutual_requires_both_directions() {
        // q0 -> r0, but r0's nearest query is q1
        let refs = binary(vec![with_bits(10), with_bits(200)]);
        let q = binary(vec![with_bits(4), with_bits(9)]);
        let m = mutual_nn_filter(&q, &refs, 0.95).unwrap();
        assert!(m.pairs.iter().all(|p| p.query_idx != 0));
        assert!(m.pairs.iter().any(|p| p.query_idx == 1 && p.ref_idx == 0));
    }

    #[test]
    fn filter_strings() {
        assert_eq!("lowe:0.75".parse::<MatchFilter>().unwrap(), MatchFilter::LoweRatio(0.75));
        assert_eq!("mnn".parse::<MatchFilter>().unwrap(), MatchFilter::MutualNn(0.95));
        assert_eq!(MatchFilter::MutualNn(0.9).to_string(), "mnn:0.9");
        assert!("lowe:x".parse::<MatchFilter>().is_err());
        assert!("ratio:0.7".parse::<MatchFilter>().is_err());
        assert!("lowe:-1".parse::<MatchFilter>().is_err());
    }

    #[test]
    fn empty_sets_match_nothing() {
        let e = binary(vec![]);
        let one = binary(vec![[3; 32]]);
        assert!(filter_matches(&one, &e, MatchFilter::LoweRatio(0.75)).unwrap().is_empty());
        assert!(filter_matches(&e, &one, MatchFilter::LoweRatio(0.75)).unwrap().is_empty());
        assert!(filter_matches(&e, &one, MatchFilter::MutualNn(0.95)).unwrap().is_empty());
    }
}
