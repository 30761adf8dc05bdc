//! Pattern classification of wrapped frames: pairwise RMS distances,
//! average-linkage agglomeration, and cluster selection by a normalized
//! height cut plus a minimum sampling number.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::{wrap_angle, ApertureMask, PhaseFrame};

/// How two pre-processed frames are compared pixel by pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    /// Plain difference of the wrapped values.
    #[default]
    Arithmetic,
    /// Wrapped (shortest angular) difference.
    Circular,
}

/// Symmetric matrix of frame-to-frame distances, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Build from a dense row-major `n × n` matrix. Symmetry, a zero diagonal
    /// and non-negative finite entries are checked.
    pub fn from_dense(n: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::Dimension(format!(
                "{} entries for a {n}x{n} distance matrix",
                d.len()
            )));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::Config(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let v = d[i * n + j];
                if !(v >= 0.0 && v.is_finite()) || v != d[j * n + i] {
                    return Err(Error::Config(format!(
                        "distance ({i}, {j}) must be finite, non-negative and symmetric"
                    )));
                }
            }
        }
        Ok(Self { n, d })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// RMS pixel difference between every pair of frames over the valid pixels
/// of `mask`.
pub fn pairwise_distances(
    frames: &[PhaseFrame],
    mask: &ApertureMask,
    metric: DistanceMetric,
) -> Result<DistanceMatrix> {
    let n = frames.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "need at least 2 frames to compare, got {n}"
        )));
    }
    if frames.iter().any(|f| !f.same_shape(mask)) {
        return Err(Error::Dimension(
            "frame does not match the mask shape".into(),
        ));
    }
    let idx: Vec<usize> = mask
        .valid()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(Error::Mask("no valid pixel to compare".into()));
    }
    // Compact the valid pixels once so the pair loop is a dense dot.
    let packed: Vec<Vec<f64>> = frames
        .par_iter()
        .map(|f| idx.iter().map(|&i| f.values()[i]).collect())
        .collect();
    let count = idx.len() as f64;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..i)
                .map(|j| {
                    let ss: f64 = match metric {
                        DistanceMetric::Arithmetic => packed[i]
                            .iter()
                            .zip(&packed[j])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum(),
                        DistanceMetric::Circular => packed[i]
                            .iter()
                            .zip(&packed[j])
                            .map(|(a, b)| wrap_angle(a - b).powi(2))
                            .sum(),
                    };
                    (ss / count).sqrt()
                })
                .collect()
        })
        .collect();
    let mut d = vec![0.0; n * n];
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(DistanceMatrix { n, d })
}

/// One agglomeration step. Leaves are ids `0..n`; step `k` creates id `n + k`.
/// `a` is the side holding the smaller leaf index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<Merge>,
    /// Merge heights divided by the largest one (all 0 if that is 0).
    pub normalized_heights: Vec<f64>,
}

impl Dendrogram {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Average-linkage (UPGMA) agglomerative clustering.
///
/// At each step the pair of active clusters with the smallest mean
/// inter-cluster distance merges; exact ties go to the pair whose smaller
/// leaf indices are lexicographically lowest.
pub fn agglomerate(d: &DistanceMatrix) -> Result<Dendrogram> {
    let n = d.n;
    if n < 2 {
        return Err(Error::Config(
            "agglomeration needs at least 2 leaves".into(),
        ));
    }
    // Each active cluster lives in the slot of its smallest leaf, so scanning
    // slots in order realises the tie-break.
    let mut dist = d.d.clone();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut id: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);
    let mut last = 0.0f64;

    for step in 0..n - 1 {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let row = &dist[i * n..(i + 1) * n];
            for j in i + 1..n {
                if active[j] && row[j] < best.0 {
                    best = (row[j], i, j);
                }
            }
        }
        let (mut h, i, j) = best;
        if h < last {
            if last - h > 1e-12 * last.max(1.0) {
                return Err(Error::Internal(format!(
                    "merge height decreased from {last} to {h} at step {step}"
                )));
            }
            h = last;
        }
        last = h;
        let (si, sj) = (size[i], size[j]);
        merges.push(Merge {
            a: id[i],
            b: id[j],
            height: h,
            size: si + sj,
        });
        for k in 0..n {
            if active[k] && k != i && k != j {
                let v =
                    (si as f64 * dist[k * n + i] + sj as f64 * dist[k * n + j]) / (si + sj) as f64;
                dist[k * n + i] = v;
                dist[i * n + k] = v;
            }
        }
        active[j] = false;
        size[i] = si + sj;
        id[i] = n + step;
    }

    let max = merges.iter().map(|m| m.height).fold(0.0, f64::max);
    let normalized_heights = merges
        .iter()
        .map(|m| if max > 0.0 { m.height / max } else { 0.0 })
        .collect();
    Ok(Dendrogram {
        leaves: n,
        merges,
        normalized_heights,
    })
}

/// Sizes of the chosen and abandoned clusters.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClusterCensus {
    pub chosen: Vec<usize>,
    pub abandoned: Vec<usize>,
}

impl fmt::Display for ClusterCensus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "chosen sizes {:?}, abandoned sizes {:?}",
            self.chosen, self.abandoned
        )
    }
}

/// Flat clusters over stack positions `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub chosen: Vec<Vec<usize>>,
    pub abandoned: Vec<Vec<usize>>,
    pub min_samples: usize,
    pub cut: f64,
}

impl ClusterSet {
    /// Every frame in one cluster (classification disabled).
    pub fn single(n: usize) -> Self {
        Self {
            chosen: vec![(0..n).collect()],
            abandoned: Vec::new(),
            min_samples: 1,
            cut: 1.0,
        }
    }

    pub fn census(&self) -> ClusterCensus {
        ClusterCensus {
            chosen: self.chosen.iter().map(Vec::len).collect(),
            abandoned: self.abandoned.iter().map(Vec::len).collect(),
        }
    }

    pub fn abandoned_positions(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.abandoned.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn frame_count(&self) -> usize {
        self.chosen
            .iter()
            .chain(&self.abandoned)
            .map(Vec::len)
            .sum()
    }
}

/// Flat clusters of the leaves joined at normalized height `<= cut`, split
/// into chosen (size >= `min_samples`) and abandoned. Clusters are listed in
/// order of their smallest member.
pub fn select_clusters(
    dendrogram: &Dendrogram,
    cut: f64,
    min_samples: usize,
) -> Result<ClusterSet> {
    if !(cut > 0.0 && cut <= 1.0) {
        return Err(Error::Config(format!("cut must lie in (0, 1], got {cut}")));
    }
    if min_samples == 0 {
        return Err(Error::Config("min_samples must be >= 1".into()));
    }
    let n = dendrogram.leaves;
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (k, (m, &h)) in dendrogram
        .merges
        .iter()
        .zip(&dendrogram.normalized_heights)
        .enumerate()
    {
        if h <= cut {
            let new = n + k;
            let ra = find(&mut parent, m.a);
            let rb = find(&mut parent, m.b);
            parent[ra] = new;
            parent[rb] = new;
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot_of_root = std::collections::HashMap::new();
    for leaf in 0..n {
        let root = find(&mut parent, leaf);
        let slot = *slot_of_root.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(leaf);
    }
    let (chosen, abandoned): (Vec<_>, Vec<_>) =
        groups.into_iter().partition(|g| g.len() >= min_samples);
    let set = ClusterSet {
        chosen,
        abandoned,
        min_samples,
        cut,
    };
    if set.chosen.is_empty() {
        return Err(Error::NoCluster {
            census: set.census(),
        });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(n: usize, pairs: &[(usize, usize, f64)]) -> DistanceMatrix {
        let mut d = vec![0.0; n * n];
        for &(i, j, v) in pairs {
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
        DistanceMatrix::from_dense(n, d).unwrap()
    }

    #[test]
    fn distance_examples() {
        let m = ApertureMask::full(2, 2).unwrap();
        let zero = PhaseFrame::constant(2, 2, 0.0).unwrap();
        let one = PhaseFrame::constant(2, 2, 1.0).unwrap();
        let d =
            pairwise_distances(&[zero.clone(), one, zero], &m, DistanceMetric::Arithmetic).unwrap();
        assert_eq!(d.get(0, 1), 1.0);
        assert_eq!(d.get(1, 0), 1.0);
        assert_eq!(d.get(0, 2), 0.0);
        assert_eq!(d.get(1, 1), 0.0);
    }

    #[test]
    fn circular_metric_ignores_wrap_jumps() {
        let m = ApertureMask::full(2, 2).unwrap();
        let a = PhaseFrame::constant(2, 2, 3.1).unwrap();
        let b = PhaseFrame::constant(2, 2, -3.1).unwrap();
        let arith =
            pairwise_distances(&[a.clone(), b.clone()], &m, DistanceMetric::Arithmetic).unwrap();
        let circ = pairwise_distances(&[a, b], &m, DistanceMetric::Circular).unwrap();
        assert!((arith.get(0, 1) - 6.2).abs() < 1e-12);
        assert!((circ.get(0, 1) - (2.0 * std::f64::consts::PI - 6.2)).abs() < 1e-12);
    }

    #[test]
    fn distance_needs_two_frames() {
        let m = ApertureMask::full(2, 2).unwrap();
        let f = PhaseFrame::constant(2, 2, 0.0).unwrap();
        assert!(pairwise_distances(&[f], &m, DistanceMetric::Arithmetic).is_err());
    }

    #[test]
    fn from_dense_validates() {
        assert!(DistanceMatrix::from_dense(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
        assert!(DistanceMatrix::from_dense(2, vec![1.0, 1.0, 1.0, 0.0]).is_err());
        assert!(DistanceMatrix::from_dense(2, vec![0.0, -1.0, -1.0, 0.0]).is_err());
    }

    #[test]
    fn upgma_three_leaves() {
        let d = dm(3, &[(0, 1, 1.0), (0, 2, 5.0), (1, 2, 5.0)]);
        let g = agglomerate(&d).unwrap();
        assert_eq!(g.merges.len(), 2);
        assert_eq!(
            (g.merges[0].a, g.merges[0].b, g.merges[0].height),
            (0, 1, 1.0)
        );
        assert_eq!(
            (g.merges[1].a, g.merges[1].b, g.merges[1].height),
            (3, 2, 5.0)
        );
        assert_eq!(g.normalized_heights, vec![0.2, 1.0]);
    }

    #[test]
    fn upgma_uses_average_linkage() {
        // Single linkage would put leaf 3 at height 2, complete at 6.
        let d = dm(
            4,
            &[
                (0, 1, 1.0),
                (0, 2, 8.0),
                (1, 2, 8.0),
                (0, 3, 2.0),
                (1, 3, 6.0),
                (2, 3, 9.0),
            ],
        );
        let g = agglomerate(&d).unwrap();
        assert_eq!(g.merges[1].a, 4);
        assert_eq!(g.merges[1].b, 3);
        assert_eq!(g.merges[1].height, 4.0);
        // (8·2 + 9)/3
        assert!((g.merges[2].height - 25.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn upgma_two_leaves_and_ties() {
        let g = agglomerate(&dm(2, &[(0, 1, 3.0)])).unwrap();
        assert_eq!(g.merges.len(), 1);
        assert_eq!(g.normalized_heights, vec![1.0]);

        let all = dm(
            4,
            &[
                (0, 1, 1.0),
                (0, 2, 1.0),
                (0, 3, 1.0),
                (1, 2, 1.0),
                (1, 3, 1.0),
                (2, 3, 1.0),
            ],
        );
        let g = agglomerate(&all).unwrap();
        let pairs: Vec<_> = g.merges.iter().map(|m| (m.a, m.b)).collect();
        assert_eq!(pairs, vec![(0, 1), (4, 2), (5, 3)]);
        assert_eq!(g, agglomerate(&all).unwrap());
    }

    #[test]
    fn upgma_rejects_single_leaf() {
        assert!(agglomerate(&dm(1, &[])).is_err());
    }

    fn sized_groups(sizes: &[usize]) -> Dendrogram {
        // Groups of tight leaves (distance 1 inside, 10 across).
        let n: usize = sizes.iter().sum();
        let mut group = Vec::new();
        for (g, &s) in sizes.iter().enumerate() {
            group.extend(std::iter::repeat_n(g, s));
        }
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    d[i * n + j] = if group[i] == group[j] { 1.0 } else { 10.0 };
                }
            }
        }
        agglomerate(&DistanceMatrix::from_dense(n, d).unwrap()).unwrap()
    }

    #[test]
    fn select_by_size() {
        let g = sized_groups(&[5, 3, 2]);
        let set = select_clusters(&g, 0.5, 3).unwrap();
        assert_eq!(set.census().chosen, vec![5, 3]);
        assert_eq!(set.census().abandoned, vec![2]);
        assert_eq!(set.chosen[1], vec![5, 6, 7]);
        assert_eq!(set.abandoned_positions(), vec![8, 9]);
        assert_eq!(set.frame_count(), 10);
    }

    #[test]
    fn select_min_samples_one_keeps_everything() {
        let g = sized_groups(&[5, 3, 2]);
        let set = select_clusters(&g, 0.5, 1).unwrap();
        assert_eq!(set.chosen.len(), 3);
        assert!(set.abandoned.is_empty());
    }

    #[test]
    fn select_cut_below_all_merges_gives_singletons() {
        let g = sized_groups(&[5, 3, 2]);
        let set = select_clusters(&g, 0.05, 1).unwrap();
        assert_eq!(set.chosen.len(), 10);
        assert!(set.chosen.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn select_full_cut_is_one_cluster() {
        let g = sized_groups(&[5, 3, 2]);
        let set = select_clusters(&g, 1.0, 2).unwrap();
        assert_eq!(set.census().chosen, vec![10]);
    }

    #[test]
    fn select_errors() {
        let g = sized_groups(&[2, 2]);
        assert!(select_clusters(&g, 0.0, 1).is_err());
        assert!(select_clusters(&g, 1.5, 1).is_err());
        assert!(select_clusters(&g, 0.5, 0).is_err());
        match select_clusters(&g, 0.5, 3) {
            Err(Error::NoCluster { census }) => assert_eq!(census.abandoned, vec![2, 2]),
            other => panic!("expected NoCluster, got {other:?}"),
        }
    }
}
