//! Mask generation: patch embeddings to feature-map masks, redundancy
//! measurement, cosine-distance agglomerative clustering, and a random
//! baseline mask generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{bilinear_upsample, minmax_normalize};
use crate::types::{EmbeddingBlock, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Vit,
    Clustered,
    Random,
}

/// A non-empty, ordered collection of same-sized masks.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    masks: Vec<Mask>,
    provenance: Provenance,
    source_block: Option<usize>,
}

impl MaskSet {
    pub fn new(masks: Vec<Mask>, provenance: Provenance, source_block: Option<usize>) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::InvalidArgument("mask set must not be empty".into()))?;
        let dims = first.dims();
        if let Some(m) = masks.iter().find(|m| m.dims() != dims) {
            return Err(Error::mismatch(
                format!("{}x{} masks", dims.0, dims.1),
                format!("{}x{}", m.height(), m.width()),
            ));
        }
        Ok(Self {
            masks,
            provenance,
            source_block,
        })
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.masks[0].dims()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn source_block(&self) -> Option<usize> {
        self.source_block
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    /// Cosine-distance threshold above which clusters are not merged.
    pub delta: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self { delta: 0.1 }
    }
}

/// One mask per embedding dimension: each g×g frontal slice is bilinearly
/// upsampled to `target` and then min-max normalized.
pub fn embeddings_to_masks(block: &EmbeddingBlock, target: (usize, usize)) -> Result<MaskSet> {
    let side = block.grid_side()?;
    let (h, w) = target;
    let masks = (0..block.dim())
        .into_par_iter()
        .map(|d| {
            let up = bilinear_upsample(&block.frontal_slice(d), side, side, h, w)?;
            Mask::new(h, w, minmax_normalize(&up))
        })
        .collect::<Result<Vec<_>>>()?;
    MaskSet::new(masks, Provenance::Vit, Some(block.block_index()))
}

fn norm(values: &[f32]) -> f64 {
    values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

fn cosine(a: &[f32], na: f64, b: &[f32], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine similarity of two row-major flattened masks. A zero mask has
/// similarity 0 with everything, itself included.
pub fn pairwise_cosine_sim(a: &Mask, b: &Mask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::mismatch(
            format!("{}x{}", a.height(), a.width()),
            format!("{}x{}", b.height(), b.width()),
        ));
    }
    Ok(cosine(a.values(), norm(a.values()), b.values(), norm(b.values())))
}

/// Dense symmetric `n × n` cosine-similarity matrix of a mask set.
pub fn similarity_matrix(set: &MaskSet) -> Vec<f64> {
    let n = set.len();
    let norms: Vec<f64> = set.masks().par_iter().map(|m| norm(m.values())).collect();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = set.masks()[i].values();
            (i + 1..n)
                .map(|j| cosine(a, norms[i], set.masks()[j].values(), norms[j]))
                .collect()
        })
        .collect();
    let mut sim = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        sim[i * n + i] = if norms[i] == 0.0 { 0.0 } else { 1.0 };
        for (k, &s) in row.iter().enumerate() {
            let j = i + 1 + k;
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    sim
}

/// Mean of `Sim(i, j)` over all pairs `i < j`.
pub fn mean_pairwise_sim(set: &MaskSet) -> Result<f64> {
    let n = set.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "mean pairwise similarity needs at least two masks".into(),
        ));
    }
    let sim = similarity_matrix(set);
    let total: f64 = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| sim[i * n + j])
        .sum();
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Average-linkage agglomerative clustering of a symmetric `n × n`
/// distance matrix.
///
/// The closest pair of clusters is merged repeatedly (ties resolved towards
/// the lexicographically smallest pair of cluster slots) until the minimum
/// inter-cluster distance exceeds `delta`. Clusters are returned with
/// ascending members, ordered by their smallest member.
pub fn cluster_by_distance(n: usize, dist: &[f64], delta: f64) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot cluster an empty set".into()));
    }
    if dist.len() != n * n {
        return Err(Error::mismatch(format!("{n}x{n} distances"), dist.len()));
    }
    if delta.is_nan() || delta < 0.0 {
        return Err(Error::InvalidArgument(format!("delta must be >= 0, got {delta}")));
    }

    let mut d = dist.to_vec();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut active = vec![true; n];

    // Nearest active neighbour with a larger slot index, per slot.
    let mut nn = vec![usize::MAX; n];
    let mut nn_dist = vec![f64::INFINITY; n];
    let rescan = |a: usize, d: &[f64], active: &[bool], nn: &mut [usize], nn_dist: &mut [f64]| {
        nn[a] = usize::MAX;
        nn_dist[a] = f64::INFINITY;
        for b in a + 1..n {
            if active[b] && d[a * n + b] < nn_dist[a] {
                nn[a] = b;
                nn_dist[a] = d[a * n + b];
            }
        }
    };
    for a in 0..n {
        rescan(a, &d, &active, &mut nn, &mut nn_dist);
    }

    loop {
        let mut best: Option<usize> = None;
        for a in 0..n {
            if active[a] && nn[a] != usize::MAX && best.is_none_or(|b| nn_dist[a] < nn_dist[b]) {
                best = Some(a);
            }
        }
        let Some(i) = best else { break };
        if nn_dist[i] > delta {
            break;
        }
        let j = nn[i];

        // Lance-Williams update for average linkage; the merged cluster keeps slot i.
        let (ni, nj) = (members[i].len() as f64, members[j].len() as f64);
        for k in 0..n {
            if active[k] && k != i && k != j {
                let v = (ni * d[i * n + k] + nj * d[j * n + k]) / (ni + nj);
                d[i * n + k] = v;
                d[k * n + i] = v;
            }
        }
        active[j] = false;
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);

        for a in 0..n {
            if !active[a] {
                continue;
            }
            if a == i || nn[a] == i || nn[a] == j {
                rescan(a, &d, &active, &mut nn, &mut nn_dist);
            } else if a < i && (d[a * n + i] < nn_dist[a] || (d[a * n + i] == nn_dist[a] && i < nn[a])) {
                nn[a] = i;
                nn_dist[a] = d[a * n + i];
            }
        }
    }

    let mut clusters: Vec<Vec<usize>> = members
        .into_iter()
        .zip(active)
        .filter_map(|(mut m, live)| {
            live.then(|| {
                m.sort_unstable();
                m
            })
        })
        .collect();
    clusters.sort_by_key(|c| c[0]);
    Ok(clusters)
}

/// Cluster masks by average linkage on cosine distance `1 - Sim(i, j)`.
pub fn agglomerative_cluster(set: &MaskSet, cfg: &ClusteringConfig) -> Result<Vec<Vec<usize>>> {
    let dist: Vec<f64> = similarity_matrix(set).into_iter().map(|s| 1.0 - s).collect();
    cluster_by_distance(set.len(), &dist, cfg.delta)
}

/// Element-wise mean of each cluster's masks.
pub fn cluster_means(set: &MaskSet, clusters: &[Vec<usize>]) -> Result<MaskSet> {
    let n = set.len();
    let mut seen = vec![false; n];
    for &i in clusters.iter().flatten() {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!(
                "clusters do not partition 0..{n}: index {i} is out of range or repeated"
            )));
        }
    }
    if clusters.iter().any(Vec::is_empty) || seen.iter().any(|s| !s) {
        return Err(Error::InvalidArgument(format!("clusters do not partition 0..{n}")));
    }

    let (h, w) = set.dims();
    let masks = clusters
        .iter()
        .map(|group| {
            let mut acc = vec![0.0f64; h * w];
            for &i in group {
                for (a, &v) in acc.iter_mut().zip(set.masks()[i].values()) {
                    *a += f64::from(v);
                }
            }
            let count = group.len() as f64;
            Mask::new(
                h,
                w,
                acc.into_iter().map(|a| ((a / count) as f32).clamp(0.0, 1.0)).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MaskSet::new(masks, Provenance::Clustered, set.source_block())
}

/// Parameters of the random baseline masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomMaskConfig {
    pub count: usize,
    /// Side of the binary grid before upsampling.
    pub grid: usize,
    pub keep_prob: f64,
    pub seed: u64,
}

/// Random masks: a `grid × grid` Bernoulli(`keep_prob`) grid is bilinearly
/// upsampled to `(grid + 1)` cells and cropped to `target` at a random
/// sub-cell offset.
pub fn random_masks(cfg: &RandomMaskConfig, target: (usize, usize)) -> Result<MaskSet> {
    if cfg.count == 0 {
        return Err(Error::InvalidArgument("random mask count must be >= 1".into()));
    }
    if cfg.grid == 0 {
        return Err(Error::InvalidArgument("random mask grid must be >= 1".into()));
    }
    if !(cfg.keep_prob > 0.0 && cfg.keep_prob < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep probability must lie in (0, 1), got {}",
            cfg.keep_prob
        )));
    }
    let (h, w) = target;
    if h == 0 || w == 0 {
        return Err(Error::InvalidDimension("target size must be positive".into()));
    }
    let g = cfg.grid;
    let cell_h = h.div_ceil(g);
    let cell_w = w.div_ceil(g);
    let (up_h, up_w) = ((g + 1) * cell_h, (g + 1) * cell_w);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut masks = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let grid: Vec<f32> = (0..g * g)
            .map(|_| if rng.random::<f64>() < cfg.keep_prob { 1.0 } else { 0.0 })
            .collect();
        let dy = rng.random_range(0..cell_h);
        let dx = rng.random_range(0..cell_w);
        let up = bilinear_upsample(&grid, g, g, up_h, up_w)?;
        let mut values = Vec::with_capacity(h * w);
        for y in 0..h {
            let row = (y + dy) * up_w + dx;
            values.extend(up[row..row + w].iter().map(|v| v.clamp(0.0, 1.0)));
        }
        masks.push(Mask::new(h, w, values)?);
    }
    MaskSet::new(masks, Provenance::Random, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(values: &[f32]) -> Mask {
        Mask::new(1, values.len(), values.to_vec()).unwrap()
    }

    fn set(rows: &[&[f32]]) -> MaskSet {
        MaskSet::new(rows.iter().map(|r| mask(r)).collect(), Provenance::Vit, None).unwrap()
    }

    #[test]
    fn vit_b16_geometry_yields_768_masks() {
        let values: Vec<f32> = (0..196 * 768).map(|i| ((i * 7919) % 1000) as f32).collect();
        let block = EmbeddingBlock::new(196, 768, values, 11).unwrap();
        let masks = embeddings_to_masks(&block, (224, 224)).unwrap();
        assert_eq!(masks.len(), 768);
        assert_eq!(masks.dims(), (224, 224));
        assert_eq!(masks.provenance(), Provenance::Vit);
        assert_eq!(masks.source_block(), Some(11));
    }

    #[test]
    fn constant_slice_gives_zero_mask() {
        // dimension 0 constant, dimension 1 varying
        let block = EmbeddingBlock::new(4, 2, vec![3.0, 0.0, 3.0, 1.0, 3.0, 2.0, 3.0, 3.0], 0).unwrap();
        let masks = embeddings_to_masks(&block, (5, 5)).unwrap();
        assert!(masks.masks()[0].values().iter().all(|&v| v == 0.0));
        let m1 = masks.masks()[1].values();
        assert_eq!(m1[0], 0.0);
        assert_eq!(m1[24], 1.0);
    }

    #[test]
    fn non_square_patch_count_is_rejected() {
        let block = EmbeddingBlock::new(6, 1, vec![0.0; 6], 0).unwrap();
        assert!(matches!(
            embeddings_to_masks(&block, (4, 4)),
            Err(Error::InvalidGeometry(_))
        ));
    }

    #[test]
    fn cosine_examples() {
        let a = mask(&[1.0, 0.0, 1.0, 0.0]);
        let b = mask(&[1.0, 1.0, 0.0, 0.0]);
        assert!((pairwise_cosine_sim(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert!((pairwise_cosine_sim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let c = mask(&[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(pairwise_cosine_sim(&a, &c).unwrap(), 0.0);
        let z = mask(&[0.0; 4]);
        assert_eq!(pairwise_cosine_sim(&a, &z).unwrap(), 0.0);
        assert!(pairwise_cosine_sim(&a, &mask(&[1.0])).is_err());
    }

    #[test]
    fn msim_examples() {
        let three = set(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let expected = (0.0 + 2.0 * std::f64::consts::FRAC_1_SQRT_2) / 3.0;
        assert!((mean_pairwise_sim(&three).unwrap() - expected).abs() < 1e-12);
        let same = set(&[&[0.2, 0.9], &[0.2, 0.9], &[0.2, 0.9]]);
        assert!((mean_pairwise_sim(&same).unwrap() - 1.0).abs() < 1e-9);
        assert!(mean_pairwise_sim(&set(&[&[1.0]])).is_err());
    }

    #[test]
    fn tiny_delta_keeps_singletons() {
        let s = set(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.5, 0.5, 1.0]]);
        let clusters = agglomerative_cluster(&s, &ClusteringConfig { delta: 0.01 }).unwrap();
        assert_eq!(clusters, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn duplicates_share_a_cluster() {
        let s = set(&[&[1.0, 0.2, 0.0], &[0.0, 1.0, 0.0], &[1.0, 0.2, 0.0]]);
        let clusters = agglomerative_cluster(&s, &ClusteringConfig { delta: 0.01 }).unwrap();
        assert_eq!(clusters, vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn hand_chosen_distances() {
        // Two tight groups {0,1,2} and {3,4}; average link between groups ~0.8.
        #[rustfmt::skip]
        let d = [
            0.0, 0.05, 0.10, 0.80, 0.90,
            0.05, 0.0, 0.12, 0.85, 0.75,
            0.10, 0.12, 0.0, 0.70, 0.80,
            0.80, 0.85, 0.70, 0.0, 0.20,
            0.90, 0.75, 0.80, 0.20, 0.0,
        ];
        // merges: (0,1)@0.05, ({0,1},2)@0.11, (3,4)@0.20; next is ~0.8 > 0.3
        assert_eq!(
            cluster_by_distance(5, &d, 0.3).unwrap(),
            vec![vec![0, 1, 2], vec![3, 4]]
        );
        assert_eq!(
            cluster_by_distance(5, &d, 0.105).unwrap(),
            vec![vec![0, 1], vec![2], vec![3], vec![4]]
        );
        assert_eq!(
            cluster_by_distance(5, &d, 0.11).unwrap(),
            vec![vec![0, 1, 2], vec![3], vec![4]]
        );
        assert_eq!(cluster_by_distance(5, &d, 2.0).unwrap(), vec![vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn negative_delta_is_rejected() {
        assert!(cluster_by_distance(1, &[0.0], -0.1).is_err());
    }

    #[test]
    fn means_of_clusters() {
        let s = set(&[&[0.0, 1.0], &[1.0, 0.0], &[0.25, 0.75]]);
        let merged = cluster_means(&s, &[vec![0, 1], vec![2]]).unwrap();
        assert_eq!(merged.masks()[0].values(), &[0.5, 0.5]);
        assert_eq!(merged.masks()[1].values(), &[0.25, 0.75]);
        assert_eq!(merged.provenance(), Provenance::Clustered);

        let singletons = cluster_means(&s, &[vec![0], vec![1], vec![2]]).unwrap();
        assert_eq!(singletons.masks(), s.masks());

        assert!(cluster_means(&s, &[vec![0, 1]]).is_err());
        assert!(cluster_means(&s, &[vec![0, 1], vec![1, 2]]).is_err());
        assert!(cluster_means(&s, &[vec![0, 1, 2], vec![]]).is_err());
    }

    #[test]
    fn random_masks_are_seeded() {
        let cfg = RandomMaskConfig {
            count: 8,
            grid: 4,
            keep_prob: 0.5,
            seed: 3,
        };
        let a = random_masks(&cfg, (17, 23)).unwrap();
        let b = random_masks(&cfg, (17, 23)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        assert_eq!(a.dims(), (17, 23));
        let c = random_masks(&RandomMaskConfig { seed: 4, ..cfg }, (17, 23)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_masks_reject_bad_probability() {
        for p in [0.0, 1.0, 1.5, f64::NAN] {
            let cfg = RandomMaskConfig {
                count: 1,
                grid: 2,
                keep_prob: p,
                seed: 0,
            };
            assert!(random_masks(&cfg, (4, 4)).is_err());
        }
    }
}
