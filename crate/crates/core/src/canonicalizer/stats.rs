use serde::{Deserialize, Serialize};

use crate::inventory::KeyInventory;

/// Shape of the alias clustering.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub clusters: usize,
    pub surface_forms: usize,
    /// `1 − clusters / surface_forms`.
    pub compression: f64,
    pub mean_cluster_size: f64,
    pub max_cluster_size: usize,
    pub singletons: usize,
    /// `(size, number of clusters)` for every size that occurs, ascending.
    pub histogram: Vec<(usize, usize)>,
    /// `(s, share of clusters with size ≥ s)` for `s = 1..=max`.
    pub ccdf: Vec<(usize, f64)>,
    /// Largest cluster sizes, descending.
    pub top_sizes: Vec<usize>,
}

pub const TOP_K: usize = 10;

pub fn cluster_stats(inv: &KeyInventory) -> ClusterStats {
    let sizes: Vec<usize> = inv.entries().iter().map(|e| e.cluster_size()).collect();
    stats_from_sizes(&sizes)
}

pub fn stats_from_sizes(sizes: &[usize]) -> ClusterStats {
    if sizes.is_empty() {
        return ClusterStats::default();
    }
    let clusters = sizes.len();
    let surface_forms: usize = sizes.iter().sum();
    let max = sizes.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; max + 1];
    for &s in sizes {
        counts[s] += 1;
    }
    let histogram = counts.iter().enumerate().filter(|(_, c)| **c > 0).map(|(s, c)| (s, *c)).collect();
    let mut ccdf = Vec::with_capacity(max);
    let mut at_least = clusters;
    for (s, &count) in counts.iter().enumerate().skip(1) {
        ccdf.push((s, at_least as f64 / clusters as f64));
        at_least -= count;
    }
    let mut top = sizes.to_vec();
    top.sort_unstable_by(|a, b| b.cmp(a));
    top.truncate(TOP_K);
    ClusterStats {
        clusters,
        surface_forms,
        compression: 1.0 - clusters as f64 / surface_forms as f64,
        mean_cluster_size: surface_forms as f64 / clusters as f64,
        max_cluster_size: max,
        singletons: counts.get(1).copied().unwrap_or(0),
        histogram,
        ccdf,
        top_sizes: top,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inventory::CanonicalKeyEntry;

    #[test]
    fn sizes_1_1_2() {
        let inv = KeyInventory::from_entries(vec![
            CanonicalKeyEntry::new("a"),
            CanonicalKeyEntry::new("b"),
            CanonicalKeyEntry::new("c").with_aliases(["c2"]),
        ])
        .unwrap();
        let s = cluster_stats(&inv);
        assert_eq!(s.mean_cluster_size, 4.0 / 3.0);
        assert_eq!(s.compression, 0.25);
        assert_eq!(s.histogram, vec![(1, 2), (2, 1)]);
        assert_eq!(s.ccdf, vec![(1, 1.0), (2, 1.0 / 3.0)]);
        assert_eq!(s.top_sizes, vec![2, 1, 1]);
        assert_eq!(s.singletons, 2);
    }

    #[test]
    fn all_singletons() {
        let s = stats_from_sizes(&[1, 1, 1]);
        assert_eq!(s.compression, 0.0);
        assert_eq!(s.ccdf, vec![(1, 1.0)]);
        let ccdf2 = s.ccdf.iter().find(|(k, _)| *k == 2).map_or(0.0, |(_, v)| *v);
        assert_eq!(ccdf2, 0.0);
    }

    #[test]
    fn empty_inventory() {
        assert_eq!(cluster_stats(&KeyInventory::new()), ClusterStats::default());
    }

    #[test]
    fn ccdf_non_increasing_and_bounds() {
        let s = stats_from_sizes(&[5, 1, 3, 3, 1, 26, 2]);
        assert!(s.ccdf.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!((0.0..1.0).contains(&s.compression));
        assert!(s.mean_cluster_size >= 1.0);
        assert_eq!(s.max_cluster_size, 26);
        assert_eq!(s.ccdf.len(), 26);
    }
}
