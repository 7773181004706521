//! Agglomerative hierarchical clustering of event features and HFO labeling
//! of the resulting groups by the amplitude range of their averaged crops.

mod linkage;

use ndarray::Array2;
use rayon::prelude::*;

pub use linkage::{Average, Complete, Linkage, LinkageRegistry, Single, Ward};

use crate::error::{param, Error, Result};

/// One agglomeration step. Node ids follow the usual dendrogram convention:
/// leaves are `0..n`, the cluster formed by merge `i` is `n + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub node_a: usize,
    pub node_b: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Group id of each event; group 0 holds event 0, later ids are
    /// numbered by each group's first member.
    pub assignment: Vec<usize>,
    /// `n - 1` merges with non-decreasing distances.
    pub merge_tree: Vec<Merge>,
    pub n_groups: usize,
    pub hfo_group: Option<usize>,
    /// Range of each group's averaged crop, filled by [`label_clusters`].
    pub group_mean_range: Vec<f64>,
}

impl ClusterResult {
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_groups];
        for &g in &self.assignment {
            sizes[g] += 1;
        }
        sizes
    }

    /// Whether event `i` is in the HFO group.
    pub fn is_hfo(&self, i: usize) -> bool {
        self.hfo_group == Some(self.assignment[i])
    }
}

struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.n * a - a * (a + 1) / 2 + (b - a - 1)
    }
    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }
    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

fn pairwise(data: &Array2<f64>, linkage: &dyn Linkage) -> Condensed {
    let n = data.nrows();
    let rows: Vec<Vec<f64>> = data.rows().into_iter().map(|r| r.to_vec()).collect();
    let d = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let rows = &rows;
            (i + 1..n).map(move |j| {
                let d2: f64 = rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                linkage.initial(d2)
            })
        })
        .collect();
    Condensed { n, d }
}

/// Runs the nearest-neighbour chain algorithm, returning merges as
/// `(slot_a, slot_b, internal distance)` in discovery order. Valid for
/// reducible linkages, which all registered ones are.
fn nn_chain(mut dist: Condensed, linkage: &dyn Linkage) -> Vec<(usize, usize, f64)> {
    let n = dist.n;
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while merges.len() + 1 < n {
        if chain.is_empty() {
            chain.push(active.iter().position(|a| *a).expect("active cluster"));
        }
        let (a, b, d_ab) = loop {
            let a = *chain.last().unwrap();
            let prev = chain.len().checked_sub(2).map(|i| chain[i]);
            let mut best: Option<(usize, f64)> = prev.map(|p| (p, dist.get(a, p)));
            for k in 0..n {
                if !active[k] || k == a || Some(k) == prev {
                    continue;
                }
                let d = dist.get(a, k);
                match best {
                    Some((bk, bd)) if d > bd || (d == bd && (Some(bk) == prev || bk < k)) => {}
                    _ => best = Some((k, d)),
                }
            }
            let (b, d_ab) = best.expect("at least two active clusters");
            if Some(b) == prev {
                chain.pop();
                chain.pop();
                break (a, b, d_ab);
            }
            chain.push(b);
        };
        // the union lives in the lower slot
        let (keep, drop) = if a < b { (a, b) } else { (b, a) };
        for k in 0..n {
            if !active[k] || k == keep || k == drop {
                continue;
            }
            let v = linkage.update(
                dist.get(k, keep),
                dist.get(k, drop),
                d_ab,
                size[keep],
                size[drop],
                size[k],
            );
            dist.set(k, keep, v);
        }
        size[keep] += size[drop];
        active[drop] = false;
        merges.push((keep, drop, d_ab));
    }
    merges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        lo
    }
}

/// Agglomerative clustering of the rows of `data` (Euclidean geometry),
/// with the tree cut into exactly `n_groups` groups.
pub fn hierarchical_cluster(
    data: &Array2<f64>,
    n_groups: usize,
    linkage: &dyn Linkage,
) -> Result<ClusterResult> {
    let n = data.nrows();
    if n < 2 {
        return param(format!("clustering needs at least 2 events, got {n}"));
    }
    if n_groups == 0 || n_groups > n {
        return param(format!("cannot cut {n} events into {n_groups} groups"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(
            "feature matrix contains non-finite values".into(),
        ));
    }

    let mut merges = nn_chain(pairwise(data, linkage), linkage);
    merges.sort_by(|x, y| x.2.total_cmp(&y.2));

    // dendrogram node ids
    let mut uf = UnionFind::new(n);
    let mut node_of_root: Vec<usize> = (0..n).collect();
    let mut size_of_root = vec![1usize; n];
    let mut merge_tree = Vec::with_capacity(n - 1);
    for (step, &(a, b, d)) in merges.iter().enumerate() {
        let (ra, rb) = (uf.find(a), uf.find(b));
        let (na, nb) = (node_of_root[ra], node_of_root[rb]);
        let sz = size_of_root[ra] + size_of_root[rb];
        let root = uf.union(ra, rb);
        node_of_root[root] = n + step;
        size_of_root[root] = sz;
        merge_tree.push(Merge {
            node_a: na.min(nb),
            node_b: na.max(nb),
            distance: linkage.report(d),
            size: sz,
        });
    }

    let mut cut = UnionFind::new(n);
    for &(a, b, _) in &merges[..n - n_groups] {
        cut.union(a, b);
    }
    let mut group_of_root = vec![usize::MAX; n];
    let mut next = 0;
    let assignment = (0..n)
        .map(|i| {
            let r = cut.find(i);
            if group_of_root[r] == usize::MAX {
                group_of_root[r] = next;
                next += 1;
            }
            group_of_root[r]
        })
        .collect();

    Ok(ClusterResult {
        assignment,
        merge_tree,
        n_groups,
        hfo_group: None,
        group_mean_range: Vec::new(),
    })
}

/// Sample-wise mean of equally long traces.
pub fn average_trace<'a>(traces: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for t in traces {
        if acc.is_empty() {
            acc = vec![0.0; t.len()];
        }
        for (a, v) in acc.iter_mut().zip(t) {
            *a += v;
        }
        count += 1;
    }
    if count > 0 {
        acc.iter_mut().for_each(|a| *a /= count as f64);
    }
    acc
}

fn range(x: &[f64]) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if x.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Names the HFO group: the one whose averaged crop has the largest
/// amplitude range. Exact ties go to the smaller group, then the lower id.
pub fn label_clusters<C: AsRef<[f64]>>(
    mut result: ClusterResult,
    crops: &[C],
) -> Result<ClusterResult> {
    if crops.len() != result.assignment.len() {
        return param(format!(
            "{} crops for {} clustered events",
            crops.len(),
            result.assignment.len()
        ));
    }
    let sizes = result.group_sizes();
    if let Some(g) = sizes.iter().position(|s| *s == 0) {
        return Err(Error::Data(format!("group {g} is empty; cannot label")));
    }
    result.group_mean_range = (0..result.n_groups)
        .map(|g| {
            range(&average_trace(
                crops
                    .iter()
                    .zip(&result.assignment)
                    .filter(|(_, a)| **a == g)
                    .map(|(c, _)| c.as_ref()),
            ))
        })
        .collect();
    let ranges = &result.group_mean_range;
    let best = (0..result.n_groups)
        .reduce(|best, g| {
            if ranges[g] > ranges[best] || (ranges[g] == ranges[best] && sizes[g] < sizes[best]) {
                g
            } else {
                best
            }
        })
        .unwrap();
    result.hfo_group = Some(best);
    Ok(result)
}
