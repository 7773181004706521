use std::collections::BTreeMap;
use std::fmt;

/// Agglomerative linkage rule in Lance-Williams form.
///
/// Distances live in an internal representation chosen by the linkage
/// (squared Euclidean for Ward) and are converted with [`Linkage::report`]
/// when written into the merge tree.
pub trait Linkage: Send + Sync {
    fn name(&self) -> &'static str;

    /// Internal distance between two singletons with squared Euclidean distance `d2`.
    fn initial(&self, d2: f64) -> f64;

    /// Internal distance from cluster `k` to the union of `i` and `j`.
    fn update(&self, d_ki: f64, d_kj: f64, d_ij: f64, n_i: usize, n_j: usize, n_k: usize) -> f64;

    fn report(&self, internal: f64) -> f64 {
        internal
    }
}

/// Minimum-variance linkage on squared Euclidean distances.
#[derive(Debug, Default, Clone, Copy)]
pub struct Ward;

impl Linkage for Ward {
    fn name(&self) -> &'static str {
        "ward"
    }
    fn initial(&self, d2: f64) -> f64 {
        d2
    }
    fn update(&self, d_ki: f64, d_kj: f64, d_ij: f64, n_i: usize, n_j: usize, n_k: usize) -> f64 {
        let (ni, nj, nk) = (n_i as f64, n_j as f64, n_k as f64);
        (((ni + nk) * d_ki + (nj + nk) * d_kj - nk * d_ij) / (ni + nj + nk)).max(0.0)
    }
    fn report(&self, internal: f64) -> f64 {
        internal.sqrt()
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Single;

impl Linkage for Single {
    fn name(&self) -> &'static str {
        "single"
    }
    fn initial(&self, d2: f64) -> f64 {
        d2.sqrt()
    }
    fn update(&self, d_ki: f64, d_kj: f64, _: f64, _: usize, _: usize, _: usize) -> f64 {
        d_ki.min(d_kj)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Complete;

impl Linkage for Complete {
    fn name(&self) -> &'static str {
        "complete"
    }
    fn initial(&self, d2: f64) -> f64 {
        d2.sqrt()
    }
    fn update(&self, d_ki: f64, d_kj: f64, _: f64, _: usize, _: usize, _: usize) -> f64 {
        d_ki.max(d_kj)
    }
}

/// Unweighted pair-group average (UPGMA).
#[derive(Debug, Default, Clone, Copy)]
pub struct Average;

impl Linkage for Average {
    fn name(&self) -> &'static str {
        "average"
    }
    fn initial(&self, d2: f64) -> f64 {
        d2.sqrt()
    }
    fn update(&self, d_ki: f64, d_kj: f64, _: f64, n_i: usize, n_j: usize, _: usize) -> f64 {
        (n_i as f64 * d_ki + n_j as f64 * d_kj) / (n_i + n_j) as f64
    }
}

/// Linkages selectable by name.
pub struct LinkageRegistry {
    entries: BTreeMap<&'static str, Box<dyn Linkage>>,
}

impl fmt::Debug for LinkageRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

impl LinkageRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Registry holding `ward`, `single`, `complete` and `average`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Ward));
        r.register(Box::new(Single));
        r.register(Box::new(Complete));
        r.register(Box::new(Average));
        r
    }

    /// Adds a linkage, replacing any previous one with the same name.
    pub fn register(&mut self, linkage: Box<dyn Linkage>) {
        self.entries.insert(linkage.name(), linkage);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Linkage> {
        self.entries.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}
