//! Lattice windows, truncated occupancy spaces and the Poisson reference.
//!
//! A window is a box of `cells` lattice cells of side `h`. Each cell is one
//! site carrying an occupancy number, so a configuration is a vector
//! `n ∈ ℕ₀^m` and the state space keeps every `n` with `Σ n_j ≤ n_max`.
//! States are enumerated in graded lexicographic order: by total occupancy,
//! then lexicographically descending within one total.
//!
//! A space may carry extra [`SiteBlock`] caps on the total occupancy of
//! groups of sites. Products and tilings of truncated spaces use them to stay
//! exact products instead of re-truncating at the combined total.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{Clipped, DensityMeasure};

/// Default cap on the number of enumerated states.
pub const DEFAULT_STATE_CAP: usize = 2_000_000;

/// Schema tag written into every JSON document.
pub const SCHEMA: &str = "nlbbpp/1";

const NONE: u32 = u32::MAX;

/// A box of lattice cells `origin + [0, cells_0) × … × [0, cells_{d-1})`.
///
/// Sites are numbered in row-major order (last axis fastest).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeWindow {
    cells: Vec<usize>,
    h_bits: u64,
    origin: Vec<i64>,
    periodic: bool,
}

impl LatticeWindow {
    pub fn new(cells: Vec<usize>, h: f64) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidInput("window needs dimension at least 1".into()));
        }
        if cells.contains(&0) {
            return Err(Error::InvalidInput("every axis needs at least one cell".into()));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "cell side must be positive, got {h}"
            )));
        }
        let d = cells.len();
        Ok(Self {
            cells,
            h_bits: h.to_bits(),
            origin: vec![0; d],
            periodic: false,
        })
    }

    /// One-dimensional window of `cells` unit cells starting at 0.
    pub fn interval(cells: usize) -> Result<Self> {
        Self::new(vec![cells], 1.0)
    }

    pub fn with_origin(mut self, origin: Vec<i64>) -> Result<Self> {
        if origin.len() != self.cells.len() {
            return Err(Error::InvalidInput(
                "origin dimension does not match cells".into(),
            ));
        }
        self.origin = origin;
        Ok(self)
    }

    /// Declares the window a torus, so cyclic shifts act on it.
    pub fn periodic(mut self, periodic: bool) -> Self {
        self.periodic = periodic;
        self
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn h(&self) -> f64 {
        f64::from_bits(self.h_bits)
    }

    pub fn origin(&self) -> &[i64] {
        &self.origin
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim() as i32)
    }

    pub fn volume(&self) -> f64 {
        self.cell_count() as f64 * self.cell_volume()
    }

    /// Global lattice coordinates of site `j`.
    pub fn cell_coord(&self, j: usize) -> Vec<i64> {
        let mut rest = j;
        let mut out = vec![0i64; self.dim()];
        for a in (0..self.dim()).rev() {
            out[a] = self.origin[a] + (rest % self.cells[a]) as i64;
            rest /= self.cells[a];
        }
        out
    }

    /// Site index of a global lattice coordinate, if it lies in the window.
    pub fn site_of(&self, coord: &[i64]) -> Option<usize> {
        if coord.len() != self.dim() {
            return None;
        }
        let mut idx = 0usize;
        for a in 0..self.dim() {
            let local = coord[a] - self.origin[a];
            if local < 0 || local >= self.cells[a] as i64 {
                return None;
            }
            idx = idx * self.cells[a] + local as usize;
        }
        Some(idx)
    }

    pub fn contains(&self, other: &LatticeWindow) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|a| {
                other.origin[a] >= self.origin[a]
                    && other.origin[a] + other.cells[a] as i64 <= self.origin[a] + self.cells[a] as i64
            })
    }

    pub fn is_disjoint(&self, other: &LatticeWindow) -> bool {
        other.dim() != self.dim()
            || (0..self.dim()).any(|a| {
                other.origin[a] >= self.origin[a] + self.cells[a] as i64
                    || self.origin[a] >= other.origin[a] + other.cells[a] as i64
            })
    }

    pub fn translated(&self, z: &[i64]) -> Result<LatticeWindow> {
        if z.len() != self.dim() {
            return Err(Error::InvalidInput(
                "shift dimension does not match window".into(),
            ));
        }
        let mut w = self.clone();
        for (o, dz) in w.origin.iter_mut().zip(z) {
            *o += dz;
        }
        Ok(w)
    }

    /// Common cells of two windows with the same cell side.
    pub fn intersection(&self, other: &LatticeWindow) -> Option<LatticeWindow> {
        if self.dim() != other.dim() || self.h_bits != other.h_bits {
            return None;
        }
        let d = self.dim();
        let mut origin = Vec::with_capacity(d);
        let mut cells = Vec::with_capacity(d);
        for a in 0..d {
            let lo = self.origin[a].max(other.origin[a]);
            let hi = (self.origin[a] + self.cells[a] as i64).min(other.origin[a] + other.cells[a] as i64);
            if hi <= lo {
                return None;
            }
            origin.push(lo);
            cells.push((hi - lo) as usize);
        }
        Some(LatticeWindow {
            cells,
            h_bits: self.h_bits,
            origin,
            periodic: false,
        })
    }

    /// The window covering two disjoint windows, if their union is a box.
    pub fn union_box(&self, other: &LatticeWindow) -> Option<LatticeWindow> {
        if self.dim() != other.dim() || self.h_bits != other.h_bits || !self.is_disjoint(other) {
            return None;
        }
        let d = self.dim();
        let lo: Vec<i64> = (0..d).map(|a| self.origin[a].min(other.origin[a])).collect();
        let cells: Vec<usize> = (0..d)
            .map(|a| {
                let hi = (self.origin[a] + self.cells[a] as i64).max(other.origin[a] + other.cells[a] as i64);
                (hi - lo[a]) as usize
            })
            .collect();
        let total: usize = cells.iter().product();
        if total != self.cell_count() + other.cell_count() {
            return None;
        }
        Some(LatticeWindow {
            cells,
            h_bits: self.h_bits,
            origin: lo,
            periodic: false,
        })
    }
}

impl fmt::Display for LatticeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in 0..self.dim() {
            if a > 0 {
                write!(f, "x")?;
            }
            write!(
                f,
                "[{},{})",
                self.origin[a],
                self.origin[a] + self.cells[a] as i64
            )?;
        }
        Ok(())
    }
}

/// An occupancy vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration(pub Vec<u16>);

impl Configuration {
    pub fn total(&self) -> usize {
        self.0.iter().map(|&x| x as usize).sum()
    }
}

/// One transition `n → n + e_site` of the truncated space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub site: usize,
}

/// The truncated Poisson reference on a [`ConfigSpace`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceMeasure {
    pub weights: Vec<f64>,
    /// Untruncated Poisson mass outside the state set.
    pub truncation_mass: f64,
}

/// Cap on the total occupancy of a group of sites.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteBlock {
    pub sites: Vec<usize>,
    pub cap: usize,
}

/// Options for [`ConfigSpace::build_with`].
#[derive(Clone, Debug)]
pub struct SpaceOptions {
    pub site_volumes: Option<Vec<f64>>,
    /// Block caps on top of the total cap `n_max`.
    pub blocks: Vec<SiteBlock>,
    pub state_cap: usize,
}

impl Default for SpaceOptions {
    fn default() -> Self {
        Self {
            site_volumes: None,
            blocks: Vec::new(),
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

impl SpaceOptions {
    /// One singleton block per site.
    pub fn site_caps(caps: &[usize]) -> Vec<SiteBlock> {
        caps.iter()
            .enumerate()
            .map(|(j, &cap)| SiteBlock { sites: vec![j], cap })
            .collect()
    }
}

/// Enumerated truncated occupancy space over a window.
#[derive(Debug)]
pub struct ConfigSpace {
    window: LatticeWindow,
    n_max: usize,
    m: usize,
    site_volumes: Vec<f64>,
    blocks: Vec<SiteBlock>,
    occ: Vec<u16>,
    totals: Vec<u16>,
    index: HashMap<Box<[u16]>, u32>,
    up: Vec<u32>,
    down: Vec<u32>,
    edge_of: Vec<u32>,
    edges: Vec<Edge>,
    reference: ReferenceMeasure,
}

impl PartialEq for ConfigSpace {
    fn eq(&self, other: &Self) -> bool {
        self.window == other.window
            && self.n_max == other.n_max
            && self.site_volumes == other.site_volumes
            && self.blocks == other.blocks
    }
}

/// Number of occupancy vectors in `ℕ₀^m` with total at most `n_max`,
/// i.e. `C(m + n_max, n_max)`, as a float so that huge values do not overflow.
pub fn state_count(m: usize, n_max: usize) -> f64 {
    let mut s = 1.0f64;
    for i in 1..=n_max {
        s = s * (m + i) as f64 / i as f64;
    }
    s.round()
}

/// Builds the space with default options.
pub fn build_space(window: LatticeWindow, n_max: usize) -> Result<Arc<ConfigSpace>> {
    ConfigSpace::build(window, n_max)
}

/// Sorted, deduplicated blocks with the non-binding ones dropped.
fn normalize_blocks(mut blocks: Vec<SiteBlock>, m: usize, n_max: usize) -> Result<Vec<SiteBlock>> {
    for b in &mut blocks {
        b.sites.sort_unstable();
        b.sites.dedup();
        if b.sites.iter().any(|&j| j >= m) {
            return Err(Error::InvalidInput(format!(
                "block site out of range for {m} sites"
            )));
        }
    }
    blocks.retain(|b| !b.sites.is_empty() && b.cap < n_max);
    blocks.sort();
    blocks.dedup();
    // A block inside a larger block with no larger cap is implied by it.
    let keep: Vec<bool> = (0..blocks.len())
        .map(|a| {
            !(0..blocks.len()).any(|b| {
                b != a
                    && blocks[b].cap <= blocks[a].cap
                    && blocks[a].sites.iter().all(|j| blocks[b].sites.contains(j))
            })
        })
        .collect();
    let blocks: Vec<SiteBlock> = blocks
        .into_iter()
        .zip(keep)
        .filter_map(|(b, k)| k.then_some(b))
        .collect();
    // So is a block whose disjoint sub-blocks already cap it.
    let keep: Vec<bool> = blocks
        .iter()
        .map(|outer| {
            let mut subs: Vec<&SiteBlock> = blocks
                .iter()
                .filter(|b| {
                    b.sites.len() < outer.sites.len() && b.sites.iter().all(|j| outer.sites.contains(j))
                })
                .collect();
            subs.sort_by_key(|b| b.cap);
            let mut taken: Vec<usize> = Vec::new();
            let mut bound = 0;
            for b in subs {
                if b.sites.iter().all(|j| !taken.contains(j)) {
                    taken.extend(&b.sites);
                    bound += b.cap;
                }
            }
            bound += (outer.sites.len() - taken.len()) * n_max;
            bound > outer.cap
        })
        .collect();
    Ok(blocks
        .into_iter()
        .zip(keep)
        .filter_map(|(b, k)| k.then_some(b))
        .collect())
}

/// Upper bound on the state count, exact when the blocks are disjoint.
fn blocked_state_count(m: usize, n_max: usize, blocks: &[SiteBlock]) -> f64 {
    let mut taken = vec![false; m];
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut order: Vec<&SiteBlock> = blocks.iter().collect();
    order.sort_by_key(|b| b.cap);
    for b in order {
        if b.sites.iter().all(|&j| !taken[j]) {
            for &j in &b.sites {
                taken[j] = true;
            }
            groups.push((b.sites.len(), b.cap));
        }
    }
    groups.extend(taken.iter().filter(|t| !**t).map(|_| (1, n_max)));
    // Generating function in the total occupancy, truncated at n_max.
    let mut ways = vec![0.0f64; n_max + 1];
    ways[0] = 1.0;
    for (size, cap) in groups {
        let mut next = vec![0.0; n_max + 1];
        for (t, &w) in ways.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for n in 0..=cap.min(n_max - t) {
                let parts = if n == 0 { 1.0 } else { state_count(size - 1, n) };
                next[t + n] += w * parts;
            }
        }
        ways = next;
    }
    ways.iter().sum()
}

struct Composer<'a> {
    blocks: &'a [SiteBlock],
    site_blocks: Vec<Vec<usize>>,
    used: Vec<usize>,
    prefix: Vec<u16>,
}

impl Composer<'_> {
    fn room(&self, j: usize, n_max: usize) -> usize {
        self.site_blocks[j]
            .iter()
            .map(|&b| self.blocks[b].cap - self.used[b])
            .fold(n_max, usize::min)
    }

    fn push(&mut self, total: usize, n_max: usize, out: &mut Vec<u16>) {
        let j = self.prefix.len();
        let m = self.site_blocks.len();
        if j + 1 == m {
            if total <= self.room(j, n_max) {
                self.prefix.push(total as u16);
                out.extend_from_slice(&self.prefix);
                self.prefix.pop();
            }
            return;
        }
        let rest: usize = (j + 1..m).map(|i| self.room(i, n_max)).sum();
        for first in (0..=total.min(self.room(j, n_max))).rev() {
            if total - first > rest {
                break;
            }
            for &b in &self.site_blocks[j] {
                self.used[b] += first;
            }
            self.prefix.push(first as u16);
            self.push(total - first, n_max, out);
            self.prefix.pop();
            for &b in &self.site_blocks[j] {
                self.used[b] -= first;
            }
        }
    }
}

impl ConfigSpace {
    pub fn build(window: LatticeWindow, n_max: usize) -> Result<Arc<Self>> {
        Self::build_with(window, n_max, SpaceOptions::default())
    }

    pub fn build_with(window: LatticeWindow, n_max: usize, opts: SpaceOptions) -> Result<Arc<Self>> {
        if n_max == 0 {
            return Err(Error::InvalidInput("n_max must be at least 1".into()));
        }
        if n_max > u16::MAX as usize {
            return Err(Error::InvalidInput("n_max too large".into()));
        }
        let m = window.cell_count();
        let blocks = normalize_blocks(opts.blocks, m, n_max)?;
        let count = blocked_state_count(m, n_max, &blocks);
        if count > opts.state_cap as f64 {
            return Err(Error::Sizing {
                what: "state space",
                requested: count,
                cap: opts.state_cap as f64,
            });
        }
        let site_volumes = match opts.site_volumes {
            Some(v) => {
                if v.len() != m {
                    return Err(Error::InvalidInput(format!(
                        "expected {m} site volumes, got {}",
                        v.len()
                    )));
                }
                if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                    return Err(Error::InvalidInput("site volumes must be positive".into()));
                }
                v
            }
            None => vec![window.cell_volume(); m],
        };

        let mut site_blocks = vec![Vec::new(); m];
        for (b, blk) in blocks.iter().enumerate() {
            for &j in &blk.sites {
                site_blocks[j].push(b);
            }
        }
        let mut composer = Composer {
            blocks: &blocks,
            site_blocks,
            used: vec![0; blocks.len()],
            prefix: Vec::with_capacity(m),
        };
        let mut occ = Vec::with_capacity(count as usize * m);
        for k in 0..=n_max {
            composer.push(k, n_max, &mut occ);
        }
        let s = occ.len() / m;

        let mut index = HashMap::with_capacity(s);
        let mut totals = Vec::with_capacity(s);
        for i in 0..s {
            let st = &occ[i * m..(i + 1) * m];
            totals.push(st.iter().sum::<u16>());
            index.insert(st.to_vec().into_boxed_slice(), i as u32);
        }

        let mut up = vec![NONE; s * m];
        let mut down = vec![NONE; s * m];
        let mut edge_of = vec![NONE; s * m];
        let mut edges = Vec::new();
        let mut buf = vec![0u16; m];
        for i in 0..s {
            if totals[i] as usize >= n_max {
                continue;
            }
            buf.copy_from_slice(&occ[i * m..(i + 1) * m]);
            for j in 0..m {
                buf[j] += 1;
                let t = index.get(&buf[..]).copied();
                buf[j] -= 1;
                let Some(t) = t else { continue };
                up[i * m + j] = t;
                down[t as usize * m + j] = i as u32;
                edge_of[i * m + j] = edges.len() as u32;
                edges.push(Edge {
                    from: i,
                    to: t as usize,
                    site: j,
                });
            }
        }

        let mut space = ConfigSpace {
            window,
            n_max,
            m,
            site_volumes,
            blocks,
            occ,
            totals,
            index,
            up,
            down,
            edge_of,
            edges,
            reference: ReferenceMeasure {
                weights: Vec::new(),
                truncation_mass: 0.0,
            },
        };
        space.reference = reference_measure(&space);
        Ok(Arc::new(space))
    }

    /// Same states on a translated window.
    pub fn translated(&self, z: &[i64]) -> Result<Arc<ConfigSpace>> {
        let window = self.window.translated(z)?;
        Ok(Arc::new(ConfigSpace {
            window,
            n_max: self.n_max,
            m: self.m,
            site_volumes: self.site_volumes.clone(),
            blocks: self.blocks.clone(),
            occ: self.occ.clone(),
            totals: self.totals.clone(),
            index: self.index.clone(),
            up: self.up.clone(),
            down: self.down.clone(),
            edge_of: self.edge_of.clone(),
            edges: self.edges.clone(),
            reference: self.reference.clone(),
        }))
    }

    pub fn window(&self) -> &LatticeWindow {
        &self.window
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Number of sites `m`.
    pub fn sites(&self) -> usize {
        self.m
    }

    /// Number of states `S`.
    pub fn len(&self) -> usize {
        self.totals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.totals.is_empty()
    }

    pub fn site_volumes(&self) -> &[f64] {
        &self.site_volumes
    }

    /// Block caps beyond the total cap.
    pub fn blocks(&self) -> &[SiteBlock] {
        &self.blocks
    }

    /// Largest occupancy site `j` can hold on its own.
    pub fn site_cap(&self, j: usize) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.sites.contains(&j))
            .map(|b| b.cap)
            .fold(self.n_max, usize::min)
    }

    /// True when some site of state `i` cannot receive another point.
    pub fn at_ceiling(&self, i: usize) -> bool {
        (0..self.m).any(|j| self.up[i * self.m + j] == NONE)
    }

    pub fn volume(&self) -> f64 {
        self.site_volumes.iter().sum()
    }

    pub fn state(&self, i: usize) -> &[u16] {
        &self.occ[i * self.m..(i + 1) * self.m]
    }

    pub fn configuration(&self, i: usize) -> Configuration {
        Configuration(self.state(i).to_vec())
    }

    pub fn total(&self, i: usize) -> usize {
        self.totals[i] as usize
    }

    pub fn index_of(&self, occupancy: &[u16]) -> Option<usize> {
        self.index.get(occupancy).map(|&i| i as usize)
    }

    /// Index of `n + e_site`, or `None` at the truncation boundary.
    pub fn add_point(&self, state: usize, site: usize) -> Option<usize> {
        let t = self.up[state * self.m + site];
        (t != NONE).then_some(t as usize)
    }

    /// Index of `n − e_site`, or `None` when site is empty.
    pub fn remove_point(&self, state: usize, site: usize) -> Option<usize> {
        let t = self.down[state * self.m + site];
        (t != NONE).then_some(t as usize)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edge index of `(state, site)` if `state + e_site` exists.
    pub fn edge_id(&self, state: usize, site: usize) -> Option<usize> {
        let e = self.edge_of[state * self.m + site];
        (e != NONE).then_some(e as usize)
    }

    pub fn reference(&self) -> &ReferenceMeasure {
        &self.reference
    }

    /// Reference weights `π(n)`.
    pub fn pi(&self) -> &[f64] {
        &self.reference.weights
    }

    /// Weight `π(n)·v_j` of an edge.
    pub fn edge_weight(&self, e: usize) -> f64 {
        let ed = self.edges[e];
        self.reference.weights[ed.from] * self.site_volumes[ed.site]
    }

    pub fn edge_weights(&self) -> Vec<f64> {
        (0..self.edges.len()).map(|e| self.edge_weight(e)).collect()
    }

    pub fn to_document(&self) -> SpaceDocument {
        let uniform = self
            .site_volumes
            .iter()
            .all(|&v| v.to_bits() == self.window.cell_volume().to_bits());
        SpaceDocument {
            schema: SCHEMA.to_string(),
            dim: self.window.dim(),
            cells: self.window.cells.clone(),
            h: self.window.h(),
            n_max: self.n_max,
            order: "gradedlex".to_string(),
            origin: self.window.origin.clone(),
            periodic: self.window.periodic,
            site_volumes: (!uniform).then(|| self.site_volumes.clone()),
            blocks: (!self.blocks.is_empty()).then(|| self.blocks.clone()),
            weights: self.reference.weights.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("space document serializes")
    }

    pub fn from_json(s: &str) -> Result<Arc<ConfigSpace>> {
        let doc: SpaceDocument = serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))?;
        doc.into_space()
    }
}

/// Serialized form of a [`ConfigSpace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDocument {
    pub schema: String,
    pub dim: usize,
    pub cells: Vec<usize>,
    pub h: f64,
    pub n_max: usize,
    pub order: String,
    #[serde(default)]
    pub origin: Vec<i64>,
    #[serde(default)]
    pub periodic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_volumes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<SiteBlock>>,
    pub weights: Vec<f64>,
}

impl SpaceDocument {
    pub fn into_space(self) -> Result<Arc<ConfigSpace>> {
        if self.schema != SCHEMA {
            return Err(Error::InvalidInput(format!("unknown schema {}", self.schema)));
        }
        if self.order != "gradedlex" {
            return Err(Error::InvalidInput(format!("unknown order {}", self.order)));
        }
        if self.cells.len() != self.dim {
            return Err(Error::InvalidInput("dim does not match cells".into()));
        }
        let mut window = LatticeWindow::new(self.cells, self.h)?.periodic(self.periodic);
        if !self.origin.is_empty() {
            window = window.with_origin(self.origin)?;
        }
        let space = ConfigSpace::build_with(
            window,
            self.n_max,
            SpaceOptions {
                site_volumes: self.site_volumes,
                blocks: self.blocks.unwrap_or_default(),
                ..SpaceOptions::default()
            },
        )?;
        if space.pi().len() != self.weights.len() {
            return Err(Error::InvalidInput("weight vector has the wrong length".into()));
        }
        for (a, b) in space.pi().iter().zip(&self.weights) {
            if (a - b).abs() > 4.0 * f64::EPSILON * a.abs().max(f64::MIN_POSITIVE) {
                return Err(Error::InvalidInput(
                    "stored weights do not match the space".into(),
                ));
            }
        }
        Ok(space)
    }
}

/// `ln k!` for `k = 0..=n`.
pub(crate) fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0f64;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// `P(N > n)` for `N ~ Poisson(mean)`, summed from the tail for accuracy.
pub fn poisson_tail(mean: f64, n: usize) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let lf = ln_factorials(n + 1);
    let mut k = n + 1;
    let mut term = (-mean + k as f64 * mean.ln() - lf[n + 1]).exp();
    let mut sum = 0.0;
    while term > 0.0 {
        sum += term;
        k += 1;
        term *= mean / k as f64;
        if term < sum * 1e-18 && (k as f64) > mean {
            break;
        }
    }
    sum.min(1.0)
}

/// Truncated Poisson weights `π(n) ∝ Π_j v_j^{n_j} / n_j!`, normalized to one.
pub fn reference_measure(space: &ConfigSpace) -> ReferenceMeasure {
    let m = space.m;
    let lf = ln_factorials(space.n_max);
    let lv: Vec<f64> = space.site_volumes.iter().map(|v| v.ln()).collect();
    let logw: Vec<f64> = (0..space.len())
        .map(|i| {
            space.occ[i * m..(i + 1) * m]
                .iter()
                .enumerate()
                .map(|(j, &n)| {
                    let n = n as usize;
                    if n == 0 {
                        0.0
                    } else {
                        n as f64 * lv[j] - lf[n]
                    }
                })
                .sum()
        })
        .collect();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= z;
    }
    let covered: usize = space.blocks.iter().map(|b| b.sites.len()).sum();
    let disjoint = {
        let mut seen = vec![false; m];
        space
            .blocks
            .iter()
            .flat_map(|b| &b.sites)
            .all(|&j| !std::mem::replace(&mut seen[j], true))
    };
    let total_caps: usize = space.blocks.iter().map(|b| b.cap).sum();
    let truncation_mass = if space.blocks.is_empty() {
        poisson_tail(space.volume(), space.n_max)
    } else if disjoint && covered == m && total_caps <= space.n_max {
        // Independent blocks: one minus a product of per-block masses.
        let log_inside: f64 = space
            .blocks
            .iter()
            .map(|b| {
                let v: f64 = b.sites.iter().map(|&j| space.site_volumes[j]).sum();
                (-poisson_tail(v, b.cap)).ln_1p()
            })
            .sum();
        -log_inside.exp_m1()
    } else {
        let inside: f64 = logw.iter().map(|l| (l - space.volume()).exp()).sum();
        (1.0 - inside).max(0.0)
    };
    ReferenceMeasure {
        weights,
        truncation_mass,
    }
}

/// Occupancy of `sub`'s sites read off a state of `space`.
fn site_map(space: &ConfigSpace, sub: &LatticeWindow) -> Result<Vec<usize>> {
    (0..sub.cell_count())
        .map(|j| {
            space
                .window
                .site_of(&sub.cell_coord(j))
                .ok_or_else(|| Error::WindowMismatch(format!("{} is not inside {}", sub, space.window)))
        })
        .collect()
}

/// Marginal law of `P` on the sub-window.
///
/// The law is summed over the complementary occupancies, which is the density
/// formula `ρ_sub(n₁) = Σ ρ(n₁+n₂) π(n₁+n₂) / π_sub(n₁)` of the untruncated model.
pub fn restrict(p: &DensityMeasure, sub: &LatticeWindow) -> Result<DensityMeasure> {
    let space = p.space();
    if !space.window.contains(sub) || sub.h_bits != space.window.h_bits {
        return Err(Error::WindowMismatch(format!(
            "{} is not inside {}",
            sub, space.window
        )));
    }
    let map = site_map(space, sub)?;
    let volumes: Vec<f64> = map.iter().map(|&j| space.site_volumes[j]).collect();
    let blocks = space
        .blocks
        .iter()
        .map(|b| SiteBlock {
            sites: (0..map.len()).filter(|k| b.sites.contains(&map[*k])).collect(),
            cap: b.cap,
        })
        .collect();
    let sub_space = ConfigSpace::build_with(
        sub.clone().periodic(false),
        space.n_max,
        SpaceOptions {
            site_volumes: Some(volumes),
            blocks,
            ..SpaceOptions::default()
        },
    )?;
    let law = p.law();
    let mut sub_law = vec![0.0; sub_space.len()];
    let mut buf = vec![0u16; map.len()];
    for i in 0..space.len() {
        if law[i] == 0.0 {
            continue;
        }
        let st = space.state(i);
        for (b, &j) in buf.iter_mut().zip(&map) {
            *b = st[j];
        }
        let t = sub_space
            .index_of(&buf)
            .expect("marginal stays in the truncated set");
        sub_law[t] += law[i];
    }
    DensityMeasure::from_law(sub_space, sub_law)
}

/// Independent product of laws on disjoint windows whose union is a box.
///
/// The combined truncation defaults to `n_max_A + n_max_B`, in which case no
/// mass is clipped. A smaller `n_max` clips the cross terms and renormalizes.
pub fn product(p: &DensityMeasure, q: &DensityMeasure, n_max: Option<usize>) -> Result<Clipped> {
    product_with_cap(p, q, n_max, DEFAULT_STATE_CAP)
}

pub fn product_with_cap(
    p: &DensityMeasure,
    q: &DensityMeasure,
    n_max: Option<usize>,
    state_cap: usize,
) -> Result<Clipped> {
    let (a, b) = (p.space(), q.space());
    let window = a.window.union_box(&b.window).ok_or_else(|| {
        Error::WindowMismatch(format!(
            "{} and {} must be disjoint with a box-shaped union",
            a.window, b.window
        ))
    })?;
    let n_max = n_max.unwrap_or(a.n_max + b.n_max);
    let ma = site_map_into(&window, &a.window);
    let mb = site_map_into(&window, &b.window);
    let mut volumes = vec![0.0; window.cell_count()];
    let mut blocks = Vec::new();
    for (sp, map) in [(a, &ma), (b, &mb)] {
        for (j, &g) in map.iter().enumerate() {
            volumes[g] = sp.site_volumes[j];
        }
        blocks.push(SiteBlock {
            sites: map.clone(),
            cap: sp.n_max,
        });
        blocks.extend(sp.blocks.iter().map(|blk| SiteBlock {
            sites: blk.sites.iter().map(|&j| map[j]).collect(),
            cap: blk.cap,
        }));
    }
    let space = ConfigSpace::build_with(
        window,
        n_max,
        SpaceOptions {
            site_volumes: Some(volumes),
            blocks,
            state_cap,
        },
    )?;
    let (la, lb) = (p.law(), q.law());
    let mut law = vec![0.0; space.len()];
    let mut buf = vec![0u16; space.m];
    let mut kept = 0.0;
    for i in 0..a.len() {
        if la[i] == 0.0 {
            continue;
        }
        for k in 0..b.len() {
            if a.total(i) + b.total(k) > n_max || lb[k] == 0.0 {
                continue;
            }
            for (j, &g) in ma.iter().enumerate() {
                buf[g] = a.state(i)[j];
            }
            for (j, &g) in mb.iter().enumerate() {
                buf[g] = b.state(k)[j];
            }
            let Some(t) = space.index_of(&buf) else {
                continue;
            };
            law[t] = la[i] * lb[k];
            kept += law[t];
        }
    }
    let defect = (1.0 - kept).max(0.0);
    Ok(Clipped {
        measure: DensityMeasure::from_law(space, law)?,
        defect,
    })
}

fn site_map_into(big: &LatticeWindow, small: &LatticeWindow) -> Vec<usize> {
    (0..small.cell_count())
        .map(|j| {
            big.site_of(&small.cell_coord(j))
                .expect("sub-window inside union")
        })
        .collect()
}

/// Translates the window by `z`. Site numbering and density values are kept.
pub fn shift(p: &DensityMeasure, z: &[i64]) -> Result<DensityMeasure> {
    Ok(DensityMeasure::relabeled(p.space().translated(z)?, p))
}

/// Site permutation `j ↦ σ(j)` of a periodic window induced by the cyclic shift `z`.
pub fn cyclic_permutation(window: &LatticeWindow, z: &[i64]) -> Result<Vec<usize>> {
    if !window.is_periodic() {
        return Err(Error::WindowMismatch(format!("{window} is not periodic")));
    }
    if z.len() != window.dim() {
        return Err(Error::InvalidInput(
            "shift dimension does not match window".into(),
        ));
    }
    Ok((0..window.cell_count())
        .map(|j| {
            let c = window.cell_coord(j);
            let moved: Vec<i64> = (0..window.dim())
                .map(|a| {
                    let n = window.cells()[a] as i64;
                    window.origin()[a] + (c[a] - window.origin()[a] + z[a]).rem_euclid(n)
                })
                .collect();
            window.site_of(&moved).expect("cyclic image stays in window")
        })
        .collect())
}

/// State permutation induced by a site permutation: `state_perm[i]` is the
/// index of the state whose site `σ(j)` holds `n_j` of state `i`.
pub fn state_permutation(space: &ConfigSpace, site_perm: &[usize]) -> Vec<usize> {
    state_permutation_into(space, space, site_perm)
}

fn state_permutation_into(space: &ConfigSpace, target: &ConfigSpace, site_perm: &[usize]) -> Vec<usize> {
    let mut buf = vec![0u16; space.m];
    (0..space.len())
        .map(|i| {
            for (j, &n) in space.state(i).iter().enumerate() {
                buf[site_perm[j]] = n;
            }
            target.index_of(&buf).expect("permuted state is enumerated")
        })
        .collect()
}

/// Relabels sites by `σ`, carrying site volumes along.
pub fn permute_sites(p: &DensityMeasure, site_perm: &[usize]) -> Result<DensityMeasure> {
    let space = p.space();
    if site_perm.len() != space.m {
        return Err(Error::InvalidInput(
            "permutation length does not match sites".into(),
        ));
    }
    let mut volumes = vec![0.0; space.m];
    for (j, &s) in site_perm.iter().enumerate() {
        volumes[s] = space.site_volumes[j];
    }
    let blocks: Vec<SiteBlock> = space
        .blocks
        .iter()
        .map(|b| {
            let mut sites: Vec<usize> = b.sites.iter().map(|&j| site_perm[j]).collect();
            sites.sort_unstable();
            SiteBlock { sites, cap: b.cap }
        })
        .collect();
    let mut sorted = blocks.clone();
    sorted.sort();
    let same = volumes == space.site_volumes && sorted == space.blocks;
    let target = if same {
        p.space_arc().clone()
    } else {
        ConfigSpace::build_with(
            space.window.clone(),
            space.n_max,
            SpaceOptions {
                site_volumes: Some(volumes),
                blocks,
                ..SpaceOptions::default()
            },
        )?
    };
    let perm = state_permutation_into(space, &target, site_perm);
    let mut rho = vec![0.0; space.len()];
    for (i, &t) in perm.iter().enumerate() {
        rho[t] = p.rho()[i];
    }
    DensityMeasure::new(target, rho)
}

/// Cyclic shift by `z` on a periodic window.
pub fn cyclic_shift(p: &DensityMeasure, z: &[i64]) -> Result<DensityMeasure> {
    let perm = cyclic_permutation(p.space().window(), z)?;
    permute_sites(p, &perm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_brute(m: usize, n_max: usize) -> usize {
        let mut c = 0;
        let mut n = vec![0usize; m];
        loop {
            if n.iter().sum::<usize>() <= n_max {
                c += 1;
            }
            let mut a = 0;
            loop {
                if a == m {
                    return c;
                }
                n[a] += 1;
                if n[a] <= n_max {
                    break;
                }
                n[a] = 0;
                a += 1;
            }
        }
    }

    #[test]
    fn state_counts_match_enumeration() {
        for m in 1..=4 {
            for n_max in 1..=4 {
                let s = build_space(LatticeWindow::interval(m).unwrap(), n_max).unwrap();
                assert_eq!(s.len(), count_brute(m, n_max));
                assert_eq!(s.len() as f64, state_count(m, n_max));
                let by_degree: f64 = (0..=n_max).map(|k| state_count(m - 1, k)).sum();
                assert_eq!(s.len() as f64, by_degree);
                for i in 0..s.len() {
                    assert_eq!(s.index_of(s.state(i)), Some(i));
                }
            }
        }
        assert_eq!(
            build_space(LatticeWindow::interval(1).unwrap(), 1).unwrap().len(),
            2
        );
        assert_eq!(
            build_space(LatticeWindow::interval(2).unwrap(), 2).unwrap().len(),
            6
        );
        assert_eq!(
            build_space(LatticeWindow::interval(3).unwrap(), 2).unwrap().len(),
            10
        );
    }

    #[test]
    fn graded_lex_order() {
        let s = build_space(LatticeWindow::interval(2).unwrap(), 2).unwrap();
        let states: Vec<Vec<u16>> = (0..s.len()).map(|i| s.state(i).to_vec()).collect();
        assert_eq!(
            states,
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
    }

    #[test]
    fn add_and_remove() {
        let s = build_space(LatticeWindow::interval(2).unwrap(), 2).unwrap();
        let e = s.index_of(&[0, 0]).unwrap();
        let a = s.add_point(e, 0).unwrap();
        assert_eq!(s.state(a), &[1, 0]);
        assert_eq!(s.remove_point(a, 0), Some(e));
        let full = s.index_of(&[1, 1]).unwrap();
        assert_eq!(s.add_point(full, 0), None);
        assert_eq!(s.add_point(full, 1), None);
        assert_eq!(s.remove_point(e, 1), None);
    }

    #[test]
    fn reference_weights() {
        let s = build_space(LatticeWindow::interval(1).unwrap(), 1).unwrap();
        assert!((s.pi()[0] - 0.5).abs() < 1e-15 && (s.pi()[1] - 0.5).abs() < 1e-15);
        let s = build_space(LatticeWindow::interval(1).unwrap(), 2).unwrap();
        for (a, b) in s.pi().iter().zip([0.4, 0.4, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
        // P(Poisson(1) > 2) = 1 - 2.5/e
        assert!((s.reference().truncation_mass - (1.0 - 2.5 / std::f64::consts::E)).abs() < 1e-15);
    }

    #[test]
    fn detailed_balance() {
        let w = LatticeWindow::new(vec![3], 0.7).unwrap();
        let s = ConfigSpace::build_with(
            w,
            4,
            SpaceOptions {
                site_volumes: Some(vec![0.3, 1.1, 2.0]),
                ..Default::default()
            },
        )
        .unwrap();
        for e in s.edges() {
            let n_j = s.state(e.from)[e.site] as f64;
            let lhs = s.pi()[e.from] * s.site_volumes()[e.site];
            let rhs = s.pi()[e.to] * (n_j + 1.0);
            assert!((lhs - rhs).abs() <= 1e-14 * lhs);
        }
        assert!((s.pi().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sizing_error() {
        let w = LatticeWindow::interval(40).unwrap();
        match build_space(w, 10) {
            Err(Error::Sizing { .. }) => {}
            other => panic!("expected sizing error, got {other:?}"),
        }
    }

    #[test]
    fn windows() {
        let a = LatticeWindow::interval(3).unwrap();
        let b = a.translated(&[3]).unwrap();
        assert!(a.is_disjoint(&b));
        assert!(!a.is_disjoint(&a.translated(&[2]).unwrap()));
        let u = a.union_box(&b).unwrap();
        assert_eq!(u.cells(), &[6]);
        assert!(u.contains(&a) && u.contains(&b));
        assert!(a.union_box(&a.translated(&[4]).unwrap()).is_none());
        let sq = LatticeWindow::new(vec![2, 3], 0.5).unwrap();
        assert_eq!(sq.cell_count(), 6);
        assert!((sq.volume() - 1.5).abs() < 1e-15);
        for j in 0..6 {
            assert_eq!(sq.site_of(&sq.cell_coord(j)), Some(j));
        }
    }

    #[test]
    fn json_round_trip() {
        let w = LatticeWindow::new(vec![2], 0.5)
            .unwrap()
            .with_origin(vec![-1])
            .unwrap();
        let s = ConfigSpace::build_with(
            w,
            3,
            SpaceOptions {
                site_volumes: Some(vec![0.5, 0.25]),
                ..Default::default()
            },
        )
        .unwrap();
        let back = ConfigSpace::from_json(&s.to_json()).unwrap();
        assert_eq!(*back, *s);
        for (a, b) in back.pi().iter().zip(s.pi()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
