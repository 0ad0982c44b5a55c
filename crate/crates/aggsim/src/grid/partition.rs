//! Seeded partitioning of the grid into balanced, connected clusters.
//!
//! A cluster set is carved out of a BFS spanning tree of the node set with a
//! dynamic program over subtrees: state `(clusters completed, size of the
//! open cluster containing this node)`. The program asks for every cluster
//! size inside a window around `n/k`; if the tree cannot satisfy the window
//! it widens one node at a time, so the spread is always the smallest the
//! topology admits. Tree-connected clusters are connected in the grid, and
//! the whole construction is deterministic for a fixed `(grid, k, seed)`
//! (the seed picks the tree roots).
//!
//! Even cluster counts are produced by splitting each cluster of the `k/2`
//! partition in two, so granularity chains like 6 -> 12 -> 24 -> 48 are
//! nested refinements from the same seed. Balance and connectivity take
//! precedence; the identity partition refines everything.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{Grid, NodeId};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("cluster count {k} out of range 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("separation constraint names unknown node {0}")]
    UnknownNode(NodeId),
    #[error("separation constraints are unsatisfiable (pair {0}, {1})")]
    Unsatisfiable(NodeId, NodeId),
}

/// Assignment of every node to one of `cluster_count` clusters. Cluster ids
/// are dense `0..cluster_count`, ordered by each cluster's smallest node id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    cluster_count: usize,
    assignment: BTreeMap<NodeId, usize>,
}

impl Partition {
    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn cluster_of(&self, id: NodeId) -> Option<usize> {
        self.assignment.get(&id).copied()
    }

    /// Node-id -> cluster-id map, ascending by node id.
    pub fn assignment(&self) -> &BTreeMap<NodeId, usize> {
        &self.assignment
    }

    /// Members of every cluster, each sorted ascending.
    pub fn clusters(&self) -> Vec<Vec<NodeId>> {
        let mut clusters = vec![Vec::new(); self.cluster_count];
        for (&id, &c) in &self.assignment {
            clusters[c].push(id);
        }
        clusters
    }

    /// True iff `fine` splits this partition: nodes sharing a fine cluster
    /// always share a coarse cluster.
    pub fn is_refined_by(&self, fine: &Partition) -> bool {
        let mut coarse_of_fine: BTreeMap<usize, usize> = BTreeMap::new();
        for (&id, &fc) in &fine.assignment {
            let Some(&cc) = self.assignment.get(&id) else {
                return false;
            };
            match coarse_of_fine.get(&fc) {
                Some(&seen) if seen != cc => return false,
                None => {
                    coarse_of_fine.insert(fc, cc);
                }
                _ => {}
            }
        }
        true
    }

    /// Partition export rows: `node_id cluster_id`, one per node.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for (&id, &c) in &self.assignment {
            out.push_str(&format!("{id} {c}\n"));
        }
        out
    }
}

/// Partition the grid into `k` non-empty connected clusters, deterministic
/// for a fixed `(grid, k, seed)`.
pub fn partition_grid(grid: &Grid, k: usize, seed: u64) -> Result<Partition, PartitionError> {
    partition_grid_with(grid, k, seed, &[])
}

/// Partition with separation constraints: no cluster may contain both nodes
/// of any listed pair. The experiment harness uses this to keep disrupted
/// links inter-agent at every granularity; balanced clustering would
/// otherwise absorb adjacent pairs into one cluster at coarse k.
pub fn partition_grid_with(
    grid: &Grid,
    k: usize,
    seed: u64,
    separate: &[(NodeId, NodeId)],
) -> Result<Partition, PartitionError> {
    let all: Vec<NodeId> = grid.node_ids().into_iter().collect();
    let n = all.len();
    if k == 0 || k > n {
        return Err(PartitionError::KOutOfRange { k, n });
    }
    let constraints = Constraints::build(grid, separate)?;
    let clusters = split(grid, all, k, seed, 1, &constraints)
        .ok_or_else(|| match separate.first() {
            Some(&(a, b)) => PartitionError::Unsatisfiable(a, b),
            None => PartitionError::KOutOfRange { k, n },
        })?;
    let mut assignment = BTreeMap::new();
    for (c, members) in clusters.iter().enumerate() {
        for &id in members {
            assignment.insert(id, c);
        }
    }
    Ok(Partition {
        cluster_count: k,
        assignment,
    })
}

/// Must-separate pairs compiled to bitmask form: each constrained node gets
/// one bit, and a cluster whose accumulated mask covers both bits of a pair
/// is rejected.
#[derive(Debug, Clone, Default)]
struct Constraints {
    specials: Vec<NodeId>,
    forbidden: Vec<u8>,
}

impl Constraints {
    fn build(grid: &Grid, separate: &[(NodeId, NodeId)]) -> Result<Self, PartitionError> {
        let mut specials: Vec<NodeId> = Vec::new();
        let mut forbidden = Vec::new();
        for &(a, b) in separate {
            for id in [a, b] {
                if grid.node(id).is_none() {
                    return Err(PartitionError::UnknownNode(id));
                }
            }
            if a == b {
                return Err(PartitionError::Unsatisfiable(a, b));
            }
            let mut bit = |id: NodeId| -> usize {
                match specials.iter().position(|&s| s == id) {
                    Some(i) => i,
                    None => {
                        specials.push(id);
                        specials.len() - 1
                    }
                }
            };
            let (ba, bb) = (bit(a), bit(b));
            assert!(
                specials.len() <= 8,
                "at most 8 distinct constrained nodes supported"
            );
            forbidden.push((1 << ba) | (1 << bb));
        }
        Ok(Self {
            specials,
            forbidden,
        })
    }

    fn node_mask(&self, id: NodeId) -> u8 {
        self.specials
            .iter()
            .enumerate()
            .filter(|&(_, &s)| s == id)
            .fold(0, |m, (i, _)| m | (1 << i))
    }

    fn allowed(&self, mask: u8) -> bool {
        self.forbidden.iter().all(|&f| mask & f != f)
    }

    /// Size of the mask dimension in DP tables: 1 when unconstrained.
    fn mask_count(&self) -> usize {
        1 << self.specials.len()
    }

    /// Largest set of mutually separated nodes: every subset whose members
    /// are pairwise forbidden needs that many distinct clusters. Exact over
    /// the at-most-8 constrained nodes.
    fn max_mutually_separate(&self) -> usize {
        let n = self.specials.len();
        let mut best = 0;
        for set in 0u16..(1 << n) {
            let mask = set as u8;
            let pairwise = (0..n).all(|i| {
                (0..n).all(|j| {
                    i >= j
                        || mask & (1 << i) == 0
                        || mask & (1 << j) == 0
                        || self.forbidden.contains(&((1 << i) | (1 << j)))
                })
            });
            if pairwise {
                best = best.max(mask.count_ones() as usize);
            }
        }
        best
    }
}

/// Recursively split `members` into `k` clusters, returned sorted by their
/// smallest node id. `path` distinguishes recursion positions so each
/// carving has its own deterministic RNG stream. Returns `None` only when
/// separation constraints cannot be met.
fn split(
    grid: &Grid,
    members: Vec<NodeId>,
    k: usize,
    seed: u64,
    path: u64,
    constraints: &Constraints,
) -> Option<Vec<Vec<NodeId>>> {
    debug_assert!(k >= 1 && k <= members.len());
    if constraints.max_mutually_separate() > k {
        return None;
    }
    let mut clusters = if k == 1 {
        let mask = members
            .iter()
            .fold(0u8, |m, &id| m | constraints.node_mask(id));
        if !constraints.allowed(mask) {
            return None;
        }
        vec![members]
    } else if k == members.len() {
        members.into_iter().map(|id| vec![id]).collect()
    } else if k.is_multiple_of(2) {
        // nested route: halve every cluster of the k/2 partition, making
        // finer partitions refine coarser ones. Kept unless it costs real
        // balance against carving the k clusters directly. A base with more
        // constrained nodes than clusters has no packing slack on a tree,
        // so go straight to the direct carve instead of grinding there.
        let coarse = if constraints.specials.len() <= k / 2 {
            split(grid, members.clone(), k / 2, seed, path, constraints)
        } else {
            None
        };
        let nested: Option<Vec<Vec<NodeId>>> = coarse.and_then(|coarse| {
            if coarse.iter().any(|piece| piece.len() < 2) {
                return None;
            }
            let mut out = Vec::with_capacity(k);
            for (i, piece) in coarse.into_iter().enumerate() {
                if piece.len() == 2 {
                    out.push(vec![piece[0]]);
                    out.push(vec![piece[1]]);
                } else {
                    out.extend(carve(
                        grid,
                        piece,
                        2,
                        seed,
                        child_path(path, i),
                        constraints,
                        None,
                    )?);
                }
            }
            Some(out)
        });
        match nested {
            Some(nested) if spread(&nested) <= 2 => nested,
            nested => {
                // the direct carve only matters if it can strictly beat the
                // nested spread, so its window search is capped there
                let cap = nested.as_ref().map(|c| spread(c).saturating_sub(1));
                let direct = carve(grid, members, k, seed, path ^ 0x00d1_0ec7, constraints, cap);
                match (nested, direct) {
                    (Some(nested), Some(direct)) if spread(&nested) <= spread(&direct) => nested,
                    (_, Some(direct)) => direct,
                    (Some(nested), None) => nested,
                    (None, None) => return None,
                }
            }
        }
    } else {
        carve(grid, members, k, seed, path, constraints, None)?
    };
    clusters.sort_by_key(|c| c[0]);
    Some(clusters)
}

fn child_path(path: u64, i: usize) -> u64 {
    path.wrapping_mul(0x1f12_3bb5).wrapping_add(i as u64 + 1)
}

fn spread(clusters: &[Vec<NodeId>]) -> usize {
    let max = clusters.iter().map(Vec::len).max().unwrap_or(0);
    let min = clusters.iter().map(Vec::len).min().unwrap_or(0);
    max - min
}

/// Spanning trees tried per carving. Different trees expose different cut
/// structures, so a size window infeasible on one tree is often exact on
/// another.
const TREE_ATTEMPTS: u64 = 24;

/// Carve a connected node set into `k` connected clusters whose sizes stay
/// inside the tightest window around `n/k` that any of the candidate
/// spanning trees admits. `width_cap` bounds the window widths worth
/// trying; `None` as a result means no capped window worked (or, without a
/// cap, that the separation constraints are unsatisfiable).
fn carve(
    grid: &Grid,
    members: Vec<NodeId>,
    k: usize,
    seed: u64,
    path: u64,
    constraints: &Constraints,
    width_cap: Option<usize>,
) -> Option<Vec<Vec<NodeId>>> {
    let n = members.len();
    debug_assert!(k >= 2 && k < n);
    let trees: Vec<SpanningTree> = (0..TREE_ATTEMPTS)
        .map(|attempt| {
            SpanningTree::build(
                grid,
                &members,
                mix(seed, path).wrapping_add(attempt),
                constraints,
            )
        })
        .collect();
    let lo0 = n / k;
    let hi0 = n.div_ceil(k);
    // exhaustive widening near the balanced window, then exponential steps:
    // heavily constrained instances would otherwise grind through thousands
    // of infeasible window programs
    let mut totals: Vec<usize> = (0..=8.min(n.saturating_sub(1))).collect();
    let mut t = 12;
    while t < n {
        totals.push(t);
        t = t * 3 / 2;
    }
    for total in totals {
        if let Some(cap) = width_cap {
            if hi0 - lo0 + total > cap {
                break;
            }
        }
        let gives: Vec<usize> = if total <= 8 {
            (0..=total).collect()
        } else {
            (0..=4).map(|i| total * i / 4).collect()
        };
        for give in gives {
            let shrink = total - give;
            if shrink >= lo0 || hi0 + give > n {
                continue;
            }
            let (lo, hi) = (lo0 - shrink, hi0 + give);
            for tree in &trees {
                if let Some(clusters) = tree.carve_window(k, lo, hi, constraints) {
                    return Some(clusters);
                }
            }
        }
    }
    if width_cap.is_none() {
        // fully relaxed window: always feasible without constraints, the
        // definitive satisfiability answer with them
        for tree in &trees {
            if let Some(clusters) = tree.carve_window(k, 1, n, constraints) {
                return Some(clusters);
            }
        }
    }
    None
}

/// Spanning tree of a connected member set: seeded root, seeded exploration
/// order.
struct SpanningTree {
    /// Member node ids indexed by tree vertex.
    ids: Vec<NodeId>,
    children: Vec<Vec<usize>>,
    /// Vertices in BFS order (parents before children).
    order: Vec<usize>,
    root: usize,
}

impl SpanningTree {
    fn build(grid: &Grid, members: &[NodeId], rng_seed: u64, constraints: &Constraints) -> Self {
        // An edge joining a must-separate pair can never sit inside a
        // cluster, so route the tree around it whenever the set stays
        // connected without it; separation then falls out of ordinary cuts
        // instead of being forced onto that one edge.
        Self::build_inner(grid, members, rng_seed, constraints, true)
            .or_else(|| Self::build_inner(grid, members, rng_seed, constraints, false))
            .expect("member set must be connected")
    }

    fn build_inner(
        grid: &Grid,
        members: &[NodeId],
        rng_seed: u64,
        constraints: &Constraints,
        avoid_separated_edges: bool,
    ) -> Option<Self> {
        let index: BTreeMap<NodeId, usize> =
            members.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let root = rng.gen_range(0..members.len());
        let mut children = vec![Vec::new(); members.len()];
        let mut seen = vec![false; members.len()];
        seen[root] = true;
        let mut order = vec![root];
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            let neighbors = grid
                .neighbors(members[v])
                .expect("member node exists in grid");
            let mut frontier: Vec<usize> = neighbors
                .iter()
                .filter(|&&m| {
                    !avoid_separated_edges || {
                        let union = constraints.node_mask(members[v]) | constraints.node_mask(m);
                        constraints.allowed(union)
                    }
                })
                .filter_map(|m| index.get(m).copied())
                .filter(|&w| !seen[w])
                .collect();
            // shuffled exploration varies where cycles break, giving each
            // attempt a genuinely different tree
            for i in (1..frontier.len()).rev() {
                frontier.swap(i, rng.gen_range(0..=i));
            }
            for w in frontier {
                if !seen[w] {
                    seen[w] = true;
                    children[v].push(w);
                    order.push(w);
                    queue.push_back(w);
                }
            }
        }
        (order.len() == members.len()).then_some(Self {
            ids: members.to_vec(),
            children,
            order,
            root,
        })
    }

    /// Try to carve exactly `k` clusters with every size in `[lo, hi]` and
    /// no cluster covering a forbidden node-pair mask.
    ///
    /// Subtree state: `(carved, open, mask)` is reachable when the subtree
    /// can finish `carved` complete clusters plus one open cluster of `open`
    /// nodes whose constrained-node set is `mask`. A child is either closed
    /// (its open cluster completes, size checked against the window) or
    /// merged into the parent's open cluster (masks union, forbidden unions
    /// pruned).
    fn carve_window(
        &self,
        k: usize,
        lo: usize,
        hi: usize,
        constraints: &Constraints,
    ) -> Option<Vec<Vec<NodeId>>> {
        let n = self.ids.len();
        let masks = constraints.mask_count();
        let mut feasible: Vec<Table> = (0..n).map(|_| Table::new(0, 0, 1)).collect();
        for &v in self.order.iter().rev() {
            let mut state = Table::new(k, hi, masks);
            state.set(0, 1, constraints.node_mask(self.ids[v]));
            for &c in &self.children[v] {
                state = combine(&state, &feasible[c], k, lo, hi, constraints);
            }
            feasible[v] = state;
        }
        let (open_root, mask_root) = feasible[self.root]
            .states()
            .into_iter()
            .find(|&(carved, open, _)| carved == k - 1 && open >= lo && open <= hi)
            .map(|(_, open, mask)| (open, mask))?;

        let mut clusters = Vec::with_capacity(k);
        let own = self.backtrack(
            &feasible,
            self.root,
            (k - 1, open_root, mask_root),
            (k, lo, hi),
            constraints,
            &mut clusters,
        );
        clusters.push(own);
        debug_assert_eq!(clusters.len(), k);
        let mut out: Vec<Vec<NodeId>> = clusters
            .into_iter()
            .map(|c| {
                let mut ids: Vec<NodeId> = c.into_iter().map(|v| self.ids[v]).collect();
                ids.sort_unstable();
                ids
            })
            .collect();
        out.sort_by_key(|c| c[0]);
        Some(out)
    }

    /// Reconstruct the carving for node `v` at a given state: returns the
    /// open cluster containing `v`, pushing completed clusters into
    /// `clusters`. Re-derives the left-to-right child combination by
    /// replaying the prefix tables.
    fn backtrack(
        &self,
        feasible: &[Table],
        v: usize,
        state: (usize, usize, u8),
        window: (usize, usize, usize),
        constraints: &Constraints,
        clusters: &mut Vec<Vec<usize>>,
    ) -> Vec<usize> {
        let (k, lo, hi) = window;
        let masks = constraints.mask_count();
        let kids = &self.children[v];
        let mut prefixes = Vec::with_capacity(kids.len() + 1);
        let mut acc = Table::new(k, hi, masks);
        acc.set(0, 1, constraints.node_mask(self.ids[v]));
        prefixes.push(acc.clone());
        for &c in kids {
            acc = combine(&acc, &feasible[c], k, lo, hi, constraints);
            prefixes.push(acc.clone());
        }

        let mut own = vec![v];
        let (mut carved, mut open, mut mask) = state;
        for (j, &c) in kids.iter().enumerate().rev() {
            let prefix = &prefixes[j];
            let mut found = None;
            'scan: for (cc, oc, cm) in feasible[c].states() {
                if cc > carved {
                    continue;
                }
                // child closed: its open cluster completes
                if oc >= lo && carved > cc && prefix.get(carved - cc - 1, open, mask) {
                    found = Some((carved - cc - 1, open, mask, cc, oc, cm, true));
                    break 'scan;
                }
                // child merged into v's open cluster: masks must union to
                // the target
                if open > oc && cm & mask == cm {
                    for (pc, po, pm) in prefix.states() {
                        if pc + cc == carved && po + oc == open && pm | cm == mask {
                            found = Some((pc, po, pm, cc, oc, cm, false));
                            break 'scan;
                        }
                    }
                }
            }
            let (pc, po, pm, cc, oc, cm, closed) =
                found.expect("feasible state must have a consistent derivation");
            let child_own = self.backtrack(
                feasible,
                c,
                (cc, oc, cm),
                window,
                constraints,
                clusters,
            );
            if closed {
                clusters.push(child_own);
            } else {
                own.extend(child_own);
            }
            carved = pc;
            open = po;
            mask = pm;
        }
        debug_assert_eq!((carved, open), (0, 1));
        own
    }
}

/// Sparse table over `(carved, open)` cells, each holding the reachable
/// constraint masks. A mask is only stored if no stored subset dominates it
/// (a smaller special-node set can mimic every continuation of a larger
/// one), which keeps cells tiny. Stored states are never removed, so every
/// stored state keeps its stored derivation for backtracking.
#[derive(Clone)]
struct Table {
    hi: usize,
    cells: Vec<Vec<u8>>,
}

impl Table {
    fn new(k: usize, hi: usize, _masks: usize) -> Self {
        Self {
            hi,
            cells: vec![Vec::new(); k * (hi + 1)],
        }
    }

    fn idx(&self, carved: usize, open: usize) -> usize {
        carved * (self.hi + 1) + open
    }

    fn get(&self, carved: usize, open: usize, mask: u8) -> bool {
        open <= self.hi && self.cells[self.idx(carved, open)].contains(&mask)
    }

    fn set(&mut self, carved: usize, open: usize, mask: u8) {
        let i = self.idx(carved, open);
        let cell = &mut self.cells[i];
        // dominance check is subset containment, not equality
        if cell.iter().all(|&m| m & mask != m) {
            cell.push(mask);
        }
    }

    /// Stored states in deterministic (carved, open, insertion) order.
    fn states(&self) -> Vec<(usize, usize, u8)> {
        let mut out = Vec::new();
        for (i, cell) in self.cells.iter().enumerate() {
            for &mask in cell {
                out.push((i / (self.hi + 1), i % (self.hi + 1), mask));
            }
        }
        out
    }
}

fn combine(
    state: &Table,
    child: &Table,
    k: usize,
    lo: usize,
    hi: usize,
    constraints: &Constraints,
) -> Table {
    let mut next = Table::new(k, hi, 0);
    let parents = state.states();
    let kids = child.states();
    for &(carved, open, mask) in &parents {
        for &(child_carved, child_open, child_mask) in &kids {
            if carved + child_carved >= k {
                continue;
            }
            if child_open >= lo && carved + child_carved + 1 < k {
                next.set(carved + child_carved + 1, open, mask);
            }
            if open + child_open <= hi {
                let union = mask | child_mask;
                if constraints.allowed(union) {
                    next.set(carved + child_carved, open + child_open, union);
                }
            }
        }
    }
    next
}

fn mix(seed: u64, path: u64) -> u64 {
    // splitmix64 over the (seed, path) pair
    let mut z = seed ^ path.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
