//! Combinatorial machinery: the pairwise-intersecting set family behind the
//! lower-bound adversary, the two greedy coloring procedures, and the two
//! conflict-graph constructions used by the scheduler analyses.

use std::collections::BTreeSet;

use crate::model::{ProcessorId, Transaction, TxId, TxType};
use crate::{Error, Result};

/// A family of `n + 1` sets over the integers `[1, n(n+1)/2]` in which every
/// set has `n` elements, any two distinct sets share exactly one element, and
/// every element lies in exactly two sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SetFamily {
    pub n: u32,
    pub sets: Vec<BTreeSet<u32>>,
}

impl SetFamily {
    /// Total ground-set size `n(n+1)/2`.
    pub fn ground_size(&self) -> u32 {
        self.n * (self.n + 1) / 2
    }
}

/// Builds the family recursively: the first set is `[1, n]`, and each next
/// set takes, from each earlier set, the smallest element still private to
/// it, then pads with the smallest integers not used anywhere yet.
pub fn build_set_family(n: u32) -> SetFamily {
    assert!(n >= 1, "family order must be positive");
    let ground = (n * (n + 1) / 2) as usize;
    // membership[e] = how many sets contain element e (1-based).
    let mut membership = vec![0u8; ground + 1];
    let mut sets: Vec<BTreeSet<u32>> = Vec::with_capacity(n as usize + 1);

    let first: BTreeSet<u32> = (1..=n).collect();
    for &e in &first {
        membership[e as usize] = 1;
    }
    sets.push(first);

    let mut next_fresh: u32 = n + 1;
    for built in 1..=n as usize {
        let mut set = BTreeSet::new();
        // One element from each earlier set: its smallest still-private one.
        for earlier in sets.iter().take(built) {
            let e = *earlier
                .iter()
                .find(|&&e| membership[e as usize] == 1)
                .expect("every earlier set keeps a private element");
            set.insert(e);
            membership[e as usize] = 2;
        }
        // Pad with the smallest integers not in any set yet.
        while set.len() < n as usize {
            set.insert(next_fresh);
            membership[next_fresh as usize] = 1;
            next_fresh += 1;
        }
        sets.push(set);
    }
    SetFamily { n, sets }
}

/// First property a [`SetFamily`] may violate, in the order they are checked.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SetFamilyViolation {
    SetCount {
        expected: usize,
        actual: usize,
    },
    SetSize {
        set: usize,
        expected: u32,
        actual: usize,
    },
    OutOfRange {
        set: usize,
        element: u32,
    },
    PairOverlap {
        first: usize,
        second: usize,
        shared: usize,
    },
    ElementMultiplicity {
        element: u32,
        sets: usize,
    },
    UnionGap {
        element: u32,
    },
}

/// Exhaustive verification report; violations are reported, never raised.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SetFamilyReport {
    pub pass: bool,
    pub first_violation: Option<SetFamilyViolation>,
}

/// Checks all defining properties of the family by enumeration: set count
/// and sizes, pairwise intersections of exactly one element, every ground
/// element in exactly two sets, and the union covering the whole ground set.
pub fn verify_set_family(family: &SetFamily) -> SetFamilyReport {
    let fail = |v| SetFamilyReport {
        pass: false,
        first_violation: Some(v),
    };
    let n = family.n;
    let ground = family.ground_size();

    let expected_sets = n as usize + 1;
    if family.sets.len() != expected_sets {
        return fail(SetFamilyViolation::SetCount {
            expected: expected_sets,
            actual: family.sets.len(),
        });
    }
    for (i, set) in family.sets.iter().enumerate() {
        if set.len() != n as usize {
            return fail(SetFamilyViolation::SetSize {
                set: i,
                expected: n,
                actual: set.len(),
            });
        }
        if let Some(&e) = set.iter().find(|&&e| e < 1 || e > ground) {
            return fail(SetFamilyViolation::OutOfRange { set: i, element: e });
        }
    }
    for i in 0..family.sets.len() {
        for j in i + 1..family.sets.len() {
            let shared = family.sets[i].intersection(&family.sets[j]).count();
            if shared != 1 {
                return fail(SetFamilyViolation::PairOverlap {
                    first: i,
                    second: j,
                    shared,
                });
            }
        }
    }
    let mut multiplicity = vec![0usize; ground as usize + 1];
    for set in &family.sets {
        for &e in set {
            multiplicity[e as usize] += 1;
        }
    }
    for e in 1..=ground {
        match multiplicity[e as usize] {
            2 => {}
            0 => return fail(SetFamilyViolation::UnionGap { element: e }),
            sets => return fail(SetFamilyViolation::ElementMultiplicity { element: e, sets }),
        }
    }
    SetFamilyReport {
        pass: true,
        first_violation: None,
    }
}

/// A simple undirected graph over labeled vertices. Adjacency is kept both
/// as an edge set and as per-vertex neighbor lists to serve coloring scans.
#[derive(Clone, Debug)]
pub struct ConflictGraph<V> {
    labels: Vec<V>,
    neighbors: Vec<Vec<usize>>,
    edges: BTreeSet<(usize, usize)>,
}

impl<V> ConflictGraph<V> {
    pub fn new(labels: Vec<V>) -> Self {
        let n = labels.len();
        ConflictGraph {
            labels,
            neighbors: vec![Vec::new(); n],
            edges: BTreeSet::new(),
        }
    }

    /// Builds a graph whose edges are exactly the label pairs satisfying
    /// `related`.
    pub fn from_pairwise<F>(labels: Vec<V>, related: F) -> Self
    where
        F: Fn(&V, &V) -> bool,
    {
        let mut g = ConflictGraph::new(labels);
        for i in 0..g.labels.len() {
            for j in i + 1..g.labels.len() {
                if related(&g.labels[i], &g.labels[j]) {
                    g.add_edge(i, j);
                }
            }
        }
        g
    }

    /// Inserts an edge; self-loops are rejected and duplicates ignored, so
    /// the graph stays simple.
    pub fn add_edge(&mut self, a: usize, b: usize) {
        assert!(a != b, "self-loops are not allowed");
        assert!(a < self.labels.len() && b < self.labels.len());
        let key = (a.min(b), a.max(b));
        if self.edges.insert(key) {
            self.neighbors[a].push(b);
            self.neighbors[b].push(a);
            self.neighbors[a].sort_unstable();
            self.neighbors[b].sort_unstable();
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn labels(&self) -> &[V] {
        &self.labels
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Connected components, each a sorted list of vertex indices, ordered
    /// by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.labels.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            let mut comp = Vec::new();
            seen[start] = true;
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &u in &self.neighbors[v] {
                    if !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// A proper vertex coloring; colors are positive integers indexed by vertex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coloring {
    colors: Vec<u32>,
}

impl Coloring {
    pub fn color(&self, v: usize) -> u32 {
        self.colors[v]
    }

    pub fn colors(&self) -> &[u32] {
        &self.colors
    }

    pub fn max_color(&self) -> u32 {
        self.colors.iter().copied().max().unwrap_or(0)
    }

    /// The vertices assigned color `c`.
    pub fn class(&self, c: u32) -> Vec<usize> {
        (0..self.colors.len())
            .filter(|&v| self.colors[v] == c)
            .collect()
    }

    pub fn is_proper<V>(&self, graph: &ConflictGraph<V>) -> bool {
        graph
            .edges
            .iter()
            .all(|&(a, b)| self.colors[a] != self.colors[b])
    }
}

fn check_permutation<V>(graph: &ConflictGraph<V>, order: &[usize]) -> Result<()> {
    let n = graph.vertex_count();
    if order.len() != n {
        return Err(Error::InvalidInput(format!(
            "order has {} entries for a graph on {} vertices",
            order.len(),
            n
        )));
    }
    let mut seen = vec![false; n];
    for &v in order {
        if v >= n || seen[v] {
            return Err(Error::InvalidInput(
                "order is not a permutation of the vertices".into(),
            ));
        }
        seen[v] = true;
    }
    Ok(())
}

/// Sequential greedy coloring: each vertex, taken in `order`, receives the
/// least positive color absent among its already-colored neighbors.
pub fn primary_greedy_coloring<V>(graph: &ConflictGraph<V>, order: &[usize]) -> Result<Coloring> {
    check_permutation(graph, order)?;
    let n = graph.vertex_count();
    let mut colors = vec![0u32; n];
    for &v in order {
        let mut used: Vec<u32> = graph
            .neighbors(v)
            .iter()
            .map(|&u| colors[u])
            .filter(|&c| c != 0)
            .collect();
        used.sort_unstable();
        used.dedup();
        let mut candidate = 1u32;
        for c in used {
            if c == candidate {
                candidate += 1;
            } else if c > candidate {
                break;
            }
        }
        colors[v] = candidate;
    }
    Ok(Coloring { colors })
}

/// Independent-set greedy coloring: repeatedly extract a maximal independent
/// set (scanning surviving vertices in `order`), give it the next color, and
/// remove it. Produces the identical assignment to the sequential variant.
pub fn alternative_greedy_coloring<V>(
    graph: &ConflictGraph<V>,
    order: &[usize],
) -> Result<Coloring> {
    check_permutation(graph, order)?;
    let n = graph.vertex_count();
    let mut colors = vec![0u32; n];
    let mut remaining = n;
    let mut color = 0u32;
    while remaining > 0 {
        color += 1;
        let mut in_class = vec![false; n];
        for &v in order.iter() {
            if colors[v] != 0 {
                continue;
            }
            if graph.neighbors(v).iter().all(|&u| !in_class[u]) {
                in_class[v] = true;
            }
        }
        for v in 0..n {
            if in_class[v] {
                colors[v] = color;
                remaining -= 1;
            }
        }
    }
    Ok(Coloring { colors })
}

/// Graph over transactions: one vertex per transaction, ordered by
/// (generation round, id); an edge wherever the types collide.
pub fn build_transaction_conflict_graph(txs: &[Transaction]) -> ConflictGraph<TxId> {
    let mut ordered: Vec<&Transaction> = txs.iter().collect();
    ordered.sort_by_key(|t| (t.gen_round, t.id));
    let types: Vec<TxType> = ordered.iter().map(|t| t.ttype.clone()).collect();
    let labels: Vec<TxId> = ordered.iter().map(|t| t.id).collect();
    let mut g = ConflictGraph::new(labels);
    for i in 0..types.len() {
        for j in i + 1..types.len() {
            if types[i].collides(&types[j]) {
                g.add_edge(i, j);
            }
        }
    }
    g
}

/// Graph over (processor, block type) pairs, ordered by processor then type
/// bitstring; an edge wherever two pairs share the processor or the types
/// share an object. Vertices of one processor therefore form a clique.
pub fn build_block_conflict_graph(
    blocks: &[(ProcessorId, TxType)],
) -> ConflictGraph<(ProcessorId, TxType)> {
    let mut labels: Vec<(ProcessorId, TxType)> = blocks.to_vec();
    labels.sort();
    ConflictGraph::from_pairwise(labels, |(pa, ta), (pb, tb)| pa == pb || ta.collides(tb))
}
