//! Polymers, clusters and the convergence bounds of both cluster expansions.
//!
//! A polymer is a Z_2 form whose positive support is connected in the relevant adjacency
//! graph: `G_1` on positive edges (Higgs phase) or `G_2` on positive plaquettes
//! (confinement phase). Over Z_2 a polymer is determined by its support, so polymers are
//! stored as sorted lists of cell indices.
//!
//! Two polymers are compatible (`η ∼ η′`) when the union of their supports is connected,
//! i.e. they overlap or touch. A cluster is a multiset of polymers whose compatibility
//! graph is connected, which is the same as asking that the union of all supports be
//! connected. Clusters are therefore enumerated by their union support `U`: every
//! connected `U` touching the anchors is generated once, and then every multiset of
//! connected subsets of `U` that covers `U` within the size budget.

use std::cell::RefCell;
use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dec::BoxGeometry;
use crate::error::{Error, Result};
use crate::oracle::Compensated;

/// Largest number of polymers for which Ursell functions are evaluated.
pub const KMAX_LIMIT: usize = 6;
/// Largest union support handled by the cover enumeration.
pub const SIZE_LIMIT: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "higgs")]
    Higgs,
    #[serde(rename = "conf", alias = "confinement")]
    Confinement,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Higgs => "higgs",
            Phase::Confinement => "conf",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Phase> {
        match s {
            "higgs" => Ok(Phase::Higgs),
            "conf" | "confinement" => Ok(Phase::Confinement),
            other => Err(Error::Invalid(format!("unknown phase {other:?}"))),
        }
    }
}

/// `M_1 = 6(d−1)`: bound on the degree of `G_1`.
pub fn m1(d: usize) -> usize {
    6 * (d - 1)
}

/// `M_2 = 8d − 12`: bound on the degree of `G_2`.
pub fn m2(d: usize) -> usize {
    8 * d - 12
}

#[derive(Clone, Debug)]
pub struct AdjacencyGraph {
    phase: Phase,
    dim: usize,
    adj: Vec<Vec<u32>>,
}

/// `G_1`: edges sharing a plaquette. `G_2`: plaquettes sharing an edge.
pub fn build_graph(phase: Phase, geom: &BoxGeometry) -> AdjacencyGraph {
    let adj = match phase {
        Phase::Higgs => (0..geom.num_cells(1))
            .map(|e| {
                let mut nb: Vec<u32> = geom
                    .cofaces(1, e)
                    .iter()
                    .flat_map(|&(p, _)| geom.faces(2, p as usize).iter().map(|&(f, _)| f))
                    .filter(|&f| f as usize != e)
                    .collect();
                nb.sort_unstable();
                nb.dedup();
                nb
            })
            .collect(),
        Phase::Confinement => (0..geom.num_cells(2))
            .map(|p| {
                let mut nb: Vec<u32> = geom
                    .faces(2, p)
                    .iter()
                    .flat_map(|&(e, _)| geom.cofaces(1, e as usize).iter().map(|&(q, _)| q))
                    .filter(|&q| q as usize != p)
                    .collect();
                nb.sort_unstable();
                nb.dedup();
                nb
            })
            .collect(),
    };
    AdjacencyGraph { phase, dim: geom.dim(), adj }
}

impl AdjacencyGraph {
    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn num_vertices(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.adj[v as usize]
    }

    pub fn degree(&self, v: u32) -> usize {
        self.adj[v as usize].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `M_1` or `M_2` for this dimension.
    pub fn degree_bound(&self) -> usize {
        match self.phase {
            Phase::Higgs => m1(self.dim),
            Phase::Confinement => m2(self.dim),
        }
    }

    pub fn are_adjacent(&self, a: u32, b: u32) -> bool {
        self.adj[a as usize].binary_search(&b).is_ok()
    }

    /// Graph distance from `sources` to every vertex, `u32::MAX` if unreachable within `radius`.
    pub fn distances(&self, sources: &[u32], radius: usize) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.adj.len()];
        let mut frontier: Vec<u32> = sources.to_vec();
        for &s in sources {
            dist[s as usize] = 0;
        }
        for r in 1..=radius as u32 {
            let mut next = Vec::new();
            for &v in &frontier {
                for &w in &self.adj[v as usize] {
                    if dist[w as usize] == u32::MAX {
                        dist[w as usize] = r;
                        next.push(w);
                    }
                }
            }
            frontier = next;
        }
        dist
    }
}

/// A Z_2 polymer, stored as its sorted positive support.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Polymer {
    pub cells: Vec<u32>,
}

impl Polymer {
    pub fn new(mut cells: Vec<u32>) -> Polymer {
        cells.sort_unstable();
        cells.dedup();
        Polymer { cells }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, c: u32) -> bool {
        self.cells.binary_search(&c).is_ok()
    }

    pub fn is_connected(&self, graph: &AdjacencyGraph) -> bool {
        if self.cells.is_empty() {
            return false;
        }
        let mut seen = vec![false; self.cells.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &w in graph.neighbors(self.cells[i]) {
                if let Ok(j) = self.cells.binary_search(&w) {
                    if !seen[j] {
                        seen[j] = true;
                        count += 1;
                        stack.push(j);
                    }
                }
            }
        }
        count == self.cells.len()
    }
}

/// `η ∼ η′`: the union of the supports is connected (they share or touch a cell).
pub fn compatible(graph: &AdjacencyGraph, a: &Polymer, b: &Polymer) -> bool {
    a.cells
        .iter()
        .any(|&v| b.contains(v) || graph.neighbors(v).iter().any(|&w| b.contains(w)))
}

struct Grower<'a, F: FnMut(&[u32])> {
    graph: &'a AdjacencyGraph,
    max: usize,
    // 0 free, 1 chosen, 2 candidate, 3 blocked
    state: Vec<u8>,
    set: Vec<u32>,
    emit: F,
}

impl<F: FnMut(&[u32])> Grower<'_, F> {
    fn grow(&mut self, cand: &[u32]) {
        (self.emit)(&self.set);
        if self.set.len() == self.max {
            return;
        }
        for (i, &v) in cand.iter().enumerate() {
            self.state[v as usize] = 1;
            self.set.push(v);
            let mut next: Vec<u32> = cand[i + 1..].to_vec();
            let start = next.len();
            for &w in self.graph.neighbors(v) {
                if self.state[w as usize] == 0 {
                    self.state[w as usize] = 2;
                    next.push(w);
                }
            }
            self.grow(&next);
            for &w in &next[start..] {
                self.state[w as usize] = 0;
            }
            self.set.pop();
            self.state[v as usize] = 3;
        }
        for &v in cand {
            self.state[v as usize] = 2;
        }
    }
}

/// Calls `emit` once for every connected vertex set of size at most `max` that contains
/// `root` and avoids every vertex marked in `forbidden`. The slice passed to `emit` lists
/// the vertices in insertion order.
pub fn for_each_connected_set<F: FnMut(&[u32])>(
    graph: &AdjacencyGraph,
    root: u32,
    max: usize,
    forbidden: &[bool],
    emit: F,
) {
    if max == 0 || forbidden.get(root as usize).copied().unwrap_or(false) {
        return;
    }
    let mut state = vec![0u8; graph.num_vertices()];
    for (s, &f) in state.iter_mut().zip(forbidden) {
        if f {
            *s = 3;
        }
    }
    state[root as usize] = 1;
    let mut cand = Vec::new();
    for &w in graph.neighbors(root) {
        if state[w as usize] == 0 {
            state[w as usize] = 2;
            cand.push(w);
        }
    }
    let mut g = Grower { graph, max, state, set: vec![root], emit };
    g.grow(&cand);
}

/// All polymers with at most `max_size` cells whose support contains `anchor`.
pub fn enumerate_polymers(graph: &AdjacencyGraph, anchor: u32, max_size: usize) -> Result<Vec<Polymer>> {
    if anchor as usize >= graph.num_vertices() {
        return Err(Error::Invalid(format!("anchor {anchor} is not a vertex of the graph")));
    }
    check_size(max_size)?;
    let mut out = Vec::new();
    let forbidden = vec![false; graph.num_vertices()];
    for_each_connected_set(graph, anchor, max_size, &forbidden, |s| out.push(Polymer::new(s.to_vec())));
    out.sort();
    Ok(out)
}

fn check_size(max_size: usize) -> Result<()> {
    if max_size > SIZE_LIMIT {
        return Err(Error::Invalid(format!("size cutoff {max_size} exceeds the limit {SIZE_LIMIT}")));
    }
    Ok(())
}

/// Connected unions touching `anchors`, each exactly once (it is attributed to the first
/// anchor it contains).
pub fn connected_supports(graph: &AdjacencyGraph, anchors: &[u32], max_size: usize) -> Result<Vec<Vec<u32>>> {
    check_size(max_size)?;
    let mut forbidden = vec![false; graph.num_vertices()];
    let mut out = Vec::new();
    for &a in anchors {
        if a as usize >= graph.num_vertices() {
            return Err(Error::Invalid(format!("anchor {a} is not a vertex of the graph")));
        }
        if forbidden[a as usize] {
            continue;
        }
        for_each_connected_set(graph, a, max_size, &forbidden, |s| {
            let mut u = s.to_vec();
            u.sort_unstable();
            out.push(u);
        });
        forbidden[a as usize] = true;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------------------
// Ursell functions

/// Bit index of the unordered pair `{i, j}` in a compatibility mask.
pub fn pair_bit(i: usize, j: usize) -> u32 {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    (b * (b - 1) / 2 + a) as u32
}

fn spanning_connected(k: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut comps = k;
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            comps -= 1;
        }
    }
    comps == 1
}

thread_local! {
    static URSELL_CACHE: RefCell<HashMap<(usize, u32), i64>> = RefCell::new(HashMap::new());
}

/// `Σ_{G connected on {0..k−1}} (−1)^{|E(G)|} Π_{ij ∈ E(G)} 1(i ∼ j)` where `compat` has bit
/// `pair_bit(i, j)` set iff `i ∼ j`. Only subgraphs of the compatibility graph survive the
/// indicator product, so the sum runs over those, with connectivity by union-find.
pub fn connected_graph_sum(k: usize, compat: u32) -> Result<i64> {
    if k == 0 || k > KMAX_LIMIT {
        return Err(Error::Invalid(format!("Ursell functions need 1 <= k <= {KMAX_LIMIT}, got {k}")));
    }
    if k == 1 {
        return Ok(1);
    }
    let npairs = k * (k - 1) / 2;
    let compat = compat & ((1u32 << npairs) - 1);
    if let Some(v) = URSELL_CACHE.with(|c| c.borrow().get(&(k, compat)).copied()) {
        return Ok(v);
    }
    let mut pairs = Vec::new();
    for j in 1..k {
        for i in 0..j {
            if compat >> pair_bit(i, j) & 1 == 1 {
                pairs.push((i, j));
            }
        }
    }
    let mut total = 0i64;
    let mut edges = Vec::with_capacity(pairs.len());
    for sub in 0u32..(1u32 << pairs.len()) {
        if (sub.count_ones() as usize) < k - 1 {
            continue;
        }
        edges.clear();
        edges.extend((0..pairs.len()).filter(|&b| sub >> b & 1 == 1).map(|b| pairs[b]));
        if spanning_connected(k, &edges) {
            total += if edges.len() % 2 == 0 { 1 } else { -1 };
        }
    }
    URSELL_CACHE.with(|c| c.borrow_mut().insert((k, compat), total));
    Ok(total)
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// `U(S)` for a multiset given as distinct polymers with multiplicities. The connected-graph
/// sum over the `n(S)` instances is divided by `Π n_S(η)!`, which is the number of orderings
/// that name the same multiset.
pub fn ursell(graph: &AdjacencyGraph, polymers: &[Polymer], multiplicity: &[u32]) -> Result<f64> {
    if polymers.len() != multiplicity.len() {
        return Err(Error::Invalid("polymer and multiplicity lists differ in length".into()));
    }
    let instances: Vec<usize> = multiplicity
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| std::iter::repeat_n(i, n as usize))
        .collect();
    let k = instances.len();
    let mut compat = 0u32;
    for j in 1..k {
        for i in 0..j {
            if compatible(graph, &polymers[instances[i]], &polymers[instances[j]]) {
                compat |= 1 << pair_bit(i, j);
            }
        }
    }
    let sum = connected_graph_sum(k, compat)?;
    let denom: f64 = multiplicity.iter().map(|&n| factorial(n)).product();
    Ok(sum as f64 / denom)
}

// ---------------------------------------------------------------------------------------
// Clusters

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Distinct polymers, sorted.
    pub polymers: Vec<Polymer>,
    pub multiplicity: Vec<u32>,
    /// Union of the supports, sorted.
    pub support: Vec<u32>,
    /// `U(S)`, including the `1/Π n!` multiset factor.
    pub ursell: f64,
}

impl Cluster {
    /// `n(S)`.
    pub fn count(&self) -> u32 {
        self.multiplicity.iter().sum()
    }

    /// `Σ n_S(η) |supp η|`: `‖S‖_1` in the Higgs phase, `‖S‖` in the confinement phase.
    pub fn size(&self) -> usize {
        self.polymers.iter().zip(&self.multiplicity).map(|(p, &n)| n as usize * p.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Polymer, u32)> {
        self.polymers.iter().zip(self.multiplicity.iter().copied())
    }
}

/// Which clusters to visit.
#[derive(Clone, Debug)]
pub struct ClusterQuery<'a> {
    pub graph: &'a AdjacencyGraph,
    /// Clusters whose union support meets at least one of these cells.
    pub anchors: Vec<u32>,
    /// Cutoff `J` on `Σ n_S(η)|supp η|`.
    pub max_size: usize,
    /// Cutoff on `n(S)`.
    pub kmax: usize,
}

impl ClusterQuery<'_> {
    fn validate(&self) -> Result<()> {
        check_size(self.max_size)?;
        if self.kmax > KMAX_LIMIT {
            return Err(Error::Invalid(format!("kmax {} exceeds the limit {KMAX_LIMIT}", self.kmax)));
        }
        Ok(())
    }

    /// Smallest `‖S‖` among clusters the query leaves out.
    pub fn first_omitted_size(&self) -> usize {
        self.max_size.min(self.kmax) + 1
    }
}

/// Every cluster with union support exactly `support` that fits the cutoffs.
fn clusters_on_support<F: FnMut(Cluster)>(graph: &AdjacencyGraph, support: &[u32], max_size: usize, kmax: usize, mut f: F) {
    let u = support.len();
    let full: u32 = if u == 32 { u32::MAX } else { (1u32 << u) - 1 };
    let local_nb: Vec<u32> = support
        .iter()
        .map(|&v| {
            graph
                .neighbors(v)
                .iter()
                .filter_map(|w| support.binary_search(w).ok())
                .fold(0u32, |m, j| m | (1 << j))
        })
        .collect();
    let connected = |mask: u32| {
        let start = mask.trailing_zeros();
        let mut seen = 1u32 << start;
        let mut frontier = seen;
        while frontier != 0 {
            let mut next = 0u32;
            let mut f = frontier;
            while f != 0 {
                let i = f.trailing_zeros() as usize;
                f &= f - 1;
                next |= local_nb[i];
            }
            next &= mask & !seen;
            seen |= next;
            frontier = next;
        }
        seen == mask
    };
    // connected submasks, in increasing numeric order
    let masks: Vec<u32> = (1..=full).filter(|&m| (m as usize).count_ones() as usize <= max_size && connected(m)).collect();
    let mut suffix = vec![0u32; masks.len() + 1];
    for i in (0..masks.len()).rev() {
        suffix[i] = suffix[i + 1] | masks[i];
    }
    let closed: Vec<u32> = masks
        .iter()
        .map(|&m| {
            let mut c = m;
            let mut r = m;
            while r != 0 {
                let i = r.trailing_zeros() as usize;
                r &= r - 1;
                c |= local_nb[i];
            }
            c
        })
        .collect();

    struct Ctx<'b> {
        masks: &'b [u32],
        suffix: &'b [u32],
        closed: &'b [u32],
        full: u32,
        max_size: usize,
        kmax: usize,
    }
    fn rec(ctx: &Ctx, start: usize, covered: u32, used: usize, seq: &mut Vec<usize>, out: &mut dyn FnMut(&[usize])) {
        if covered == ctx.full {
            out(seq);
        }
        if seq.len() == ctx.kmax {
            return;
        }
        for i in start..ctx.masks.len() {
            let uncovered = ctx.full & !covered;
            if uncovered & !ctx.suffix[i] != 0 {
                return;
            }
            let sz = ctx.masks[i].count_ones() as usize;
            let new_cov = covered | ctx.masks[i];
            if used + sz + (ctx.full & !new_cov).count_ones() as usize > ctx.max_size {
                continue;
            }
            seq.push(i);
            rec(ctx, i, new_cov, used + sz, seq, out);
            seq.pop();
        }
    }
    let ctx = Ctx { masks: &masks, suffix: &suffix, closed: &closed, full, max_size, kmax };
    let mut seq = Vec::new();
    let mut emit = |seq: &[usize]| {
        let k = seq.len();
        let mut compat = 0u32;
        for j in 1..k {
            for i in 0..j {
                let (a, b) = (seq[i], seq[j]);
                if ctx.closed[a] & ctx.masks[b] != 0 {
                    compat |= 1 << pair_bit(i, j);
                }
            }
        }
        let sum = connected_graph_sum(k, compat).expect("k is bounded by kmax");
        let mut polymers = Vec::new();
        let mut multiplicity: Vec<u32> = Vec::new();
        let mut last = usize::MAX;
        for &i in seq {
            if i == last {
                *multiplicity.last_mut().unwrap() += 1;
            } else {
                let m = ctx.masks[i];
                polymers.push(Polymer::new((0..u).filter(|&b| m >> b & 1 == 1).map(|b| support[b]).collect()));
                multiplicity.push(1);
                last = i;
            }
        }
        let denom: f64 = multiplicity.iter().map(|&n| factorial(n)).product();
        let mut order: Vec<usize> = (0..polymers.len()).collect();
        order.sort_by(|&a, &b| polymers[a].cmp(&polymers[b]));
        let cluster = Cluster {
            polymers: order.iter().map(|&i| polymers[i].clone()).collect(),
            multiplicity: order.iter().map(|&i| multiplicity[i]).collect(),
            support: support.to_vec(),
            ursell: sum as f64 / denom,
        };
        f(cluster);
    };
    rec(&ctx, 0, 0, 0, &mut seq, &mut emit);
}

/// All clusters selected by the query, in a deterministic order.
pub fn enumerate_clusters(q: &ClusterQuery) -> Result<Vec<Cluster>> {
    q.validate()?;
    let supports = connected_supports(q.graph, &q.anchors, q.max_size)?;
    let parts: Vec<Vec<Cluster>> = supports
        .par_iter()
        .map(|u| {
            let mut v = Vec::new();
            clusters_on_support(q.graph, u, q.max_size, q.kmax, |c| v.push(c));
            v
        })
        .collect();
    Ok(parts.into_iter().flatten().collect())
}

/// Sums `f(S)` into `n_out` accumulators over every selected cluster. Supports are processed
/// in parallel and merged in a fixed order, so the result does not depend on thread count.
pub fn reduce_clusters<F>(q: &ClusterQuery, n_out: usize, f: F) -> Result<(Vec<f64>, u64)>
where
    F: Fn(&Cluster, &mut [f64]) + Sync,
{
    q.validate()?;
    let supports = connected_supports(q.graph, &q.anchors, q.max_size)?;
    let chunk = 64;
    let parts: Vec<(Vec<Compensated>, u64)> = supports
        .par_chunks(chunk)
        .map(|us| {
            let mut acc = vec![Compensated::default(); n_out];
            let mut buf = vec![0.0; n_out];
            let mut count = 0u64;
            for u in us {
                clusters_on_support(q.graph, u, q.max_size, q.kmax, |c| {
                    buf.iter_mut().for_each(|b| *b = 0.0);
                    f(&c, &mut buf);
                    for (a, &b) in acc.iter_mut().zip(&buf) {
                        a.add(b);
                    }
                    count += 1;
                });
            }
            (acc, count)
        })
        .collect();
    let mut acc = vec![Compensated::default(); n_out];
    let mut count = 0;
    for (p, c) in &parts {
        for (a, b) in acc.iter_mut().zip(p) {
            a.merge(b);
        }
        count += c;
    }
    Ok((acc.iter().map(Compensated::value).collect(), count))
}

// ---------------------------------------------------------------------------------------
// Activities

/// Positive cells with an odd number of polymer cells among their incident higher cells
/// (Higgs: plaquettes of `supp dη`) or lower faces (confinement: edges of `supp δη`).
pub fn polymer_boundary(geom: &BoxGeometry, phase: Phase, poly: &Polymer) -> Vec<u32> {
    let mut counts: HashMap<u32, u32> = HashMap::new();
    for &c in &poly.cells {
        let cells = match phase {
            Phase::Higgs => geom.cofaces(1, c as usize),
            Phase::Confinement => geom.faces(2, c as usize),
        };
        for &(x, _) in cells {
            *counts.entry(x).or_default() += 1;
        }
    }
    let mut out: Vec<u32> = counts.into_iter().filter(|&(_, n)| n % 2 == 1).map(|(x, _)| x).collect();
    out.sort_unstable();
    out
}

/// `‖S‖_2 = Σ n_S(η)|(supp dη)^+|` (Higgs phase).
pub fn higgs_norm2(geom: &BoxGeometry, s: &Cluster) -> usize {
    s.iter().map(|(p, n)| n as usize * polymer_boundary(geom, Phase::Higgs, p).len()).sum()
}

/// `Ψ(S) = U(S) e^{−4β‖S‖_2 − 4κ‖S‖_1}`.
pub fn psi_higgs(geom: &BoxGeometry, s: &Cluster, beta: f64, kappa: f64) -> f64 {
    let n1 = s.size() as f64;
    let n2 = higgs_norm2(geom, s) as f64;
    s.ursell * (-4.0 * beta * n2 - 4.0 * kappa * n1).exp()
}

/// `S(c) = Σ n_S(η) η(c)` for a Z_2 polymer `η` equal to 1 on its support.
pub fn cluster_on_chain(s: &Cluster, chain: &[i64]) -> i64 {
    s.iter().map(|(p, n)| n as i64 * p.cells.iter().map(|&e| chain[e as usize]).sum::<i64>()).sum()
}

/// `φ^γ(η) = tanh(2β)^{|η|} tanh(2κ)^{|supp δη ∖ γ| − |supp δη ∩ γ|}` with positive edges counted.
pub fn phi_gamma(geom: &BoxGeometry, poly: &Polymer, on_gamma: &dyn Fn(u32) -> bool, beta: f64, kappa: f64) -> f64 {
    let bd = polymer_boundary(geom, Phase::Confinement, poly);
    let on = bd.iter().filter(|&&e| on_gamma(e)).count() as i32;
    let off = bd.len() as i32 - on;
    (2.0 * beta).tanh().powi(poly.len() as i32) * (2.0 * kappa).tanh().powi(off - on)
}

/// `Ψ^γ(S) = U(S) Π_η φ^γ(η)^{n_S(η)}`.
pub fn psi_conf(geom: &BoxGeometry, s: &Cluster, on_gamma: &dyn Fn(u32) -> bool, beta: f64, kappa: f64) -> f64 {
    s.ursell
        * s.iter()
            .map(|(p, n)| phi_gamma(geom, p, on_gamma, beta, kappa).powi(n as i32))
            .product::<f64>()
}

/// Confinement norms `(‖S‖_1, ‖S‖_γ)`. `‖S‖_1` counts positive edges of `supp δη` for
/// polymers not touching γ; `‖S‖_γ` counts oriented edges of `supp δη ∩ supp γ`, so that
/// `φ^γ(S) = φ^0(S) tanh(2κ)^{−‖S‖_γ}`.
pub fn conf_norms(geom: &BoxGeometry, s: &Cluster, on_gamma: &dyn Fn(u32) -> bool) -> (usize, usize) {
    let mut n1 = 0;
    let mut ng = 0;
    for (p, n) in s.iter() {
        let touches = p.cells.iter().any(|&pl| geom.faces(2, pl as usize).iter().any(|&(e, _)| on_gamma(e)));
        let bd = polymer_boundary(geom, Phase::Confinement, p);
        if touches {
            ng += 2 * n as usize * bd.iter().filter(|&&e| on_gamma(e)).count();
        } else {
            n1 += n as usize * bd.len();
        }
    }
    (n1, ng)
}

// ---------------------------------------------------------------------------------------
// Convergence constants

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> bool) -> f64 {
    // f(lo) is false, f(hi) is true
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiggsConstants {
    pub d: usize,
    pub m1: usize,
    pub alpha: f64,
    pub kappa0: f64,
}

/// `κ_0 = min_α log(M_1² + 1/α) / (4(1−α))`, located by bisection on the sign of the derivative.
pub fn higgs_constants(d: usize) -> Result<HiggsConstants> {
    if d < 2 {
        return Err(Error::Geometry(format!("need d >= 2, got {d}")));
    }
    let a = (m1(d) * m1(d)) as f64;
    let f = |al: f64| (a + 1.0 / al).ln() / (4.0 * (1.0 - al));
    // f'(α) has the sign of log(A + 1/α) − (1−α)/(α(Aα + 1))
    let rising = |al: f64| (a + 1.0 / al).ln() - (1.0 - al) / (al * (a * al + 1.0)) > 0.0;
    let alpha = bisect(1e-12, 1.0 - 1e-12, rising);
    Ok(HiggsConstants { d, m1: m1(d), alpha, kappa0: f(alpha) })
}

/// Closed-form bound `C_ε < 4x/(1 − 4M_1²x)` with `x = e^{−2(2(κ_0+ε) − α)}`.
pub fn c_eps(d: usize, eps: f64) -> Result<f64> {
    let hc = higgs_constants(d)?;
    let x = (-2.0 * (2.0 * (hc.kappa0 + eps) - hc.alpha)).exp();
    let denom = 1.0 - 4.0 * (hc.m1 * hc.m1) as f64 * x;
    if !(eps > 0.0) || denom <= 0.0 {
        return Err(Error::OutsideRegime(format!(
            "closed-form C_eps needs 4 M_1^2 e^(-2(2(kappa0+eps)-alpha)) < 1; eps = {eps} is too small (minimum {:.6})",
            higgs_min_eps(d)?
        )));
    }
    Ok(4.0 * x / denom)
}

/// Smallest ε for which the closed-form `C_ε` is finite.
pub fn higgs_min_eps(d: usize) -> Result<f64> {
    let hc = higgs_constants(d)?;
    let m = hc.m1 as f64;
    Ok(((4.0 * m * m).ln() / 2.0 + hc.alpha) / 2.0 - hc.kappa0)
}

/// Tail constants of the Higgs-phase expansion at coupling κ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiggsTail {
    pub kappa0: f64,
    pub eps: f64,
    pub c_eps: f64,
    /// `r = κ − κ_0 − ε`.
    pub rate: f64,
    /// `q = e^{−4r}`: `Σ_{S ∋ e, ‖S‖_1 ≥ k} |Ψ| ≤ (C_ε/4) q^k`.
    pub q: f64,
}

/// Default ε: midway between the smallest ε with a finite closed-form `C_ε` and `κ − κ_0`.
pub fn higgs_tail(d: usize, kappa: f64, eps: Option<f64>) -> Result<HiggsTail> {
    let hc = higgs_constants(d)?;
    let emin = higgs_min_eps(d)?;
    let gap = kappa - hc.kappa0;
    let eps = match eps {
        Some(e) => e,
        None => {
            if gap <= emin {
                return Err(Error::OutsideRegime(format!(
                    "kappa = {kappa} must exceed kappa0 + eps_min = {:.6} for explicit tail bounds (kappa0 = {:.6})",
                    hc.kappa0 + emin,
                    hc.kappa0
                )));
            }
            0.5 * (emin + gap)
        }
    };
    if eps >= gap {
        return Err(Error::OutsideRegime(format!("need eps < kappa - kappa0 = {gap}, got {eps}")));
    }
    let c = c_eps(d, eps)?;
    let rate = gap - eps;
    Ok(HiggsTail { kappa0: hc.kappa0, eps, c_eps: c, rate, q: (-4.0 * rate).exp() })
}

fn conf_gap(m2: f64, t: f64, alpha: f64) -> f64 {
    // log(2α / (M_2³ + 2α M_2²)) − (1−α) log t: positive iff the defining inequality holds
    // with a positive denominator
    (2.0 * alpha / (m2.powi(3) + 2.0 * alpha * m2 * m2)).ln() - (1.0 - alpha) * t.ln()
}

fn golden_max(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if b - a < 1e-14 {
            break;
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// `α_β = inf{α ∈ (0,1): M_2³ t^{1−α} / (1 − M_2² t^{1−α}) < 2α}` with `t = tanh 2β`, reading
/// the fraction as a geometric-series bound so its denominator must be positive. `None` if
/// no α qualifies.
pub fn alpha_beta(d: usize, beta: f64) -> Option<f64> {
    let m = m2(d) as f64;
    let t = (2.0 * beta).tanh();
    if t == 0.0 {
        return Some(0.0);
    }
    if m * m * t >= 1.0 {
        return None;
    }
    // the gap is concave in α
    let (amax, gmax) = golden_max(1e-15, 1.0 - 1e-15, |a| conf_gap(m, t, a));
    if gmax <= 0.0 {
        return None;
    }
    Some(bisect(0.0, amax, |a| a > 0.0 && conf_gap(m, t, a) > 0.0))
}

/// `β_0 = sup{β: M_2² tanh(2β) < 1 and some α qualifies}`, by bisection on β.
pub fn beta0(d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::Geometry(format!("need d >= 2, got {d}")));
    }
    let hi = 0.5 * (1.0 / (m2(d) * m2(d)) as f64).atanh();
    Ok(bisect(0.0, hi, |b| b > 0.0 && alpha_beta(d, b).is_none()))
}

/// `C^{(2)} = s/(1 − M_2² s)` with `s = tanh(2b)^{1−α_b}`.
pub fn c2(d: usize, b: f64) -> Result<f64> {
    let al = alpha_beta(d, b).ok_or_else(|| Error::OutsideRegime(format!("beta = {b} is above beta0 = {:.6e}", beta0(d).unwrap_or(f64::NAN))))?;
    let m = m2(d) as f64;
    let s = (2.0 * b).tanh().powf(1.0 - al);
    Ok(s / (1.0 - m * m * s))
}

/// Tail constants of the confinement-phase expansion at coupling β.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfTail {
    pub beta0: f64,
    pub eps: f64,
    /// `C^{(2)}` evaluated at `β + ε`.
    pub c2: f64,
    /// `R = tanh(2β)/tanh(2(β+ε))`: `Σ_{S ∋ p, ‖S‖ ≥ k} |Ψ^γ| ≤ C^{(2)} R^k`.
    pub ratio: f64,
}

/// Default ε = (β_0 − β)/2.
pub fn conf_tail(d: usize, beta: f64, eps: Option<f64>) -> Result<ConfTail> {
    let b0 = beta0(d)?;
    if !(0.0..b0).contains(&beta) {
        return Err(Error::OutsideRegime(format!("confinement expansion needs 0 <= beta < beta0 = {b0:.6e}, got {beta}")));
    }
    let eps = eps.unwrap_or(0.5 * (b0 - beta));
    if !(eps > 0.0 && beta + eps < b0) {
        return Err(Error::OutsideRegime(format!("need 0 < eps < beta0 - beta = {:.6e}, got {eps}", b0 - beta)));
    }
    let c = c2(d, beta + eps)?;
    let ratio = (2.0 * beta).tanh() / (2.0 * (beta + eps)).tanh();
    Ok(ConfTail { beta0: b0, eps, c2: c, ratio })
}

// ---------------------------------------------------------------------------------------
// Truncated log partition functions

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub value: f64,
    /// Bound on the omitted clusters.
    pub tail_bound: f64,
    pub clusters: u64,
    pub max_size: usize,
    pub kmax: usize,
}

/// Truncated `Σ_S Ψ` over all clusters in the box with `‖S‖ ≤ J` and `n(S) ≤ kmax`.
///
/// Higgs phase: the weights are `Ψ_{β,κ,γ}(S) = Ψ(S) ρ(S(γ))`, so with `γ = None` this is
/// `log Z^{(U)}` normalized by the vacuum. Confinement phase: `Ψ^γ`, giving
/// `log Σ_ω φ^γ(ω)`. Parameters outside the convergent regime are refused.
#[allow(clippy::too_many_arguments)]
pub fn log_z_cluster(
    phase: Phase,
    geom: &BoxGeometry,
    gamma: Option<&[i64]>,
    beta: f64,
    kappa: f64,
    max_size: usize,
    kmax: usize,
) -> Result<SeriesValue> {
    let d = geom.dim();
    let graph = build_graph(phase, geom);
    let q = ClusterQuery { graph: &graph, anchors: (0..graph.num_vertices() as u32).collect(), max_size, kmax };
    let k = q.first_omitted_size() as i32;
    let cells = graph.num_vertices() as f64;
    let zero = vec![0i64; geom.num_cells(1)];
    let g = gamma.unwrap_or(&zero);
    if g.len() != geom.num_cells(1) {
        return Err(Error::Geometry("path does not belong to this box".into()));
    }
    let (tail, sum) = match phase {
        Phase::Higgs => {
            let t = higgs_tail(d, kappa, None)?;
            let tail = cells * t.c_eps / 4.0 * t.q.powi(k);
            let (v, n) = reduce_clusters(&q, 1, |s, out| {
                let sign = if cluster_on_chain(s, g).rem_euclid(2) == 1 { -1.0 } else { 1.0 };
                out[0] = sign * psi_higgs(geom, s, beta, kappa);
            })?;
            (tail, (v[0], n))
        }
        Phase::Confinement => {
            let t = conf_tail(d, beta, None)?;
            let tail = cells * t.c2 * t.ratio.powi(k);
            let on = |e: u32| g[e as usize].rem_euclid(2) == 1;
            let (v, n) = reduce_clusters(&q, 1, |s, out| out[0] = psi_conf(geom, s, &on, beta, kappa))?;
            (tail, (v[0], n))
        }
    };
    Ok(SeriesValue { value: sum.0, tail_bound: tail, clusters: sum.1, max_size, kmax })
}

// ---------------------------------------------------------------------------------------
// Dumps

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRef {
    pub anchor: Vec<usize>,
    pub axes: Vec<usize>,
}

/// One JSON line per cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub phase: Phase,
    pub polymers: Vec<Vec<CellRef>>,
    pub multiplicity: Vec<u32>,
    pub n: u32,
    pub norm1: usize,
    pub norm2_or_gamma: usize,
    pub ursell: f64,
    pub psi: f64,
}

impl ClusterRecord {
    pub fn higgs(geom: &BoxGeometry, s: &Cluster, beta: f64, kappa: f64) -> Self {
        Self::build(geom, Phase::Higgs, s, s.size(), higgs_norm2(geom, s), psi_higgs(geom, s, beta, kappa))
    }

    pub fn conf(geom: &BoxGeometry, s: &Cluster, on_gamma: &dyn Fn(u32) -> bool, beta: f64, kappa: f64) -> Self {
        let (_, ng) = conf_norms(geom, s, on_gamma);
        Self::build(geom, Phase::Confinement, s, s.size(), ng, psi_conf(geom, s, on_gamma, beta, kappa))
    }

    fn build(geom: &BoxGeometry, phase: Phase, s: &Cluster, norm1: usize, norm2: usize, psi: f64) -> Self {
        let k = match phase {
            Phase::Higgs => 1,
            Phase::Confinement => 2,
        };
        let polymers = s
            .polymers
            .iter()
            .map(|p| {
                p.cells
                    .iter()
                    .map(|&c| {
                        let cell = geom.cell(k, c as usize);
                        CellRef { anchor: cell.anchor, axes: cell.axes }
                    })
                    .collect()
            })
            .collect();
        ClusterRecord {
            phase,
            polymers,
            multiplicity: s.multiplicity.clone(),
            n: s.count(),
            norm1,
            norm2_or_gamma: norm2,
            ursell: s.ursell,
            psi,
        }
    }
}

pub fn write_cluster_dump<W: Write>(mut w: W, records: &[ClusterRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaugemodel::{ModelParams, Path};
    use crate::hte::hat_z;
    use crate::oracle::{exact_unitary_expectation, log_z_normalized};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn center_edge(geom: &BoxGeometry) -> u32 {
        let c = geom.side() / 2;
        let mut a = vec![c; geom.dim()];
        a[0] = c - 1;
        geom.edge(&a, 0).unwrap() as u32
    }

    #[test]
    fn degree_bounds_attained_in_bulk() {
        for d in 2..=4 {
            let geom = BoxGeometry::new(d, 4).unwrap();
            for phase in [Phase::Higgs, Phase::Confinement] {
                let g = build_graph(phase, &geom);
                assert_eq!(g.max_degree(), g.degree_bound(), "d={d} {phase:?}");
            }
        }
        assert_eq!((m1(2), m1(4), m2(3), m2(4)), (6, 18, 12, 20));
    }

    #[test]
    fn bulk_edge_degree_in_plane() {
        let geom = BoxGeometry::new(2, 4).unwrap();
        let g = build_graph(Phase::Higgs, &geom);
        assert_eq!(g.degree(center_edge(&geom)), 6);
    }

    #[test]
    fn g2_neighbors_share_an_edge() {
        let geom = BoxGeometry::new(3, 2).unwrap();
        let g = build_graph(Phase::Confinement, &geom);
        for p in 0..g.num_vertices() as u32 {
            for &q in g.neighbors(p) {
                let ep: BTreeSet<u32> = geom.faces(2, p as usize).iter().map(|x| x.0).collect();
                assert!(geom.faces(2, q as usize).iter().any(|x| ep.contains(&x.0)));
            }
        }
    }

    #[test]
    fn single_cell_polymers() {
        let geom = BoxGeometry::new(2, 3).unwrap();
        let g = build_graph(Phase::Higgs, &geom);
        for e in 0..g.num_vertices() as u32 {
            assert_eq!(enumerate_polymers(&g, e, 1).unwrap(), vec![Polymer::new(vec![e])]);
        }
    }

    #[test]
    fn two_plaquette_polymers_match_degree() {
        let geom = BoxGeometry::new(2, 4).unwrap();
        let g = build_graph(Phase::Confinement, &geom);
        let p = geom.index(&[1, 1], &[0, 1]).unwrap() as u32;
        let polys = enumerate_polymers(&g, p, 2).unwrap();
        assert_eq!(polys.iter().filter(|q| q.len() == 2).count(), 4);
    }

    fn small_subsets(ball: &[u32], j: usize) -> Vec<Vec<u32>> {
        fn rec(ball: &[u32], start: usize, j: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if !cur.is_empty() {
                out.push(cur.clone());
            }
            if cur.len() == j {
                return;
            }
            for i in start..ball.len() {
                cur.push(ball[i]);
                rec(ball, i + 1, j, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(ball, 0, j, &mut Vec::new(), &mut out);
        out
    }

    fn brute_force_polymers(g: &AdjacencyGraph, anchor: u32, j: usize) -> BTreeSet<Polymer> {
        let dist = g.distances(&[anchor], j.saturating_sub(1));
        let ball: Vec<u32> = (0..g.num_vertices() as u32).filter(|&v| dist[v as usize] != u32::MAX).collect();
        let mut out = BTreeSet::new();
        for sub in small_subsets(&ball, j) {
            let p = Polymer::new(sub);
            if p.contains(anchor) && p.is_connected(g) {
                out.insert(p);
            }
        }
        out
    }

    #[test]
    fn polymer_enumeration_matches_subset_filter() {
        let geom = BoxGeometry::new(2, 5).unwrap();
        for (phase, j) in [(Phase::Higgs, 3), (Phase::Confinement, 4)] {
            let g = build_graph(phase, &geom);
            let anchor = match phase {
                Phase::Higgs => center_edge(&geom),
                Phase::Confinement => geom.index(&[2, 2], &[0, 1]).unwrap() as u32,
            };
            let fast = enumerate_polymers(&g, anchor, j).unwrap();
            let set: BTreeSet<Polymer> = fast.iter().cloned().collect();
            assert_eq!(set.len(), fast.len(), "duplicates");
            assert_eq!(set, brute_force_polymers(&g, anchor, j));
        }
    }

    #[test]
    fn polymer_enumeration_near_boundary() {
        let geom = BoxGeometry::new(3, 2).unwrap();
        let g = build_graph(Phase::Confinement, &geom);
        let fast: BTreeSet<Polymer> = enumerate_polymers(&g, 0, 3).unwrap().into_iter().collect();
        assert_eq!(fast, brute_force_polymers(&g, 0, 3));
    }

    // ---- Ursell -------------------------------------------------------------------------

    fn brute_connected_sum(k: usize, compat: u32) -> i64 {
        let pairs: Vec<(usize, usize)> = (1..k).flat_map(|j| (0..j).map(move |i| (i, j))).collect();
        let mut total = 0;
        for g in 0u32..(1 << pairs.len()) {
            let edges: Vec<(usize, usize)> = (0..pairs.len()).filter(|&b| g >> b & 1 == 1).map(|b| pairs[b]).collect();
            // depth-first connectivity
            let mut seen = vec![false; k];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(v) = stack.pop() {
                for &(a, b) in &edges {
                    let w = if a == v { b } else if b == v { a } else { continue };
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            if !seen.iter().all(|&s| s) {
                continue;
            }
            let ind: bool = edges.iter().all(|&(a, b)| compat >> pair_bit(a, b) & 1 == 1);
            if ind {
                total += if edges.len() % 2 == 0 { 1 } else { -1 };
            }
        }
        total
    }

    fn partition_recursion(k: usize, compat: u32) -> i64 {
        // c(A) = f(A) − Σ_{B ∋ min A, B ⊊ A} c(B) f(A∖B), f(A) = 1 iff A has no compatible pair
        let n = 1usize << k;
        let independent = |a: usize| {
            (0..k).all(|i| (i + 1..k).all(|j| a >> i & 1 == 0 || a >> j & 1 == 0 || compat >> pair_bit(i, j) & 1 == 0))
        };
        let f: Vec<i64> = (0..n).map(|a| i64::from(independent(a))).collect();
        let mut c = vec![0i64; n];
        for a in 1..n {
            let low = a & a.wrapping_neg();
            let mut val = f[a];
            let rest = a & !low;
            let mut sub = rest;
            loop {
                let b = sub | low;
                if b != a {
                    val -= c[b] * f[a & !b];
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & rest;
            }
            c[a] = val;
        }
        c[n - 1]
    }

    #[test]
    fn ursell_paper_values() {
        assert_eq!(connected_graph_sum(1, 0).unwrap(), 1);
        assert_eq!(connected_graph_sum(2, 1).unwrap(), -1);
        assert_eq!(connected_graph_sum(3, 0b111).unwrap(), 2);
        assert_eq!(connected_graph_sum(2, 0).unwrap(), 0);
    }

    #[test]
    fn ursell_exhaustive_small_k() {
        for k in 1..=5 {
            let npairs = k * (k - 1) / 2;
            for compat in 0u32..(1 << npairs) {
                let fast = connected_graph_sum(k, compat).unwrap();
                assert_eq!(fast, brute_connected_sum(k, compat), "k={k} compat={compat:b}");
                assert_eq!(fast, partition_recursion(k, compat), "k={k} compat={compat:b}");
            }
        }
    }

    #[test]
    fn ursell_complete_graph_closed_form() {
        // a single polymer repeated k times: (−1)^{k−1}(k−1)!/k! = (−1)^{k−1}/k
        let geom = BoxGeometry::new(2, 2).unwrap();
        let g = build_graph(Phase::Higgs, &geom);
        let p = Polymer::new(vec![0]);
        for k in 1..=6u32 {
            let u = ursell(&g, std::slice::from_ref(&p), &[k]).unwrap();
            let expected = if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
            assert_relative_eq!(u, expected, max_relative = 1e-15);
        }
    }

    proptest! {
        #[test]
        fn ursell_permutation_invariant(compat in 0u32..(1 << 15), perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle()) {
            let mut permuted = 0u32;
            for j in 1..6 {
                for i in 0..j {
                    if compat >> pair_bit(i, j) & 1 == 1 {
                        permuted |= 1 << pair_bit(perm[i], perm[j]);
                    }
                }
            }
            prop_assert_eq!(connected_graph_sum(6, compat).unwrap(), connected_graph_sum(6, permuted).unwrap());
        }
    }

    #[test]
    fn ursell_vanishes_on_decomposable() {
        // {0,1} and {2,3} never compatible across
        let compat = (1 << pair_bit(0, 1)) | (1 << pair_bit(2, 3));
        assert_eq!(connected_graph_sum(4, compat).unwrap(), 0);
    }

    // ---- clusters -----------------------------------------------------------------------

    fn brute_force_clusters(g: &AdjacencyGraph, anchors: &[u32], j: usize, kmax: usize) -> Vec<(Vec<Polymer>, Vec<u32>)> {
        // all polymers within reach, then all multisets with Σ size ≤ j, filtered
        let dist = g.distances(anchors, j.saturating_sub(1));
        let ball: Vec<u32> = (0..g.num_vertices() as u32).filter(|&v| dist[v as usize] != u32::MAX).collect();
        let mut polys: Vec<Polymer> = Vec::new();
        for sub in small_subsets(&ball, j) {
            let p = Polymer::new(sub);
            if p.is_connected(g) {
                polys.push(p);
            }
        }
        polys.sort();
        let mut out = Vec::new();
        fn rec(polys: &[Polymer], start: usize, left: usize, kleft: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if !cur.is_empty() {
                out.push(cur.clone());
            }
            if kleft == 0 {
                return;
            }
            for i in start..polys.len() {
                if polys[i].len() <= left {
                    cur.push(i);
                    rec(polys, i, left - polys[i].len(), kleft - 1, cur, out);
                    cur.pop();
                }
            }
        }
        let mut seqs = Vec::new();
        rec(&polys, 0, j, kmax, &mut Vec::new(), &mut seqs);
        for seq in seqs {
            // connectivity of the instance graph
            let k = seq.len();
            let mut seen = vec![false; k];
            seen[0] = true;
            let mut stack = vec![0];
            while let Some(a) = stack.pop() {
                for b in 0..k {
                    if !seen[b] && compatible(g, &polys[seq[a]], &polys[seq[b]]) {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
            if !seen.iter().all(|&s| s) {
                continue;
            }
            if !seq.iter().any(|&i| anchors.iter().any(|&a| polys[i].contains(a))) {
                continue;
            }
            let mut ps = Vec::new();
            let mut ms: Vec<u32> = Vec::new();
            for &i in &seq {
                if ps.last() == Some(&polys[i]) {
                    *ms.last_mut().unwrap() += 1;
                } else {
                    ps.push(polys[i].clone());
                    ms.push(1);
                }
            }
            out.push((ps, ms));
        }
        out.sort();
        out
    }

    #[test]
    fn cluster_enumeration_matches_multiset_filter() {
        let geom = BoxGeometry::new(2, 4).unwrap();
        for phase in [Phase::Higgs, Phase::Confinement] {
            let g = build_graph(phase, &geom);
            let anchor = match phase {
                Phase::Higgs => center_edge(&geom),
                Phase::Confinement => geom.index(&[1, 1], &[0, 1]).unwrap() as u32,
            };
            for (j, kmax) in [(3, 6), (4, 3)] {
                let q = ClusterQuery { graph: &g, anchors: vec![anchor], max_size: j, kmax };
                let fast = enumerate_clusters(&q).unwrap();
                let mut keys: Vec<(Vec<Polymer>, Vec<u32>)> = fast.iter().map(|c| (c.polymers.clone(), c.multiplicity.clone())).collect();
                keys.sort();
                let n = keys.len();
                keys.dedup();
                assert_eq!(n, keys.len(), "duplicate clusters");
                assert_eq!(keys, brute_force_clusters(&g, &[anchor], j, kmax), "{phase:?} J={j}");
                for c in &fast {
                    assert_relative_eq!(c.ursell, ursell(&g, &c.polymers, &c.multiplicity).unwrap(), max_relative = 1e-15);
                }
            }
        }
    }

    #[test]
    fn single_edge_higgs_activity() {
        let geom = BoxGeometry::new(2, 4).unwrap();
        let g = build_graph(Phase::Higgs, &geom);
        let e = center_edge(&geom);
        let q = ClusterQuery { graph: &g, anchors: vec![e], max_size: 1, kmax: 1 };
        let cl = enumerate_clusters(&q).unwrap();
        assert_eq!(cl.len(), 1);
        let (beta, kappa) = (0.3, 0.7);
        assert_relative_eq!(psi_higgs(&geom, &cl[0], beta, kappa), (-4.0 * kappa - 8.0 * beta).exp(), max_relative = 1e-15);
    }

    #[test]
    fn compatible_pairs_have_nonpositive_weight() {
        let geom = BoxGeometry::new(2, 4).unwrap();
        let g = build_graph(Phase::Higgs, &geom);
        let q = ClusterQuery { graph: &g, anchors: vec![center_edge(&geom)], max_size: 4, kmax: 6 };
        for c in enumerate_clusters(&q).unwrap() {
            if c.count() == 2 {
                assert!(psi_higgs(&geom, &c, 0.2, 1.5) <= 0.0);
            }
        }
    }

    #[test]
    fn conf_identity_with_path() {
        let geom = BoxGeometry::new(2, 6).unwrap();
        let line: Vec<u32> = (0..6).map(|x| geom.edge(&[x, 3], 0).unwrap() as u32).collect();
        let on = |e: u32| line.contains(&e);
        let g = build_graph(Phase::Confinement, &geom);
        let anchor = geom.index(&[2, 3], &[0, 1]).unwrap() as u32;
        let q = ClusterQuery { graph: &g, anchors: vec![anchor], max_size: 4, kmax: 6 };
        let (beta, kappa) = (0.3, 0.4);
        let tk = (2.0f64 * kappa).tanh();
        for c in enumerate_clusters(&q).unwrap() {
            let (_, ng) = conf_norms(&geom, &c, &on);
            let lhs = psi_conf(&geom, &c, &on, beta, kappa);
            let rhs = psi_conf(&geom, &c, &|_| false, beta, kappa) * tk.powi(-(ng as i32));
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
        }
    }

    #[test]
    fn straight_path_geometry_bound() {
        let geom = BoxGeometry::new(2, 7).unwrap();
        let line: Vec<u32> = (0..7).map(|x| geom.edge(&[x, 3], 0).unwrap() as u32).collect();
        let on = |e: u32| line.contains(&e);
        let g = build_graph(Phase::Confinement, &geom);
        let anchor = geom.index(&[3, 3], &[0, 1]).unwrap() as u32;
        let (beta, kappa) = (0.25, 0.3);
        let tb = (2.0f64 * beta).tanh();
        for p in enumerate_polymers(&g, anchor, 6).unwrap() {
            assert!(phi_gamma(&geom, &p, &on, beta, kappa) <= tb.powi(p.len() as i32) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn translation_invariance() {
        let geom = BoxGeometry::new(2, 11).unwrap();
        let g = build_graph(Phase::Higgs, &geom);
        let sum_at = |a: &[usize]| {
            let e = geom.edge(a, 0).unwrap() as u32;
            let q = ClusterQuery { graph: &g, anchors: vec![e], max_size: 4, kmax: 6 };
            reduce_clusters(&q, 1, |s, out| out[0] = psi_higgs(&geom, s, 0.2, 1.5)).unwrap().0[0]
        };
        assert_relative_eq!(sum_at(&[5, 5]), sum_at(&[4, 6]), max_relative = 1e-13);
    }

    #[test]
    fn kappa0_matches_golden_section() {
        for d in [2, 3, 4] {
            let hc = higgs_constants(d).unwrap();
            let a = (m1(d) * m1(d)) as f64;
            let f = |al: f64| -(a + 1.0 / al).ln() / (4.0 * (1.0 - al));
            let (_, neg) = golden_max(1e-9, 1.0 - 1e-9, f);
            assert!((hc.kappa0 + neg).abs() < 1e-10, "d={d}: {} vs {}", hc.kappa0, -neg);
        }
        let hc = higgs_constants(2).unwrap();
        assert!((hc.kappa0 - 1.0532).abs() < 1e-3);
    }

    #[test]
    fn beta0_brackets_its_definition() {
        for d in [2, 3, 4] {
            let b0 = beta0(d).unwrap();
            assert!(alpha_beta(d, b0 * (1.0 - 1e-6)).is_some());
            assert!(alpha_beta(d, b0 * (1.0 + 1e-6)).is_none());
            let m = m2(d) as f64;
            assert!(m * m * (2.0 * b0).tanh() < 1.0);
        }
        // grid oracle for d = 2: t* = exp(max_α log(2α/(M³+2αM²))/(1−α))
        let m = 4.0f64;
        let best = (1..100_000)
            .map(|i| i as f64 / 100_000.0)
            .map(|a| (2.0 * a / (m.powi(3) + 2.0 * a * m * m)).ln() / (1.0 - a))
            .fold(f64::NEG_INFINITY, f64::max);
        let b0 = 0.5 * best.exp().atanh();
        assert_relative_eq!(beta0(2).unwrap(), b0, max_relative = 1e-6);
    }

    #[test]
    fn alpha_beta_is_infimum() {
        let d = 2;
        let b = 0.5 * beta0(d).unwrap();
        let al = alpha_beta(d, b).unwrap();
        let m = m2(d) as f64;
        let t = (2.0 * b).tanh();
        let holds = |a: f64| {
            let s = t.powf(1.0 - a);
            1.0 - m * m * s > 0.0 && m.powi(3) * s / (1.0 - m * m * s) < 2.0 * a
        };
        assert!(holds(al + 1e-9));
        assert!(!holds(al - 1e-9));
    }

    #[test]
    fn c_eps_needs_large_enough_eps() {
        assert!(c_eps(2, 0.1).is_err());
        let emin = higgs_min_eps(2).unwrap();
        assert!(c_eps(2, emin * 1.01).is_ok());
        let t = higgs_tail(2, 1.5, None).unwrap();
        assert!(t.rate > 0.0 && t.q < 1.0);
    }

    #[test]
    fn higgs_log_z_within_tail() {
        for kappa in [1.5, 2.0] {
            for beta in [0.0, 0.5] {
                let p = ModelParams::z2(2, 2, beta, kappa);
                let geom = p.geometry().unwrap();
                let exact = log_z_normalized(&geom, &p).unwrap();
                let mut last = f64::INFINITY;
                for j in [2, 3, 4] {
                    let s = log_z_cluster(Phase::Higgs, &geom, None, beta, kappa, j, 6).unwrap();
                    assert!((s.value - exact).abs() <= s.tail_bound, "κ={kappa} β={beta} J={j}: {} vs {exact}, tail {}", s.value, s.tail_bound);
                    assert!(s.tail_bound < last);
                    last = s.tail_bound;
                }
            }
        }
    }

    #[test]
    fn higgs_wilson_line_series() {
        let p = ModelParams::z2(2, 2, 0.5, 2.0);
        let geom = p.geometry().unwrap();
        let gamma = Path::straight(&geom, &[0, 1], 0, 2).unwrap();
        let exact = exact_unitary_expectation(&geom, &gamma, &p).unwrap().re.ln();
        let z0 = log_z_cluster(Phase::Higgs, &geom, None, p.beta, p.kappa, 4, 6).unwrap();
        let zg = log_z_cluster(Phase::Higgs, &geom, Some(gamma.chain().coeffs()), p.beta, p.kappa, 4, 6).unwrap();
        assert!((zg.value - z0.value - exact).abs() <= 2.0 * z0.tail_bound);
    }

    #[test]
    fn conf_log_z_within_tail() {
        let geom = BoxGeometry::new(2, 3).unwrap();
        let beta = 0.5 * beta0(2).unwrap();
        let kappa = 0.4;
        let gamma = Path::straight(&geom, &[0, 1], 0, 3).unwrap();
        for g in [Path::empty(&geom), gamma] {
            let exact = (hat_z(&geom, &g, beta, kappa).unwrap() / (2.0f64 * kappa).tanh().powi(g.len() as i32)).ln();
            let s = log_z_cluster(Phase::Confinement, &geom, Some(g.chain().coeffs()), beta, kappa, 3, 6).unwrap();
            assert!((s.value - exact).abs() <= s.tail_bound, "{} vs {exact}, tail {}", s.value, s.tail_bound);
        }
    }

    #[test]
    fn zero_cutoff() {
        let geom = BoxGeometry::new(2, 2).unwrap();
        let s = log_z_cluster(Phase::Higgs, &geom, None, 0.3, 2.0, 0, 6).unwrap();
        assert_eq!(s.value, 0.0);
        let t = higgs_tail(2, 2.0, None).unwrap();
        assert_relative_eq!(s.tail_bound, 12.0 * t.c_eps / 4.0 * t.q, max_relative = 1e-15);
    }

    #[test]
    fn refuses_outside_regime() {
        let geom = BoxGeometry::new(2, 2).unwrap();
        assert!(matches!(log_z_cluster(Phase::Higgs, &geom, None, 0.3, 1.0, 2, 6), Err(Error::OutsideRegime(_))));
        assert!(matches!(log_z_cluster(Phase::Confinement, &geom, None, 0.1, 0.5, 2, 6), Err(Error::OutsideRegime(_))));
    }

    #[test]
    fn dump_round_trips() {
        let geom = BoxGeometry::new(2, 3).unwrap();
        let g = build_graph(Phase::Higgs, &geom);
        let q = ClusterQuery { graph: &g, anchors: vec![0], max_size: 2, kmax: 2 };
        let recs: Vec<ClusterRecord> = enumerate_clusters(&q).unwrap().iter().map(|c| ClusterRecord::higgs(&geom, c, 0.1, 1.5)).collect();
        let mut buf = Vec::new();
        write_cluster_dump(&mut buf, &recs).unwrap();
        let back: Vec<ClusterRecord> = String::from_utf8(buf).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, recs);
    }
}
