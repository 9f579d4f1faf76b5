//! Exact planarity testing with the left-right (LR) criterion.
//!
//! The test orients the graph by a depth-first search, computes lowpoints and
//! nesting depths, then checks that all return edges can be assigned to the
//! left or right side of their tree path without conflict. When the test
//! succeeds the side assignment is turned into a combinatorial embedding
//! (rotation system), which [`PlanarEmbedding::is_valid`] checks against
//! Euler's formula.

use std::collections::{HashMap, HashSet};

const NONE: usize = usize::MAX;

/// A rotation system: for every node, its neighbours in clockwise order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanarEmbedding {
    rotation: Vec<Vec<usize>>,
}

impl PlanarEmbedding {
    pub fn n_nodes(&self) -> usize {
        self.rotation.len()
    }

    pub fn rotation(&self, v: usize) -> &[usize] {
        &self.rotation[v]
    }

    pub fn n_edges(&self) -> usize {
        self.rotation.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Number of faces traced by the rotation system (orbits of half-edges).
    pub fn face_count(&self) -> usize {
        let pos: Vec<HashMap<usize, usize>> = self
            .rotation
            .iter()
            .map(|r| r.iter().enumerate().map(|(k, &w)| (w, k)).collect())
            .collect();
        let mut seen: Vec<Vec<bool>> = self.rotation.iter().map(|r| vec![false; r.len()]).collect();
        let mut faces = 0;
        for v in 0..self.rotation.len() {
            for k in 0..self.rotation[v].len() {
                if seen[v][k] {
                    continue;
                }
                faces += 1;
                let (mut a, mut ka) = (v, k);
                while !seen[a][ka] {
                    seen[a][ka] = true;
                    let b = self.rotation[a][ka];
                    let back = pos[b][&a];
                    let deg = self.rotation[b].len();
                    let next = (back + 1) % deg;
                    a = b;
                    ka = next;
                }
            }
        }
        faces
    }

    /// Checks the rotation system is symmetric and satisfies
    /// `V - E + F = 2` on every connected component with at least one edge.
    pub fn is_valid(&self) -> bool {
        let n = self.rotation.len();
        for (v, r) in self.rotation.iter().enumerate() {
            for &w in r {
                if w >= n || w == v || !self.rotation[w].contains(&v) {
                    return false;
                }
            }
        }
        let mut comp = vec![NONE; n];
        let mut n_comp = 0;
        let mut nodes_with_edges = 0;
        for s in 0..n {
            if comp[s] != NONE || self.rotation[s].is_empty() {
                continue;
            }
            let mut stack = vec![s];
            comp[s] = n_comp;
            while let Some(v) = stack.pop() {
                nodes_with_edges += 1;
                for &w in &self.rotation[v] {
                    if comp[w] == NONE {
                        comp[w] = n_comp;
                        stack.push(w);
                    }
                }
            }
            n_comp += 1;
        }
        let v = nodes_with_edges as i64;
        let e = self.n_edges() as i64;
        let f = self.face_count() as i64;
        v - e + f == 2 * n_comp as i64
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Interval {
    low: Option<usize>,
    high: Option<usize>,
}

impl Interval {
    fn is_empty(&self) -> bool {
        self.low.is_none() && self.high.is_none()
    }
}

#[derive(Debug, Clone, Copy)]
struct ConflictPair {
    left: Interval,
    right: Interval,
    id: u64,
}

impl ConflictPair {
    fn swap(&mut self) {
        std::mem::swap(&mut self.left, &mut self.right);
    }
}

/// Half-edge store used while building the embedding.
struct EmbeddingBuilder {
    cw: Vec<HashMap<usize, usize>>,
    ccw: Vec<HashMap<usize, usize>>,
    first: Vec<Option<usize>>,
}

impl EmbeddingBuilder {
    fn new(n: usize) -> Self {
        Self {
            cw: vec![HashMap::new(); n],
            ccw: vec![HashMap::new(); n],
            first: vec![None; n],
        }
    }

    fn add_cw(&mut self, start: usize, end: usize, reference: Option<usize>) {
        match reference {
            None => {
                self.cw[start].insert(end, end);
                self.ccw[start].insert(end, end);
                self.first[start] = Some(end);
            }
            Some(r) => {
                let after = self.cw[start][&r];
                self.cw[start].insert(r, end);
                self.ccw[start].insert(end, r);
                self.cw[start].insert(end, after);
                self.ccw[start].insert(after, end);
            }
        }
    }

    fn add_ccw(&mut self, start: usize, end: usize, reference: Option<usize>) {
        match reference {
            None => self.add_cw(start, end, None),
            Some(r) => {
                let before = self.ccw[start][&r];
                self.add_cw(start, end, Some(before));
                if self.first[start] == Some(r) {
                    self.first[start] = Some(end);
                }
            }
        }
    }

    fn add_first(&mut self, start: usize, end: usize) {
        let reference = self.first[start];
        self.add_ccw(start, end, reference);
    }

    fn finish(self) -> PlanarEmbedding {
        let rotation = (0..self.cw.len())
            .map(|v| {
                let mut out = Vec::with_capacity(self.cw[v].len());
                if let Some(f) = self.first[v] {
                    let mut w = f;
                    loop {
                        out.push(w);
                        w = self.cw[v][&w];
                        if w == f {
                            break;
                        }
                    }
                }
                out
            })
            .collect();
        PlanarEmbedding { rotation }
    }
}

struct LrState<'a> {
    adj: &'a [Vec<usize>],
    height: Vec<usize>,
    parent_edge: Vec<Option<usize>>,
    roots: Vec<usize>,
    // Oriented edges, indexed by edge id.
    src: Vec<usize>,
    dst: Vec<usize>,
    out: Vec<Vec<usize>>,
    oriented: HashSet<(usize, usize)>,
    lowpt: Vec<usize>,
    lowpt2: Vec<usize>,
    nesting: Vec<i64>,
    ordered: Vec<Vec<usize>>,
    reference: Vec<Option<usize>>,
    side: Vec<i64>,
    stack: Vec<ConflictPair>,
    stack_bottom: Vec<Option<u64>>,
    lowpt_edge: Vec<Option<usize>>,
    next_id: u64,
}

impl<'a> LrState<'a> {
    fn new(adj: &'a [Vec<usize>], m: usize) -> Self {
        let n = adj.len();
        Self {
            adj,
            height: vec![NONE; n],
            parent_edge: vec![None; n],
            roots: Vec::new(),
            src: Vec::with_capacity(m),
            dst: Vec::with_capacity(m),
            out: vec![Vec::new(); n],
            oriented: HashSet::with_capacity(m),
            lowpt: Vec::with_capacity(m),
            lowpt2: Vec::with_capacity(m),
            nesting: Vec::with_capacity(m),
            ordered: Vec::new(),
            reference: Vec::new(),
            side: Vec::new(),
            stack: Vec::new(),
            stack_bottom: Vec::new(),
            lowpt_edge: Vec::new(),
            next_id: 0,
        }
    }

    fn key(v: usize, w: usize) -> (usize, usize) {
        (v.min(w), v.max(w))
    }

    fn orient(&mut self, v: usize) {
        let parent = self.parent_edge[v];
        for k in 0..self.adj[v].len() {
            let w = self.adj[v][k];
            if !self.oriented.insert(Self::key(v, w)) {
                continue;
            }
            let e = self.src.len();
            self.src.push(v);
            self.dst.push(w);
            self.out[v].push(e);
            self.lowpt.push(self.height[v]);
            self.lowpt2.push(self.height[v]);
            self.nesting.push(0);
            if self.height[w] == NONE {
                self.parent_edge[w] = Some(e);
                self.height[w] = self.height[v] + 1;
                self.orient(w);
            } else {
                self.lowpt[e] = self.height[w];
            }
            self.nesting[e] = 2 * self.lowpt[e] as i64;
            if self.lowpt2[e] < self.height[v] {
                self.nesting[e] += 1;
            }
            if let Some(p) = parent {
                if self.lowpt[e] < self.lowpt[p] {
                    self.lowpt2[p] = self.lowpt[p].min(self.lowpt2[e]);
                    self.lowpt[p] = self.lowpt[e];
                } else if self.lowpt[e] > self.lowpt[p] {
                    self.lowpt2[p] = self.lowpt2[p].min(self.lowpt[e]);
                } else {
                    self.lowpt2[p] = self.lowpt2[p].min(self.lowpt2[e]);
                }
            }
        }
    }

    fn top_id(&self) -> Option<u64> {
        self.stack.last().map(|p| p.id)
    }

    fn new_pair(&mut self) -> ConflictPair {
        self.next_id += 1;
        ConflictPair {
            left: Interval::default(),
            right: Interval::default(),
            id: self.next_id,
        }
    }

    fn conflicting(&self, i: &Interval, b: usize) -> bool {
        !i.is_empty() && i.high.is_some_and(|h| self.lowpt[h] > self.lowpt[b])
    }

    fn lowest(&self, p: &ConflictPair) -> usize {
        let low = |i: &Interval| i.low.map_or(NONE, |l| self.lowpt[l]);
        if p.left.is_empty() {
            low(&p.right)
        } else if p.right.is_empty() {
            low(&p.left)
        } else {
            low(&p.left).min(low(&p.right))
        }
    }

    fn test(&mut self, v: usize) -> bool {
        let parent = self.parent_edge[v];
        let first = self.ordered[v].first().copied();
        for k in 0..self.ordered[v].len() {
            let ei = self.ordered[v][k];
            let w = self.dst[ei];
            self.stack_bottom[ei] = self.top_id();
            if self.parent_edge[w] == Some(ei) {
                if !self.test(w) {
                    return false;
                }
            } else {
                self.lowpt_edge[ei] = Some(ei);
                let mut p = self.new_pair();
                p.right = Interval {
                    low: Some(ei),
                    high: Some(ei),
                };
                self.stack.push(p);
            }
            if self.lowpt[ei] < self.height[v] {
                let e = parent.expect("return edge below the root");
                if Some(ei) == first {
                    self.lowpt_edge[e] = self.lowpt_edge[ei];
                } else if !self.add_constraints(ei, e) {
                    return false;
                }
            }
        }
        if let Some(e) = parent {
            self.remove_back_edges(e);
        }
        true
    }

    fn add_constraints(&mut self, ei: usize, e: usize) -> bool {
        let mut p = self.new_pair();
        loop {
            let Some(mut q) = self.stack.pop() else {
                return false;
            };
            if !q.left.is_empty() {
                q.swap();
            }
            if !q.left.is_empty() {
                return false;
            }
            let qlow = q.right.low.expect("non-empty right interval");
            if self.lowpt[qlow] > self.lowpt[e] {
                if p.right.is_empty() {
                    p.right = q.right;
                } else if let Some(l) = p.right.low {
                    self.reference[l] = q.right.high;
                }
                p.right.low = q.right.low;
            } else {
                self.reference[qlow] = self.lowpt_edge[e];
            }
            if self.top_id() == self.stack_bottom[ei] {
                break;
            }
        }
        loop {
            let Some(top) = self.stack.last() else { break };
            if !(self.conflicting(&top.left, ei) || self.conflicting(&top.right, ei)) {
                break;
            }
            let mut q = self.stack.pop().expect("checked non-empty");
            if self.conflicting(&q.right, ei) {
                q.swap();
            }
            if self.conflicting(&q.right, ei) {
                return false;
            }
            if let Some(l) = p.right.low {
                self.reference[l] = q.right.high;
            }
            if q.right.low.is_some() {
                p.right.low = q.right.low;
            }
            if p.left.is_empty() {
                p.left = q.left;
            } else if let Some(l) = p.left.low {
                self.reference[l] = q.left.high;
            }
            p.left.low = q.left.low;
        }
        if !(p.left.is_empty() && p.right.is_empty()) {
            self.stack.push(p);
        }
        true
    }

    fn remove_back_edges(&mut self, e: usize) {
        let u = self.src[e];
        while let Some(top) = self.stack.last() {
            if self.lowest(top) != self.height[u] {
                break;
            }
            let p = self.stack.pop().expect("checked non-empty");
            if let Some(l) = p.left.low {
                self.side[l] = -1;
            }
        }
        if let Some(mut p) = self.stack.pop() {
            while let Some(h) = p.left.high {
                if self.dst[h] != u {
                    break;
                }
                p.left.high = self.reference[h];
            }
            if p.left.high.is_none() {
                if let Some(l) = p.left.low {
                    self.reference[l] = p.right.low;
                    self.side[l] = -1;
                    p.left.low = None;
                }
            }
            while let Some(h) = p.right.high {
                if self.dst[h] != u {
                    break;
                }
                p.right.high = self.reference[h];
            }
            if p.right.high.is_none() {
                if let Some(l) = p.right.low {
                    self.reference[l] = p.left.low;
                    self.side[l] = -1;
                    p.right.low = None;
                }
            }
            self.stack.push(p);
        }
        if self.lowpt[e] < self.height[u] {
            if let Some(top) = self.stack.last() {
                let (hl, hr) = (top.left.high, top.right.high);
                self.reference[e] = match (hl, hr) {
                    (Some(l), None) => Some(l),
                    (Some(l), Some(r)) if self.lowpt[l] > self.lowpt[r] => Some(l),
                    _ => hr,
                };
            }
        }
    }

    fn sign(&mut self, e: usize) -> i64 {
        let mut chain = Vec::new();
        let mut cur = e;
        while let Some(r) = self.reference[cur] {
            chain.push(cur);
            cur = r;
        }
        for &x in chain.iter().rev() {
            let r = self.reference[x].expect("chain link");
            self.side[x] *= self.side[r];
            self.reference[x] = None;
        }
        self.side[e]
    }

    fn sort_adjacency(&mut self) {
        self.ordered = self
            .out
            .iter()
            .map(|edges| {
                let mut sorted = edges.clone();
                sorted.sort_by_key(|&e| self.nesting[e]);
                sorted
            })
            .collect();
    }

    fn embed(&mut self, builder: &mut EmbeddingBuilder, left_ref: &mut [usize], right_ref: &mut [usize], v: usize) {
        for k in 0..self.ordered[v].len() {
            let ei = self.ordered[v][k];
            let w = self.dst[ei];
            if self.parent_edge[w] == Some(ei) {
                builder.add_first(w, v);
                left_ref[v] = w;
                right_ref[v] = w;
                self.embed(builder, left_ref, right_ref, w);
            } else if self.side[ei] == 1 {
                builder.add_cw(w, v, Some(right_ref[w]));
            } else {
                builder.add_ccw(w, v, Some(left_ref[w]));
                left_ref[w] = v;
            }
        }
    }
}

fn lr_planarity(adj: &[Vec<usize>], want_embedding: bool) -> Option<Option<PlanarEmbedding>> {
    let n = adj.len();
    let m: usize = adj.iter().map(Vec::len).sum::<usize>() / 2;
    if n > 2 && m > 3 * n - 6 {
        return None;
    }
    let mut st = LrState::new(adj, m);
    for v in 0..n {
        if st.height[v] == NONE {
            st.height[v] = 0;
            st.roots.push(v);
            st.orient(v);
        }
    }
    let m = st.src.len();
    st.sort_adjacency();
    st.reference = vec![None; m];
    st.side = vec![1; m];
    st.stack_bottom = vec![None; m];
    st.lowpt_edge = vec![None; m];
    for k in 0..st.roots.len() {
        let r = st.roots[k];
        if !st.test(r) {
            return None;
        }
    }
    if !want_embedding {
        return Some(None);
    }
    for e in 0..m {
        let s = st.sign(e);
        st.nesting[e] *= s;
    }
    st.sort_adjacency();
    let mut builder = EmbeddingBuilder::new(n);
    for v in 0..n {
        let mut prev = None;
        for &e in &st.ordered[v] {
            let w = st.dst[e];
            builder.add_cw(v, w, prev);
            prev = Some(w);
        }
    }
    let mut left_ref = vec![NONE; n];
    let mut right_ref = vec![NONE; n];
    for k in 0..st.roots.len() {
        let r = st.roots[k];
        st.embed(&mut builder, &mut left_ref, &mut right_ref, r);
    }
    Some(Some(builder.finish()))
}

/// Outcome of a planarity test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Planarity {
    pub planar: bool,
    /// Rotation-system witness, present iff `planar`.
    pub embedding: Option<PlanarEmbedding>,
}

fn adjacency_lists(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for (i, j) in edges {
        if i != j && !adj[i].contains(&j) {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    adj
}

/// Planarity of a simple undirected graph given as neighbour lists.
pub fn is_planar_lists(adj: &[Vec<usize>]) -> bool {
    lr_planarity(adj, false).is_some()
}

/// Planarity of the graph on `n` nodes with the given edges, with a witness.
pub fn planarity_of_edges(n: usize, edges: &[(usize, usize)]) -> Planarity {
    let adj = adjacency_lists(n, edges.iter().copied());
    match lr_planarity(&adj, true) {
        Some(embedding) => Planarity {
            planar: true,
            embedding,
        },
        None => Planarity {
            planar: false,
            embedding: None,
        },
    }
}

/// Planarity of a graph given as a square adjacency matrix (nonzero
/// off-diagonal entries are edges).
pub fn is_planar(adjacency: &nalgebra::DMatrix<f64>) -> Planarity {
    let n = adjacency.nrows();
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| adjacency[(i, j)] != 0.0 || adjacency[(j, i)] != 0.0)
        .collect();
    planarity_of_edges(n, &edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> Vec<(usize, usize)> {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    }

    fn k33() -> Vec<(usize, usize)> {
        (0..3).flat_map(|i| (3..6).map(move |j| (i, j))).collect()
    }

    #[test]
    fn kuratowski_graphs() {
        let k4 = planarity_of_edges(4, &complete(4));
        assert!(k4.planar);
        assert!(k4.embedding.unwrap().is_valid());
        assert!(!planarity_of_edges(5, &complete(5)).planar);
        assert!(!planarity_of_edges(6, &k33()).planar);
    }

    #[test]
    fn subdivided_k33_is_not_planar() {
        let mut edges: Vec<(usize, usize)> = k33().into_iter().filter(|&e| e != (0, 3)).collect();
        edges.push((0, 6));
        edges.push((6, 3));
        assert!(!planarity_of_edges(7, &edges).planar);
    }

    #[test]
    fn k5_minus_edge_and_k33_minus_edge_are_planar() {
        let k5m: Vec<_> = complete(5).into_iter().skip(1).collect();
        let p = planarity_of_edges(5, &k5m);
        assert!(p.planar && p.embedding.unwrap().is_valid());
        let k33m: Vec<_> = k33().into_iter().skip(1).collect();
        let p = planarity_of_edges(6, &k33m);
        assert!(p.planar && p.embedding.unwrap().is_valid());
    }

    #[test]
    fn triangulated_grid_embedding_has_euler_faces() {
        // 4x4 grid with one diagonal per cell: maximal planar minus outer face chords.
        let idx = |r: usize, c: usize| r * 4 + c;
        let mut edges = Vec::new();
        for r in 0..4 {
            for c in 0..4 {
                if c + 1 < 4 {
                    edges.push((idx(r, c), idx(r, c + 1)));
                }
                if r + 1 < 4 {
                    edges.push((idx(r, c), idx(r + 1, c)));
                }
                if r + 1 < 4 && c + 1 < 4 {
                    edges.push((idx(r, c), idx(r + 1, c + 1)));
                }
            }
        }
        let p = planarity_of_edges(16, &edges);
        let emb = p.embedding.expect("grid is planar");
        assert!(emb.is_valid());
        assert_eq!(emb.face_count(), edges.len() - 16 + 2);
    }

    #[test]
    fn disconnected_and_empty_graphs() {
        let p = planarity_of_edges(7, &[(0, 1), (1, 2), (2, 0), (4, 5)]);
        assert!(p.planar && p.embedding.unwrap().is_valid());
        assert!(planarity_of_edges(0, &[]).planar);
        assert!(planarity_of_edges(3, &[]).planar);
    }

    #[test]
    fn matrix_entry_point() {
        let a = nalgebra::DMatrix::from_fn(5, 5, |i, j| if i != j { 1.0 } else { 0.0 });
        assert!(!is_planar(&a).planar);
        let b = nalgebra::DMatrix::from_fn(4, 4, |i, j| if i != j { 1.0 } else { 0.0 });
        assert!(is_planar(&b).planar);
    }
}
