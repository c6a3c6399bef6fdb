//! Dense linear assignment by shortest augmenting paths (Jonker–Volgenant).

use crate::error::{Error, Result};

/// Largest instance accepted by [`solve`].
pub const MAX_SIZE: usize = 4096;

/// Optimal perfect matching of a square cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column matched to row `i`.
    pub row_to_col: Vec<usize>,
    pub cost: f64,
}

/// Minimises `sum_i cost[i][row_to_col[i]]` over permutations. `cost` is
/// row-major `n x n` and must be finite.
pub fn solve(n: usize, cost: &[f64]) -> Result<Assignment> {
    if n > MAX_SIZE {
        return Err(Error::SizeLimit { n, limit: MAX_SIZE });
    }
    if cost.len() != n * n {
        return Err(crate::error::invalid(format!("cost matrix has {} entries, expected {}", cost.len(), n * n)));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(crate::error::invalid("cost matrix must be finite"));
    }
    if n == 0 {
        return Ok(Assignment { row_to_col: Vec::new(), cost: 0.0 });
    }
    let row_to_col = Lap::new(n, cost).run();
    let total = crate::stats::compensated_sum(row_to_col.iter().enumerate().map(|(i, &j)| cost[i * n + j]));
    Ok(Assignment { row_to_col, cost: total })
}

const NONE: usize = usize::MAX;

struct Lap<'a> {
    n: usize,
    c: &'a [f64],
    x: Vec<usize>,
    y: Vec<usize>,
    v: Vec<f64>,
}

impl<'a> Lap<'a> {
    fn new(n: usize, c: &'a [f64]) -> Self {
        Self { n, c, x: vec![NONE; n], y: vec![NONE; n], v: vec![0.0; n] }
    }

    #[inline]
    fn cost(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.n + j]
    }

    fn run(mut self) -> Vec<usize> {
        let mut free = self.column_reduction();
        for _ in 0..2 {
            if free.is_empty() {
                break;
            }
            free = self.augmenting_row_reduction(free);
        }
        for f in free {
            self.augment(f);
        }
        self.x
    }

    /// Column minima give the initial duals; a row keeps the first column it wins.
    fn column_reduction(&mut self) -> Vec<usize> {
        let n = self.n;
        let mut matches = vec![0usize; n];
        for j in (0..n).rev() {
            let mut imin = 0;
            let mut min = self.cost(0, j);
            for i in 1..n {
                let c = self.cost(i, j);
                if c < min {
                    min = c;
                    imin = i;
                }
            }
            self.v[j] = min;
            matches[imin] += 1;
            if matches[imin] == 1 {
                self.x[imin] = j;
                self.y[j] = imin;
            }
        }
        let mut free = Vec::new();
        for i in 0..n {
            if matches[i] == 0 {
                free.push(i);
            }
        }
        free
    }

    fn augmenting_row_reduction(&mut self, free: Vec<usize>) -> Vec<usize> {
        let n = self.n;
        let mut queue = free;
        let mut next = Vec::new();
        let mut k = 0;
        let limit = queue.len() * n.max(1);
        let mut iterations = 0;
        while k < queue.len() {
            let i = queue[k];
            k += 1;
            iterations += 1;
            let (mut u1, mut j1) = (f64::INFINITY, 0);
            let (mut u2, mut j2) = (f64::INFINITY, NONE);
            for j in 0..n {
                let h = self.cost(i, j) - self.v[j];
                if h < u2 {
                    if h < u1 {
                        u2 = u1;
                        j2 = j1;
                        u1 = h;
                        j1 = j;
                    } else {
                        u2 = h;
                        j2 = j;
                    }
                }
            }
            let mut target = j1;
            let mut prev = self.y[j1];
            if u1 < u2 {
                self.v[j1] -= u2 - u1;
            } else if prev != NONE && j2 != NONE {
                target = j2;
                prev = self.y[j2];
            }
            if prev != NONE {
                if u1 < u2 && iterations < limit {
                    k -= 1;
                    queue[k] = prev;
                } else {
                    next.push(prev);
                }
            }
            self.x[i] = target;
            self.y[target] = i;
        }
        next
    }

    /// Dijkstra over reduced costs from `start`, then flips the path.
    fn augment(&mut self, start: usize) {
        let n = self.n;
        let mut d: Vec<f64> = (0..n).map(|j| self.cost(start, j) - self.v[j]).collect();
        let mut pred = vec![start; n];
        // columns: [0, lo) done, [lo, hi) at current minimum, [hi, n) todo
        let mut cols: Vec<usize> = (0..n).collect();
        let (mut lo, mut hi) = (0usize, 0usize);
        let mut last = 0usize;
        let end = 'search: loop {
            if lo == hi {
                last = lo;
                let mut min = d[cols[hi]];
                hi += 1;
                for k in hi..n {
                    let j = cols[k];
                    let dj = d[j];
                    if dj <= min {
                        if dj < min {
                            hi = lo;
                            min = dj;
                        }
                        cols.swap(k, hi);
                        hi += 1;
                    }
                }
                for &j in &cols[lo..hi] {
                    if self.y[j] == NONE {
                        break 'search j;
                    }
                }
            }
            let j1 = cols[lo];
            lo += 1;
            let i = self.y[j1];
            let base = d[j1] - (self.cost(i, j1) - self.v[j1]);
            let mut k = hi;
            while k < n {
                let j = cols[k];
                let h = self.cost(i, j) - self.v[j] + base;
                if h < d[j] {
                    d[j] = h;
                    pred[j] = i;
                    if h == d[j1] {
                        if self.y[j] == NONE {
                            break 'search j;
                        }
                        cols.swap(k, hi);
                        hi += 1;
                    }
                }
                k += 1;
            }
        };
        let min = d[cols[last]];
        for &j in &cols[..last] {
            self.v[j] += d[j] - min;
        }
        let mut j = end;
        loop {
            let i = pred[j];
            self.y[j] = i;
            let prev = self.x[i];
            self.x[i] = j;
            if i == start {
                break;
            }
            j = prev;
        }
    }
}

/// Candidate columns kept per row before dual verification.
pub const CANDIDATES: usize = 24;
const MAX_ROUNDS: usize = 64;

/// Deterministic pseudo-random tie-break key for the pair `(i, j)`, so rows
/// facing many identical columns spread their candidate edges across them.
fn tie(i: usize, j: usize) -> u64 {
    let mut z = ((i as u64) << 32 | j as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Below this many distinct points on one side, the matching is solved as a
/// transportation problem between the distinct points.
pub const MAX_ATOMS: usize = 64;

/// Optimal matching between two point clouds (row-major `n x d` each) under
/// squared Euclidean cost.
///
/// When one cloud has at most [`MAX_ATOMS`] distinct points (samples of a
/// Dirac mixture), solves the equivalent transportation problem exactly and
/// splits the flow into pairs. Otherwise solves on a sparse graph (each row's nearest columns plus the pairing by
/// rank of the first coordinate, so a perfect matching always exists) and then
/// checks the duals against every pair. Rows with a violated pair receive the
/// offending edges and are augmented again; the returned matching is optimal
/// for the full problem.
pub fn solve_points(a: &[f64], b: &[f64], d: usize) -> Result<Assignment> {
    if d == 0 || a.len() != b.len() || a.len() % d != 0 {
        return Err(crate::error::invalid("point clouds must have equal size and matching dimension"));
    }
    let n = a.len() / d;
    if n > MAX_SIZE {
        return Err(Error::SizeLimit { n, limit: MAX_SIZE });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(crate::error::invalid("points must be finite"));
    }
    if n == 0 {
        return Ok(Assignment { row_to_col: Vec::new(), cost: 0.0 });
    }
    let cost = |i: usize, j: usize| -> f64 {
        a[i * d..(i + 1) * d].iter().zip(&b[j * d..(j + 1) * d]).map(|(u, v)| (u - v) * (u - v)).sum()
    };
    let (ga, gb) = (Groups::new(a, d), Groups::new(b, d));
    if ga.len().min(gb.len()) <= MAX_ATOMS {
        return Ok(transport_points(&ga, &gb, &cost));
    }
    Ok(sparse_points(n, d, a, b, CANDIDATES, &cost))
}

fn sparse_points(n: usize, d: usize, a: &[f64], b: &[f64], k: usize, cost: &(dyn Fn(usize, usize) -> f64 + Sync)) -> Assignment {
    let mut graph = candidate_graph(n, k.clamp(1, n), d, a, b, cost);
    let mut lap = SparseLap::new(n);
    lap.column_reduction(&mut graph, cost);
    let mut free = lap.greedy(&graph, cost);
    for _ in 0..MAX_ROUNDS {
        for f in free {
            if !lap.augment(f, &graph, cost) {
                return dense_points(n, cost);
            }
        }
        let violations = lap.violations(cost, k.clamp(1, n));
        if violations.is_empty() {
            let total = crate::stats::compensated_sum(lap.x.iter().enumerate().map(|(i, &j)| cost(i, j)));
            return Assignment { row_to_col: lap.x, cost: total };
        }
        free = Vec::with_capacity(violations.len());
        for (i, cols) in violations {
            graph[i].extend(cols);
            let j = lap.x[i];
            lap.y[j] = NONE;
            lap.x[i] = NONE;
            free.push(i);
        }
    }
    dense_points(n, cost)
}

/// Indices of identical points, grouped; groups ordered lexicographically.
struct Groups {
    members: Vec<Vec<usize>>,
}

impl Groups {
    fn new(p: &[f64], d: usize) -> Self {
        let n = p.len() / d;
        let pt = |i: usize| &p[i * d..(i + 1) * d];
        let lex = |i: &usize, j: &usize| {
            pt(*i).iter().zip(pt(*j)).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        };
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|i, j| lex(i, j).then(i.cmp(j)));
        let mut members: Vec<Vec<usize>> = Vec::new();
        for i in idx {
            match members.last_mut() {
                Some(g) if lex(&g[0], &i).is_eq() => g.push(i),
                _ => members.push(vec![i]),
            }
        }
        Self { members }
    }

    fn len(&self) -> usize {
        self.members.len()
    }
}

/// Successive shortest paths on the transportation problem between the
/// groups of `a` (supplies) and `b` (demands), then one pair per unit of flow.
fn transport_points(ga: &Groups, gb: &Groups, cost: &dyn Fn(usize, usize) -> f64) -> Assignment {
    let (p, q) = (ga.len(), gb.len());
    let c: Vec<f64> = (0..p * q).map(|e| cost(ga.members[e / q][0], gb.members[e % q][0])).collect();
    let mut excess: Vec<usize> = ga.members.iter().map(Vec::len).collect();
    let mut deficit: Vec<usize> = gb.members.iter().map(Vec::len).collect();
    let mut flow = vec![0usize; p * q];
    // Reduced cost of g -> h is c + pi_src[g] - pi_snk[h] >= 0.
    let mut pi_src = vec![0.0; p];
    let mut pi_snk: Vec<f64> = (0..q).map(|h| (0..p).map(|g| c[g * q + h]).fold(f64::INFINITY, f64::min)).collect();
    // Nodes 0..p are sources, p..p+q sinks.
    let mut dist = vec![f64::INFINITY; p + q];
    let mut pred = vec![NONE; p + q];
    let mut done = vec![false; p + q];
    let mut heap = std::collections::BinaryHeap::new();
    let mut remaining: usize = excess.iter().sum();
    while remaining > 0 {
        dist.iter_mut().for_each(|v| *v = f64::INFINITY);
        done.iter_mut().for_each(|v| *v = false);
        heap.clear();
        for g in (0..p).filter(|&g| excess[g] > 0) {
            dist[g] = 0.0;
            pred[g] = NONE;
            heap.push(Item(0.0, g as u32));
        }
        let (sink, reach) = loop {
            let Item(du, u) = heap.pop().expect("a balanced problem always has an augmenting path");
            let u = u as usize;
            if done[u] || du > dist[u] {
                continue;
            }
            done[u] = true;
            if u < p {
                for h in 0..q {
                    let w = du + (c[u * q + h] + pi_src[u] - pi_snk[h]).max(0.0);
                    if w < dist[p + h] {
                        dist[p + h] = w;
                        pred[p + h] = u;
                        heap.push(Item(w, (p + h) as u32));
                    }
                }
            } else {
                let h = u - p;
                if deficit[h] > 0 {
                    break (h, du);
                }
                for g in (0..p).filter(|&g| flow[g * q + h] > 0) {
                    let w = du + (pi_snk[h] - c[g * q + h] - pi_src[g]).max(0.0);
                    if w < dist[g] {
                        dist[g] = w;
                        pred[g] = u;
                        heap.push(Item(w, g as u32));
                    }
                }
            }
        };
        for g in 0..p {
            pi_src[g] += dist[g].min(reach);
        }
        for h in 0..q {
            pi_snk[h] += dist[p + h].min(reach);
        }
        // Bottleneck along the path sink <- g <- h' <- ... <- source.
        let mut amount = deficit[sink];
        let mut v = p + sink;
        loop {
            let g = pred[v];
            match pred[g] {
                NONE => {
                    amount = amount.min(excess[g]);
                    break;
                }
                hv => {
                    amount = amount.min(flow[g * q + (hv - p)]);
                    v = hv;
                }
            }
        }
        let mut v = p + sink;
        loop {
            let g = pred[v];
            flow[g * q + (v - p)] += amount;
            match pred[g] {
                NONE => {
                    excess[g] -= amount;
                    break;
                }
                hv => {
                    flow[g * q + (hv - p)] -= amount;
                    v = hv;
                }
            }
        }
        deficit[sink] -= amount;
        remaining -= amount;
    }

    let n = ga.members.iter().map(Vec::len).sum();
    let mut row_to_col = vec![NONE; n];
    let mut next_col = vec![0usize; q];
    for g in 0..p {
        let mut rows = ga.members[g].iter();
        for h in 0..q {
            for _ in 0..flow[g * q + h] {
                let i = *rows.next().expect("flow out of a group equals its size");
                row_to_col[i] = gb.members[h][next_col[h]];
                next_col[h] += 1;
            }
        }
    }
    let total = crate::stats::compensated_sum(row_to_col.iter().enumerate().map(|(i, &j)| cost(i, j)));
    Assignment { row_to_col, cost: total }
}

fn dense_points(n: usize, cost: &(dyn Fn(usize, usize) -> f64 + Sync)) -> Assignment {
    let m: Vec<f64> = (0..n * n).map(|e| cost(e / n, e % n)).collect();
    solve(n, &m).expect("inputs validated by the caller")
}

fn candidate_graph(
    n: usize,
    k: usize,
    d: usize,
    a: &[f64],
    b: &[f64],
    cost: &(dyn Fn(usize, usize) -> f64 + Sync),
) -> Vec<Vec<u32>> {
    use rayon::prelude::*;
    let mut graph: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |buf: &mut Vec<(f64, u32)>, i| {
                buf.clear();
                buf.extend((0..n).map(|j| (cost(i, j), j as u32)));
                let by = |p: &(f64, u32), q: &(f64, u32)| {
                    p.0.total_cmp(&q.0).then_with(|| tie(i, p.1 as usize).cmp(&tie(i, q.1 as usize)))
                };
                if k < n {
                    buf.select_nth_unstable_by(k - 1, by);
                }
                buf[..k].iter().map(|p| p.1).collect()
            },
        )
        .collect();
    let rank = |p: &[f64]| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| p[i * d].total_cmp(&p[j * d]).then(i.cmp(&j)));
        idx
    };
    for (i, j) in rank(a).into_iter().zip(rank(b)) {
        if !graph[i].contains(&(j as u32)) {
            graph[i].push(j as u32);
        }
    }
    graph
}

#[derive(Clone, Copy, PartialEq)]
struct Item(f64, u32);

impl Eq for Item {}

impl Ord for Item {
    // min-heap on (distance, column)
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}

struct SparseLap {
    x: Vec<usize>,
    y: Vec<usize>,
    v: Vec<f64>,
    dist: Vec<f64>,
    pred: Vec<usize>,
    seen: Vec<u32>,
    done: Vec<u32>,
    stamp: u32,
    heap: std::collections::BinaryHeap<Item>,
    popped: Vec<usize>,
}

impl SparseLap {
    fn new(n: usize) -> Self {
        Self {
            x: vec![NONE; n],
            y: vec![NONE; n],
            v: vec![0.0; n],
            dist: vec![0.0; n],
            pred: vec![0; n],
            seen: vec![0; n],
            done: vec![0; n],
            stamp: 0,
            heap: Default::default(),
            popped: Vec::new(),
        }
    }

    /// Column minima over all rows as starting potentials; each column's
    /// minimising row gets the edge.
    fn column_reduction(&mut self, graph: &mut [Vec<u32>], cost: &(dyn Fn(usize, usize) -> f64 + Sync)) {
        use rayon::prelude::*;
        let n = self.v.len();
        let mins: Vec<(f64, usize)> = (0..n)
            .into_par_iter()
            .map(|j| {
                (0..n)
                    .map(|i| (cost(i, j), i))
                    .min_by(|p, q| p.0.total_cmp(&q.0).then_with(|| tie(p.1, j).cmp(&tie(q.1, j))))
                    .expect("n > 0")
            })
            .collect();
        for (j, (c, i)) in mins.into_iter().enumerate() {
            self.v[j] = c;
            if !graph[i].contains(&(j as u32)) {
                graph[i].push(j as u32);
            }
        }
    }

    /// Each row takes its cheapest candidate if still free; returns the rest.
    fn greedy(&mut self, graph: &[Vec<u32>], cost: &dyn Fn(usize, usize) -> f64) -> Vec<usize> {
        let mut free = Vec::new();
        for (i, cols) in graph.iter().enumerate() {
            let best = cols
                .iter()
                .map(|&j| (cost(i, j as usize) - self.v[j as usize], j as usize))
                .min_by(|p, q| p.0.total_cmp(&q.0).then_with(|| tie(i, p.1).cmp(&tie(i, q.1))))
                .map(|p| p.1)
                .expect("every row has a candidate");
            if self.y[best] == NONE {
                self.x[i] = best;
                self.y[best] = i;
            } else {
                free.push(i);
            }
        }
        free
    }

    fn relax(&mut self, j: usize, d: f64, i: usize) {
        if self.done[j] == self.stamp {
            return;
        }
        if self.seen[j] != self.stamp || d < self.dist[j] {
            self.seen[j] = self.stamp;
            self.dist[j] = d;
            self.pred[j] = i;
            self.heap.push(Item(d, j as u32));
        }
    }

    /// Dijkstra over reduced costs from the free row `s`; false if no free
    /// column is reachable.
    fn augment(&mut self, s: usize, graph: &[Vec<u32>], cost: &dyn Fn(usize, usize) -> f64) -> bool {
        self.stamp += 1;
        self.heap.clear();
        self.popped.clear();
        for &j in &graph[s] {
            let j = j as usize;
            self.relax(j, cost(s, j) - self.v[j], s);
        }
        let (sink, reach) = loop {
            let Some(Item(d, j)) = self.heap.pop() else {
                return false;
            };
            let j = j as usize;
            if self.done[j] == self.stamp || d > self.dist[j] {
                continue;
            }
            self.done[j] = self.stamp;
            self.popped.push(j);
            let i = self.y[j];
            if i == NONE {
                break (j, d);
            }
            let base = d - (cost(i, j) - self.v[j]);
            for &k in &graph[i] {
                let k = k as usize;
                self.relax(k, base + cost(i, k) - self.v[k], i);
            }
        };
        for &j in &self.popped {
            self.v[j] += self.dist[j] - reach;
        }
        let mut j = sink;
        loop {
            let i = self.pred[j];
            self.y[j] = i;
            let prev = self.x[i];
            self.x[i] = j;
            if i == s {
                break;
            }
            j = prev;
        }
        true
    }

    /// Up to `limit` most negative reduced costs per row, beyond rounding.
    fn violations(&self, cost: &(dyn Fn(usize, usize) -> f64 + Sync), limit: usize) -> Vec<(usize, Vec<u32>)> {
        use rayon::prelude::*;
        let n = self.x.len();
        let scale = 1.0 + (0..n).map(|i| cost(i, self.x[i])).fold(0.0, f64::max);
        let tol = 1e-11 * scale;
        (0..n)
            .into_par_iter()
            .filter_map(|i| {
                let u = cost(i, self.x[i]) - self.v[self.x[i]];
                let mut bad: Vec<(f64, u32)> =
                    (0..n).map(|j| (cost(i, j) - self.v[j] - u, j as u32)).filter(|p| p.0 < -tol).collect();
                if bad.len() > limit {
                    bad.select_nth_unstable_by(limit - 1, |p, q| {
                        p.0.total_cmp(&q.0).then_with(|| tie(i, p.1 as usize).cmp(&tie(i, q.1 as usize)))
                    });
                    bad.truncate(limit);
                }
                (!bad.is_empty()).then(|| (i, bad.into_iter().map(|p| p.1).collect()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(n: usize, c: &[f64]) -> f64 {
        fn rec(n: usize, c: &[f64], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(n, c, row + 1, used, acc + c[row * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(n, c, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    fn sparse(a: &[f64], b: &[f64], d: usize, k: usize) -> Result<Assignment> {
        let n = a.len() / d;
        let cost = |i: usize, j: usize| -> f64 {
            a[i * d..(i + 1) * d].iter().zip(&b[j * d..(j + 1) * d]).map(|(u, v)| (u - v) * (u - v)).sum()
        };
        Ok(sparse_points(n, d, a, b, k, &cost))
    }

    fn is_permutation(p: &[usize]) -> bool {
        let mut seen = vec![false; p.len()];
        p.iter().all(|&j| j < p.len() && !std::mem::replace(&mut seen[j], true))
    }

    #[test]
    fn small_examples() {
        let a = solve(2, &[1.0, 2.0, 2.0, 1.0]).unwrap();
        assert_eq!(a.row_to_col, vec![0, 1]);
        assert_eq!(a.cost, 2.0);
        let b = solve(3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]).unwrap();
        assert_eq!(b.cost, 5.0);
        assert!(solve(0, &[]).unwrap().row_to_col.is_empty());
        assert_eq!(solve(1, &[3.5]).unwrap().cost, 3.5);
    }

    #[test]
    fn all_ties() {
        let a = solve(5, &[1.0; 25]).unwrap();
        assert!(is_permutation(&a.row_to_col));
        assert_eq!(a.cost, 5.0);
    }

    #[test]
    fn size_limit_and_bad_input() {
        assert!(matches!(solve(MAX_SIZE + 1, &[]), Err(Error::SizeLimit { .. })));
        assert!(solve(2, &[1.0; 3]).is_err());
        assert!(solve(1, &[f64::NAN]).is_err());
    }

    fn points_cost(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
        let n = a.len() / d;
        (0..n * n)
            .map(|e| {
                let (i, j) = (e / n, e % n);
                (0..d).map(|k| (a[i * d + k] - b[j * d + k]).powi(2)).sum()
            })
            .collect()
    }

    #[test]
    fn sparse_handles_cluster_imbalance() {
        // 30 of 40 sources near +1 but only 10 targets there: paths cross clusters
        let a: Vec<f64> = (0..40).map(|i| if i < 30 { 1.0 + 0.01 * i as f64 } else { -1.0 - 0.01 * i as f64 }).collect();
        let b: Vec<f64> = (0..40).map(|i| if i < 10 { 1.0 + 0.013 * i as f64 } else { -1.0 - 0.007 * i as f64 }).collect();
        let s = sparse(&a, &b, 1, 2).unwrap();
        let dense = solve(40, &points_cost(&a, &b, 1)).unwrap();
        assert!((s.cost - dense.cost).abs() < 1e-12 * (1.0 + dense.cost));
        let mut x = a.clone();
        let mut y = b.clone();
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        let sorted: f64 = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum();
        assert!((s.cost - sorted).abs() < 1e-12 * (1.0 + sorted));
    }

    #[test]
    fn transport_matches_dense_on_atoms() {
        let a: Vec<f64> = (0..90).map(|i| [-1.0, 0.5, 2.0][i % 3]).collect();
        let b: Vec<f64> = (0..90).map(|i| ((i * 37) % 90) as f64 / 30.0 - 1.5).collect();
        let s = solve_points(&a, &b, 1).unwrap();
        let dense = solve(90, &points_cost(&a, &b, 1)).unwrap();
        assert!(is_permutation(&s.row_to_col));
        assert!((s.cost - dense.cost).abs() < 1e-10 * (1.0 + dense.cost));
        // atoms on the column side, and on both sides
        let t = solve_points(&b, &a, 1).unwrap();
        assert!((t.cost - dense.cost).abs() < 1e-10 * (1.0 + dense.cost));
        let c: Vec<f64> = (0..90).map(|i| [0.0, 3.0][i % 2]).collect();
        let u = solve_points(&a, &c, 1).unwrap();
        let dense = solve(90, &points_cost(&a, &c, 1)).unwrap();
        assert!((u.cost - dense.cost).abs() < 1e-10 * (1.0 + dense.cost));
    }

    #[test]
    fn sparse_handles_duplicated_points() {
        // 100 distinct sources, each repeated three times: too many atoms for
        // the transport path, so the sparse solver sees heavy ties
        let n = 300;
        let a: Vec<f64> = (0..n).flat_map(|i| {
            let k = (i % 100) as f64;
            [(0.37 * k).sin(), (0.91 * k).cos()]
        }).collect();
        let b: Vec<f64> = (0..2 * n).map(|e| ((e * 7919) % 1000) as f64 / 400.0 - 1.25).collect();
        let s = sparse(&a, &b, 2, 4).unwrap();
        let dense = solve(n, &points_cost(&a, &b, 2)).unwrap();
        assert!(is_permutation(&s.row_to_col));
        assert!((s.cost - dense.cost).abs() < 1e-10 * (1.0 + dense.cost));
    }

    proptest! {
        #[test]
        fn transport_matches_dense(n in 1usize..40, atoms in 1usize..6, d in 1usize..3, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let support: Vec<f64> = (0..atoms * d).map(|_| r.random::<f64>()).collect();
            let a: Vec<f64> = (0..n).flat_map(|_| {
                let k = r.random_range(0..atoms);
                support[k * d..(k + 1) * d].to_vec()
            }).collect();
            let b: Vec<f64> = (0..n * d).map(|_| 2.0 * r.random::<f64>() - 0.5).collect();
            let s = solve_points(&a, &b, d).unwrap();
            let dense = solve(n, &points_cost(&a, &b, d)).unwrap();
            prop_assert!(is_permutation(&s.row_to_col));
            prop_assert!((s.cost - dense.cost).abs() < 1e-10 * (1.0 + dense.cost));
            let t = solve_points(&b, &a, d).unwrap();
            prop_assert!((t.cost - dense.cost).abs() < 1e-10 * (1.0 + dense.cost));
        }
    }

    proptest! {
        #[test]
        fn sparse_matches_dense(n in 1usize..40, d in 1usize..4, k in 1usize..5, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..n * d).map(|_| r.random::<f64>()).collect();
            let b: Vec<f64> = (0..n * d).map(|_| 2.0 * r.random::<f64>() - 0.5).collect();
            let s = sparse(&a, &b, d, k).unwrap();
            let dense = solve(n, &points_cost(&a, &b, d)).unwrap();
            prop_assert!(is_permutation(&s.row_to_col));
            prop_assert!((s.cost - dense.cost).abs() < 1e-10 * (1.0 + dense.cost));
        }
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..7, seed in any::<u64>(), int in any::<bool>()) {
            use rand::{Rng, SeedableRng};
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c: Vec<f64> = (0..n * n)
                .map(|_| if int { r.random_range(0..4) as f64 } else { r.random::<f64>() })
                .collect();
            let a = solve(n, &c).unwrap();
            prop_assert!(is_permutation(&a.row_to_col));
            prop_assert!((a.cost - brute(n, &c)).abs() < 1e-12);
        }
    }
}
