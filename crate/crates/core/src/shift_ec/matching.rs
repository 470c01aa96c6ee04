//! Exact minimum-weight perfect matching.
//!
//! [`max_weight_matching`] is Edmonds' primal-dual blossom algorithm in the
//! O(n³) formulation popularised by Van Rantwijk's reference implementation.
//! Weights are integers, so every comparison is exact and the optimum can be
//! checked for equality against [`brute_force_matching`].

use crate::error::{Error, Result};

/// Maximum-weight matching on a general graph with integer edge weights.
///
/// With `max_cardinality` the result is the heaviest matching among those of
/// maximum size. Returns `mate[v]` for every vertex.
pub fn max_weight_matching(n_vertices: usize, edges: &[(usize, usize, i64)], max_cardinality: bool) -> Vec<Option<usize>> {
    if edges.is_empty() {
        return vec![None; n_vertices];
    }
    let mut m = Blossom::new(n_vertices, edges);
    m.solve(max_cardinality);
    m.mate
        .iter()
        .map(|&p| if p >= 0 { Some(m.endpoint[p as usize]) } else { None })
        .collect()
}

struct Blossom<'a> {
    edges: &'a [(usize, usize, i64)],
    nv: usize,
    endpoint: Vec<usize>,
    neighbend: Vec<Vec<usize>>,
    mate: Vec<isize>,
    label: Vec<i8>,
    labelend: Vec<isize>,
    inblossom: Vec<usize>,
    parent: Vec<isize>,
    childs: Vec<Vec<usize>>,
    base: Vec<isize>,
    endps: Vec<Vec<usize>>,
    bestedge: Vec<isize>,
    bestedges: Vec<Option<Vec<usize>>>,
    unused: Vec<usize>,
    dual: Vec<i64>,
    allowedge: Vec<bool>,
    queue: Vec<usize>,
}

fn wrap(j: isize, len: usize) -> usize {
    j.rem_euclid(len as isize) as usize
}

impl<'a> Blossom<'a> {
    fn new(nv: usize, edges: &'a [(usize, usize, i64)]) -> Self {
        let maxw = edges.iter().map(|e| e.2).max().unwrap_or(0).max(0);
        let mut endpoint = Vec::with_capacity(2 * edges.len());
        let mut neighbend = vec![Vec::new(); nv];
        for (k, &(i, j, _)) in edges.iter().enumerate() {
            endpoint.push(i);
            endpoint.push(j);
            neighbend[i].push(2 * k + 1);
            neighbend[j].push(2 * k);
        }
        let mut dual = vec![maxw; nv];
        dual.extend(std::iter::repeat(0).take(nv));
        Self {
            edges,
            nv,
            endpoint,
            neighbend,
            mate: vec![-1; nv],
            label: vec![0; 2 * nv],
            labelend: vec![-1; 2 * nv],
            inblossom: (0..nv).collect(),
            parent: vec![-1; 2 * nv],
            childs: vec![Vec::new(); 2 * nv],
            base: (0..nv as isize).chain(std::iter::repeat(-1).take(nv)).collect(),
            endps: vec![Vec::new(); 2 * nv],
            bestedge: vec![-1; 2 * nv],
            bestedges: vec![None; 2 * nv],
            unused: (nv..2 * nv).collect(),
            dual,
            allowedge: vec![false; edges.len()],
            queue: Vec::new(),
        }
    }

    fn slack(&self, k: usize) -> i64 {
        let (i, j, w) = self.edges[k];
        self.dual[i] + self.dual[j] - 2 * w
    }

    fn leaves(&self, b: usize, out: &mut Vec<usize>) {
        if b < self.nv {
            out.push(b);
        } else {
            for &t in &self.childs[b] {
                self.leaves(t, out);
            }
        }
    }

    fn leaves_of(&self, b: usize) -> Vec<usize> {
        let mut out = Vec::new();
        self.leaves(b, &mut out);
        out
    }

    fn assign_label(&mut self, w: usize, t: i8, p: isize) {
        let b = self.inblossom[w];
        self.label[w] = t;
        self.label[b] = t;
        self.labelend[w] = p;
        self.labelend[b] = p;
        self.bestedge[w] = -1;
        self.bestedge[b] = -1;
        if t == 1 {
            let l = self.leaves_of(b);
            self.queue.extend(l);
        } else if t == 2 {
            let base = self.base[b] as usize;
            let mb = self.mate[base];
            self.assign_label(self.endpoint[mb as usize], 1, mb ^ 1);
        }
    }

    /// Trace back from `v` and `w`; returns the base of a new blossom or -1
    /// when the two alternating paths reach different roots.
    fn scan_blossom(&mut self, v: usize, w: usize) -> isize {
        let mut path = Vec::new();
        let mut base = -1;
        let (mut v, mut w) = (v as isize, w as isize);
        while v != -1 || w != -1 {
            let mut b = self.inblossom[v as usize];
            if self.label[b] & 4 != 0 {
                base = self.base[b];
                break;
            }
            path.push(b);
            self.label[b] = 5;
            if self.labelend[b] == -1 {
                v = -1;
            } else {
                v = self.endpoint[self.labelend[b] as usize] as isize;
                b = self.inblossom[v as usize];
                v = self.endpoint[self.labelend[b] as usize] as isize;
            }
            if w != -1 {
                std::mem::swap(&mut v, &mut w);
            }
        }
        for b in path {
            self.label[b] = 1;
        }
        base
    }

    fn add_blossom(&mut self, base: usize, k: usize) {
        let (mut v, mut w, _) = self.edges[k];
        let bb = self.inblossom[base];
        let mut bv = self.inblossom[v];
        let mut bw = self.inblossom[w];
        let b = self.unused.pop().expect("blossom slots available");
        self.base[b] = base as isize;
        self.parent[b] = -1;
        self.parent[bb] = b as isize;
        let mut path = Vec::new();
        let mut endps = Vec::new();
        while bv != bb {
            self.parent[bv] = b as isize;
            path.push(bv);
            endps.push(self.labelend[bv] as usize);
            v = self.endpoint[self.labelend[bv] as usize];
            bv = self.inblossom[v];
        }
        path.push(bb);
        path.reverse();
        endps.reverse();
        endps.push(2 * k);
        while bw != bb {
            self.parent[bw] = b as isize;
            path.push(bw);
            endps.push((self.labelend[bw] ^ 1) as usize);
            w = self.endpoint[self.labelend[bw] as usize];
            bw = self.inblossom[w];
        }
        self.childs[b] = path.clone();
        self.endps[b] = endps;
        self.label[b] = 1;
        self.labelend[b] = self.labelend[bb];
        self.dual[b] = 0;
        for leaf in self.leaves_of(b) {
            if self.label[self.inblossom[leaf]] == 2 {
                self.queue.push(leaf);
            }
            self.inblossom[leaf] = b;
        }
        let mut bestedgeto = vec![-1isize; 2 * self.nv];
        for &sub in &path {
            let lists: Vec<Vec<usize>> = match self.bestedges[sub].take() {
                Some(l) => vec![l],
                None => self
                    .leaves_of(sub)
                    .into_iter()
                    .map(|leaf| self.neighbend[leaf].iter().map(|p| p / 2).collect())
                    .collect(),
            };
            for list in lists {
                for k in list {
                    let (mut i, mut j, _) = self.edges[k];
                    if self.inblossom[j] == b {
                        std::mem::swap(&mut i, &mut j);
                    }
                    let _ = i;
                    let bj = self.inblossom[j];
                    if bj != b
                        && self.label[bj] == 1
                        && (bestedgeto[bj] == -1 || self.slack(k) < self.slack(bestedgeto[bj] as usize))
                    {
                        bestedgeto[bj] = k as isize;
                    }
                }
            }
            self.bestedge[sub] = -1;
        }
        let best: Vec<usize> = bestedgeto.into_iter().filter(|&k| k != -1).map(|k| k as usize).collect();
        self.bestedge[b] = -1;
        for &k in &best {
            if self.bestedge[b] == -1 || self.slack(k) < self.slack(self.bestedge[b] as usize) {
                self.bestedge[b] = k as isize;
            }
        }
        self.bestedges[b] = Some(best);
    }

    fn expand_blossom(&mut self, b: usize, endstage: bool) {
        let childs = self.childs[b].clone();
        for &s in &childs {
            self.parent[s] = -1;
            if s < self.nv {
                self.inblossom[s] = s;
            } else if endstage && self.dual[s] == 0 {
                self.expand_blossom(s, endstage);
            } else {
                for leaf in self.leaves_of(s) {
                    self.inblossom[leaf] = s;
                }
            }
        }
        if !endstage && self.label[b] == 2 {
            let endps = self.endps[b].clone();
            let len = childs.len();
            let entrychild = self.inblossom[self.endpoint[(self.labelend[b] ^ 1) as usize]];
            let mut j = childs.iter().position(|&c| c == entrychild).expect("entry child") as isize;
            let (jstep, trick): (isize, usize) = if j & 1 == 1 {
                j -= len as isize;
                (1, 0)
            } else {
                (-1, 1)
            };
            let mut p = self.labelend[b];
            while j != 0 {
                let q = self.endpoint[(p ^ 1) as usize];
                self.label[q] = 0;
                let e = endps[wrap(j - trick as isize, len)];
                self.label[self.endpoint[e ^ trick ^ 1]] = 0;
                self.assign_label(q, 2, p);
                self.allowedge[e / 2] = true;
                j += jstep;
                p = (endps[wrap(j - trick as isize, len)] ^ trick) as isize;
                self.allowedge[(p / 2) as usize] = true;
                j += jstep;
            }
            let bv = childs[wrap(j, len)];
            let q = self.endpoint[(p ^ 1) as usize];
            self.label[q] = 2;
            self.label[bv] = 2;
            self.labelend[q] = p;
            self.labelend[bv] = p;
            self.bestedge[bv] = -1;
            j += jstep;
            while childs[wrap(j, len)] != entrychild {
                let bv = childs[wrap(j, len)];
                if self.label[bv] == 1 {
                    j += jstep;
                    continue;
                }
                if let Some(v) = self.leaves_of(bv).into_iter().find(|&v| self.label[v] != 0) {
                    self.label[v] = 0;
                    let mb = self.mate[self.base[bv] as usize];
                    self.label[self.endpoint[mb as usize]] = 0;
                    self.assign_label(v, 2, self.labelend[v]);
                }
                j += jstep;
            }
        }
        self.label[b] = -1;
        self.labelend[b] = -1;
        self.childs[b].clear();
        self.endps[b].clear();
        self.base[b] = -1;
        self.bestedges[b] = None;
        self.bestedge[b] = -1;
        self.unused.push(b);
    }

    fn augment_blossom(&mut self, b: usize, v: usize) {
        let mut t = v;
        while self.parent[t] != b as isize {
            t = self.parent[t] as usize;
        }
        if t >= self.nv {
            self.augment_blossom(t, v);
        }
        let len = self.childs[b].len();
        let i = self.childs[b].iter().position(|&c| c == t).expect("child of blossom");
        let mut j = i as isize;
        let (jstep, trick): (isize, usize) = if i & 1 == 1 {
            j -= len as isize;
            (1, 0)
        } else {
            (-1, 1)
        };
        while j != 0 {
            j += jstep;
            let t = self.childs[b][wrap(j, len)];
            let p = self.endps[b][wrap(j - trick as isize, len)] ^ trick;
            if t >= self.nv {
                self.augment_blossom(t, self.endpoint[p]);
            }
            j += jstep;
            let t = self.childs[b][wrap(j, len)];
            if t >= self.nv {
                self.augment_blossom(t, self.endpoint[p ^ 1]);
            }
            self.mate[self.endpoint[p]] = (p ^ 1) as isize;
            self.mate[self.endpoint[p ^ 1]] = p as isize;
        }
        self.childs[b].rotate_left(i);
        self.endps[b].rotate_left(i);
        self.base[b] = self.base[self.childs[b][0]];
        debug_assert_eq!(self.base[b], v as isize);
    }

    fn augment_matching(&mut self, k: usize) {
        let (v, w, _) = self.edges[k];
        for (mut s, mut p) in [(v, 2 * k + 1), (w, 2 * k)] {
            loop {
                let bs = self.inblossom[s];
                if bs >= self.nv {
                    self.augment_blossom(bs, s);
                }
                self.mate[s] = p as isize;
                if self.labelend[bs] == -1 {
                    break;
                }
                let t = self.endpoint[self.labelend[bs] as usize];
                let bt = self.inblossom[t];
                s = self.endpoint[self.labelend[bt] as usize];
                let j = self.endpoint[(self.labelend[bt] ^ 1) as usize];
                if bt >= self.nv {
                    self.augment_blossom(bt, j);
                }
                self.mate[j] = self.labelend[bt];
                p = (self.labelend[bt] ^ 1) as usize;
            }
        }
    }

    fn solve(&mut self, max_cardinality: bool) {
        let nv = self.nv;
        for _ in 0..nv {
            self.label.iter_mut().for_each(|l| *l = 0);
            self.bestedge.iter_mut().for_each(|e| *e = -1);
            for b in nv..2 * nv {
                self.bestedges[b] = None;
            }
            self.allowedge.iter_mut().for_each(|a| *a = false);
            self.queue.clear();
            for v in 0..nv {
                if self.mate[v] == -1 && self.label[self.inblossom[v]] == 0 {
                    self.assign_label(v, 1, -1);
                }
            }
            let mut augmented = false;
            loop {
                while let Some(v) = if augmented { None } else { self.queue.pop() } {
                    for idx in 0..self.neighbend[v].len() {
                        let p = self.neighbend[v][idx];
                        let k = p / 2;
                        let w = self.endpoint[p];
                        if self.inblossom[v] == self.inblossom[w] {
                            continue;
                        }
                        let mut kslack = 0;
                        if !self.allowedge[k] {
                            kslack = self.slack(k);
                            if kslack <= 0 {
                                self.allowedge[k] = true;
                            }
                        }
                        if self.allowedge[k] {
                            if self.label[self.inblossom[w]] == 0 {
                                self.assign_label(w, 2, (p ^ 1) as isize);
                            } else if self.label[self.inblossom[w]] == 1 {
                                let base = self.scan_blossom(v, w);
                                if base >= 0 {
                                    self.add_blossom(base as usize, k);
                                } else {
                                    self.augment_matching(k);
                                    augmented = true;
                                    break;
                                }
                            } else if self.label[w] == 0 {
                                self.label[w] = 2;
                                self.labelend[w] = (p ^ 1) as isize;
                            }
                        } else if self.label[self.inblossom[w]] == 1 {
                            let b = self.inblossom[v];
                            if self.bestedge[b] == -1 || kslack < self.slack(self.bestedge[b] as usize) {
                                self.bestedge[b] = k as isize;
                            }
                        } else if self.label[w] == 0
                            && (self.bestedge[w] == -1 || kslack < self.slack(self.bestedge[w] as usize))
                        {
                            self.bestedge[w] = k as isize;
                        }
                    }
                }
                if augmented {
                    break;
                }
                // Dual update: pick the smallest admissible step.
                let mut deltatype = -1;
                let mut delta = 0i64;
                let mut deltaedge = 0usize;
                let mut deltablossom = 0usize;
                if !max_cardinality {
                    deltatype = 1;
                    delta = *self.dual[..nv].iter().min().expect("non-empty");
                }
                for v in 0..nv {
                    if self.label[self.inblossom[v]] == 0 && self.bestedge[v] != -1 {
                        let d = self.slack(self.bestedge[v] as usize);
                        if deltatype == -1 || d < delta {
                            delta = d;
                            deltatype = 2;
                            deltaedge = self.bestedge[v] as usize;
                        }
                    }
                }
                for b in 0..2 * nv {
                    if self.parent[b] == -1 && self.label[b] == 1 && self.bestedge[b] != -1 {
                        let kslack = self.slack(self.bestedge[b] as usize);
                        debug_assert_eq!(kslack % 2, 0);
                        let d = kslack / 2;
                        if deltatype == -1 || d < delta {
                            delta = d;
                            deltatype = 3;
                            deltaedge = self.bestedge[b] as usize;
                        }
                    }
                }
                for b in nv..2 * nv {
                    if self.base[b] >= 0
                        && self.parent[b] == -1
                        && self.label[b] == 2
                        && (deltatype == -1 || self.dual[b] < delta)
                    {
                        delta = self.dual[b];
                        deltatype = 4;
                        deltablossom = b;
                    }
                }
                if deltatype == -1 {
                    deltatype = 1;
                    delta = (*self.dual[..nv].iter().min().expect("non-empty")).max(0);
                }
                for v in 0..nv {
                    match self.label[self.inblossom[v]] {
                        1 => self.dual[v] -= delta,
                        2 => self.dual[v] += delta,
                        _ => {}
                    }
                }
                for b in nv..2 * nv {
                    if self.base[b] >= 0 && self.parent[b] == -1 {
                        match self.label[b] {
                            1 => self.dual[b] += delta,
                            2 => self.dual[b] -= delta,
                            _ => {}
                        }
                    }
                }
                match deltatype {
                    1 => break,
                    2 => {
                        self.allowedge[deltaedge] = true;
                        let (mut i, j, _) = self.edges[deltaedge];
                        if self.label[self.inblossom[i]] == 0 {
                            i = j;
                        }
                        self.queue.push(i);
                    }
                    3 => {
                        self.allowedge[deltaedge] = true;
                        let (i, _, _) = self.edges[deltaedge];
                        self.queue.push(i);
                    }
                    _ => self.expand_blossom(deltablossom, false),
                }
            }
            if !augmented {
                break;
            }
            for b in nv..2 * nv {
                if self.parent[b] == -1 && self.base[b] >= 0 && self.label[b] == 1 && self.dual[b] == 0 {
                    self.expand_blossom(b, true);
                }
            }
        }
    }
}

/// A perfect matching of defects where any defect may instead pair with the
/// boundary.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DefectMatching {
    pub pairs: Vec<(usize, usize)>,
    pub to_boundary: Vec<usize>,
    pub cost: i64,
}

fn check_costs(pair: &[Vec<i64>], boundary: &[i64]) -> Result<usize> {
    let k = boundary.len();
    if pair.len() != k || pair.iter().any(|r| r.len() != k) {
        return Err(Error::invalid("pair cost matrix must be square and match the boundary costs"));
    }
    if boundary.iter().chain(pair.iter().flatten()).any(|&c| c < 0) {
        return Err(Error::invalid("matching costs must be non-negative"));
    }
    Ok(k)
}

/// Minimum-cost matching of `k` defects with per-defect boundary costs.
///
/// Each defect gets a private boundary copy; copies pair with each other for
/// free, so the reduction to a perfect matching on `2k` vertices is exact.
pub fn min_weight_matching(pair: &[Vec<i64>], boundary: &[i64]) -> Result<DefectMatching> {
    let k = check_costs(pair, boundary)?;
    if k == 0 {
        return Ok(DefectMatching::default());
    }
    let top = pair.iter().flatten().chain(boundary).copied().max().unwrap_or(0) + 1;
    let mut edges = Vec::with_capacity(k * k + k);
    for i in 0..k {
        for j in i + 1..k {
            edges.push((i, j, top - pair[i][j]));
            edges.push((k + i, k + j, top));
        }
        edges.push((i, k + i, top - boundary[i]));
    }
    let mate = max_weight_matching(2 * k, &edges, true);
    let mut out = DefectMatching::default();
    for i in 0..k {
        match mate[i] {
            Some(j) if j < k => {
                if i < j {
                    out.pairs.push((i, j));
                    out.cost += pair[i][j];
                }
            }
            Some(j) if j == k + i => {
                out.to_boundary.push(i);
                out.cost += boundary[i];
            }
            _ => return Err(Error::Numerical(format!("matcher left defect {i} unpaired"))),
        }
    }
    Ok(out)
}

/// Exhaustive enumeration of all defect pairings; exponential, for checking.
pub fn brute_force_matching(pair: &[Vec<i64>], boundary: &[i64]) -> Result<DefectMatching> {
    let k = check_costs(pair, boundary)?;
    fn go(left: &mut Vec<usize>, pair: &[Vec<i64>], boundary: &[i64], cur: &mut DefectMatching, best: &mut Option<DefectMatching>) {
        if best.as_ref().is_some_and(|b| cur.cost >= b.cost) && !left.is_empty() {
            // Costs are non-negative, so a partial solution this expensive cannot win.
            return;
        }
        let Some(i) = left.pop() else {
            if best.as_ref().map_or(true, |b| cur.cost < b.cost) {
                *best = Some(cur.clone());
            }
            return;
        };
        cur.to_boundary.push(i);
        cur.cost += boundary[i];
        go(left, pair, boundary, cur, best);
        cur.cost -= boundary[i];
        cur.to_boundary.pop();
        for idx in 0..left.len() {
            let j = left.remove(idx);
            cur.pairs.push((i.min(j), i.max(j)));
            cur.cost += pair[i][j];
            go(left, pair, boundary, cur, best);
            cur.cost -= pair[i][j];
            cur.pairs.pop();
            left.insert(idx, j);
        }
        left.push(i);
    }
    let mut left: Vec<usize> = (0..k).rev().collect();
    let mut best = None;
    go(&mut left, pair, boundary, &mut DefectMatching::default(), &mut best);
    Ok(best.expect("at least the all-boundary matching exists"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, k: usize) -> (Vec<Vec<i64>>, Vec<i64>) {
        let mut pair = vec![vec![0; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let c = rng.gen_range(0..60);
                pair[i][j] = c;
                pair[j][i] = c;
            }
        }
        let boundary = (0..k).map(|_| rng.gen_range(0..60)).collect();
        (pair, boundary)
    }

    #[test]
    fn small_graph_by_hand() {
        // Path 0-1-2-3 with a heavy middle edge: the max-weight matching takes it alone.
        let mate = max_weight_matching(4, &[(0, 1, 2), (1, 2, 5), (2, 3, 2)], false);
        assert_eq!(mate, vec![None, Some(2), Some(1), None]);
        let mate = max_weight_matching(4, &[(0, 1, 2), (1, 2, 5), (2, 3, 2)], true);
        assert_eq!(mate, vec![Some(1), Some(0), Some(3), Some(2)]);
    }

    #[test]
    fn odd_cycle_needs_a_blossom() {
        // Triangle 0-1-2 with a pendant 3 on vertex 2; perfect matching must use 2-3.
        let edges = [(0, 1, 6), (1, 2, 10), (0, 2, 10), (2, 3, 1)];
        let mate = max_weight_matching(4, &edges, true);
        assert_eq!(mate[2], Some(3));
        assert_eq!(mate[0], Some(1));
    }

    #[test]
    fn adjacent_defects_pair_when_cheaper() {
        let m = min_weight_matching(&[vec![0, 3], vec![3, 0]], &[2, 2]).unwrap();
        assert_eq!(m.pairs, vec![(0, 1)]);
        let m = min_weight_matching(&[vec![0, 5], vec![5, 0]], &[2, 2]).unwrap();
        assert_eq!(m.to_boundary, vec![0, 1]);
        assert_eq!(min_weight_matching(&[], &[]).unwrap(), DefectMatching::default());
    }

    #[test]
    fn agrees_with_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..300 {
            let k = case % 11;
            let (pair, boundary) = random_instance(&mut rng, k);
            let fast = min_weight_matching(&pair, &boundary).unwrap();
            let slow = brute_force_matching(&pair, &boundary).unwrap();
            assert_eq!(fast.cost, slow.cost, "case {case}: {pair:?} {boundary:?}");
        }
    }

    #[test]
    fn rejects_bad_costs() {
        assert!(min_weight_matching(&[vec![0]], &[-1]).is_err());
        assert!(min_weight_matching(&[vec![0, 1]], &[1, 1]).is_err());
    }
}
