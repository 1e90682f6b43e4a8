//! Layered navigable proximity graph for approximate k-NN.
//!
//! Points are inserted one at a time in index order. Each point draws a top
//! layer from a geometric distribution, is linked on every layer it occupies
//! to neighbors chosen by the diversity heuristic, and neighbor lists that
//! overflow are re-pruned with the same heuristic.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Distance plus point index, ordered by distance then index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub dist: f64,
    pub idx: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GraphParams {
    pub max_degree: usize,
    pub ef_construction: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct ProximityGraph {
    /// links[node][layer]
    links: Vec<Vec<Vec<usize>>>,
    entry: usize,
    top_layer: usize,
    max_degree: usize,
}

/// Visited-set with O(1) reset.
struct Visited {
    stamp: Vec<u32>,
    current: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            stamp: vec![0; n],
            current: 0,
        }
    }

    fn reset(&mut self) {
        self.current = self.current.wrapping_add(1);
        if self.current == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.current = 1;
        }
    }

    /// Returns true the first time `i` is seen since the last reset.
    fn insert(&mut self, i: usize) -> bool {
        if self.stamp[i] == self.current {
            false
        } else {
            self.stamp[i] = self.current;
            true
        }
    }
}

impl ProximityGraph {
    fn degree_cap(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.max_degree
        } else {
            self.max_degree
        }
    }

    pub fn build(n: usize, params: &GraphParams, dist: impl Fn(usize, usize) -> f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let level_mult = 1.0 / (params.max_degree.max(2) as f64).ln();
        let mut graph = ProximityGraph {
            links: Vec::with_capacity(n),
            entry: 0,
            top_layer: 0,
            max_degree: params.max_degree,
        };
        let mut visited = Visited::new(n);
        for node in 0..n {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let level = (-u.ln() * level_mult).floor() as usize;
            graph.links.push(vec![Vec::new(); level + 1]);
            if node == 0 {
                graph.entry = 0;
                graph.top_layer = level;
                continue;
            }
            let to_node = |other: usize| dist(node, other);
            let mut ep = Candidate {
                dist: to_node(graph.entry),
                idx: graph.entry,
            };
            for layer in (level + 1..=graph.top_layer).rev() {
                ep = graph.greedy(&to_node, ep, layer);
            }
            let mut entries = vec![ep];
            for layer in (0..=level.min(graph.top_layer)).rev() {
                let found = graph.search_layer(&to_node, &entries, params.ef_construction, layer, &mut visited);
                let chosen = select_diverse(&found, params.max_degree, &dist);
                graph.links[node][layer] = chosen.iter().map(|c| c.idx).collect();
                for c in &chosen {
                    graph.links[c.idx][layer].push(node);
                    let cap = graph.degree_cap(layer);
                    if graph.links[c.idx][layer].len() > cap {
                        let owner = c.idx;
                        let mut cands: Vec<Candidate> = graph.links[owner][layer]
                            .iter()
                            .map(|&j| Candidate {
                                dist: dist(owner, j),
                                idx: j,
                            })
                            .collect();
                        cands.sort();
                        graph.links[owner][layer] =
                            select_diverse(&cands, cap, &dist).iter().map(|c| c.idx).collect();
                    }
                }
                entries = found;
            }
            if level > graph.top_layer {
                graph.top_layer = level;
                graph.entry = node;
            }
        }
        graph
    }

    fn greedy(&self, to_query: &impl Fn(usize) -> f64, mut best: Candidate, layer: usize) -> Candidate {
        loop {
            let mut improved = false;
            for &j in &self.links[best.idx][layer] {
                let c = Candidate {
                    dist: to_query(j),
                    idx: j,
                };
                if c < best {
                    best = c;
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` candidates, nearest first.
    fn search_layer(
        &self,
        to_query: &impl Fn(usize) -> f64,
        entries: &[Candidate],
        ef: usize,
        layer: usize,
        visited: &mut Visited,
    ) -> Vec<Candidate> {
        visited.reset();
        let mut frontier: BinaryHeap<Reverse<Candidate>> = BinaryHeap::new();
        let mut best: BinaryHeap<Candidate> = BinaryHeap::new();
        for &e in entries {
            if visited.insert(e.idx) {
                frontier.push(Reverse(e));
                best.push(e);
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(Reverse(cur)) = frontier.pop() {
            if best.len() >= ef && cur > *best.peek().unwrap() {
                break;
            }
            for &j in &self.links[cur.idx][layer] {
                if !visited.insert(j) {
                    continue;
                }
                let c = Candidate {
                    dist: to_query(j),
                    idx: j,
                };
                if best.len() < ef || c < *best.peek().unwrap() {
                    frontier.push(Reverse(c));
                    best.push(c);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    /// Approximate nearest `ef` points to a query, nearest first.
    pub fn search(&self, to_query: impl Fn(usize) -> f64, ef: usize) -> Vec<Candidate> {
        let mut ep = Candidate {
            dist: to_query(self.entry),
            idx: self.entry,
        };
        for layer in (1..=self.top_layer).rev() {
            ep = self.greedy(&to_query, ep, layer);
        }
        let mut visited = Visited::new(self.links.len());
        self.search_layer(&to_query, &[ep], ef, 0, &mut visited)
    }

    #[cfg(test)]
    pub fn max_links(&self, layer: usize) -> usize {
        self.links
            .iter()
            .filter_map(|l| l.get(layer))
            .map(Vec::len)
            .max()
            .unwrap_or(0)
    }
}

/// Keeps a candidate only if it is closer to the query than to every
/// candidate already kept, then tops up with the nearest pruned ones.
fn select_diverse(sorted: &[Candidate], cap: usize, dist: &impl Fn(usize, usize) -> f64) -> Vec<Candidate> {
    let mut kept: Vec<Candidate> = Vec::with_capacity(cap);
    let mut pruned = Vec::new();
    for &c in sorted {
        if kept.len() >= cap {
            break;
        }
        if kept.iter().all(|k| dist(c.idx, k.idx) > c.dist) {
            kept.push(c);
        } else {
            pruned.push(c);
        }
    }
    for c in pruned {
        if kept.len() >= cap {
            break;
        }
        kept.push(c);
    }
    kept
}
