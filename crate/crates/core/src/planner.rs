//! Frontier sequencing by expected search distance.
//!
//! `W(π) = Σ_i D_i · P_obs(π_i)` where `D_i` is the path length from the
//! start through the first `i` frontiers of `π`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid_config, invalid_input, Result};
use crate::geometry::Vec3;
use crate::navgrid::{GridCell, Passable};

/// Grid path length as counts of straight and diagonal moves, so equal
/// lengths compare exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl PathCost {
    pub fn cells(&self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT_2
    }

    pub fn meters(&self, resolution: f64) -> f64 {
        resolution * self.cells()
    }
}

const NEIGHBORS: [(i32, i32); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Moves from `c` allowed on `grid`: 8-connected, diagonals only when both
/// adjacent straight cells are passable.
pub fn neighbors(grid: &impl Passable, c: GridCell) -> impl Iterator<Item = (GridCell, bool)> + '_ {
    NEIGHBORS.iter().filter_map(move |&(dx, dy)| {
        let n = c.offset(dx, dy);
        if !grid.passable(n) {
            return None;
        }
        let diagonal = dx != 0 && dy != 0;
        if diagonal && !(grid.passable(c.offset(dx, 0)) && grid.passable(c.offset(0, dy))) {
            return None;
        }
        Some((n, diagonal))
    })
}

fn octile(a: GridCell, b: GridCell) -> f64 {
    let dx = (a.x - b.x).unsigned_abs() as f64;
    let dy = (a.y - b.y).unsigned_abs() as f64;
    dx.max(dy) - dx.min(dy) + dx.min(dy) * SQRT_2
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    g: f64,
    cell: GridCell,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest path from `a` to `b` with its cost, `None` if disconnected.
/// Both endpoints must be passable.
pub fn astar_path(grid: &impl Passable, a: GridCell, b: GridCell) -> Result<Option<(PathCost, Vec<GridCell>)>> {
    if !grid.passable(a) || !grid.passable(b) {
        return Err(invalid_input("A* endpoints must be free cells"));
    }
    let mut best: rustc_hash::FxHashMap<GridCell, (PathCost, GridCell)> = Default::default();
    let mut heap = BinaryHeap::new();
    best.insert(a, (PathCost::default(), a));
    heap.push(Open {
        f: octile(a, b),
        g: 0.0,
        cell: a,
    });
    let mut closed: rustc_hash::FxHashSet<GridCell> = Default::default();
    while let Some(Open { cell, .. }) = heap.pop() {
        if !closed.insert(cell) {
            continue;
        }
        if cell == b {
            let cost = best[&b].0;
            let mut path = vec![b];
            let mut cur = b;
            while cur != a {
                cur = best[&cur].1;
                path.push(cur);
            }
            path.reverse();
            return Ok(Some((cost, path)));
        }
        let g = best[&cell].0;
        for (n, diagonal) in neighbors(grid, cell) {
            if closed.contains(&n) {
                continue;
            }
            let mut ng = g;
            if diagonal {
                ng.diagonal += 1;
            } else {
                ng.straight += 1;
            }
            let better = best.get(&n).is_none_or(|(old, _)| ng.cells() < old.cells());
            if better {
                best.insert(n, (ng, cell));
                heap.push(Open {
                    f: ng.cells() + octile(n, b),
                    g: ng.cells(),
                    cell: n,
                });
            }
        }
    }
    Ok(None)
}

/// Shortest 8-connected path length in meters, infinite if disconnected.
pub fn astar_distance(grid: &impl Passable, a: GridCell, b: GridCell) -> Result<f64> {
    Ok(astar_path(grid, a, b)?.map_or(f64::INFINITY, |(c, _)| c.meters(grid.resolution())))
}

/// Symmetric pairwise A* distances; row and column 0 are `start`.
pub fn distance_matrix(grid: &impl Passable, start: GridCell, frontiers: &[GridCell]) -> Result<Vec<Vec<f64>>> {
    let nodes: Vec<GridCell> = std::iter::once(start).chain(frontiers.iter().copied()).collect();
    let n = nodes.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = astar_distance(grid, nodes[i], nodes[j])?;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedFrontier {
    pub pos: Vec3,
    pub p_obs: f64,
}

/// Sequencing problem. Matrix index 0 is the start, index `i + 1` is
/// frontier `i`. Unreachable pairs are infinite (`null` in JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningInstance {
    pub start: Vec3,
    pub frontiers: Vec<PlannedFrontier>,
    #[serde(serialize_with = "ser_matrix", deserialize_with = "de_matrix")]
    pub matrix: Vec<Vec<f64>>,
}

fn ser_matrix<S: Serializer>(m: &[Vec<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<Option<f64>>> = m
        .iter()
        .map(|r| r.iter().map(|d| d.is_finite().then_some(*d)).collect())
        .collect();
    rows.serialize(s)
}

fn de_matrix<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<f64>>, D::Error> {
    let rows: Vec<Vec<Option<f64>>> = Deserialize::deserialize(d)?;
    Ok(rows
        .into_iter()
        .map(|r| r.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
        .collect())
}

impl PlanningInstance {
    /// Start and `n` frontiers uniform in a `side`-meter square, Euclidean
    /// distances and uniform `P_obs` in [0, 1].
    pub fn random_euclidean(n: usize, side: f64, rng: &mut impl Rng) -> Self {
        let mut pt = || Vec3::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side), 0.0);
        let start = pt();
        let pos: Vec<Vec3> = (0..n).map(|_| pt()).collect();
        let frontiers = pos
            .iter()
            .map(|&p| PlannedFrontier { pos: p, p_obs: rng.gen_range(0.0..=1.0) })
            .collect();
        let all: Vec<Vec3> = std::iter::once(start).chain(pos).collect();
        let matrix = all
            .iter()
            .map(|a| all.iter().map(|b| (a - b).norm()).collect())
            .collect();
        Self { start, frontiers, matrix }
    }

    pub fn len(&self) -> usize {
        self.frontiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frontiers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frontiers.len() + 1;
        if self.matrix.len() != n || self.matrix.iter().any(|r| r.len() != n) {
            return Err(invalid_input("distance matrix must be (n + 1) square"));
        }
        for i in 0..n {
            if self.matrix[i][i] != 0.0 {
                return Err(invalid_input("distance matrix diagonal must be zero"));
            }
            for j in 0..n {
                let d = self.matrix[i][j];
                if d.is_nan() || d < 0.0 || d != self.matrix[j][i] {
                    return Err(invalid_input("distances must be non-negative and symmetric"));
                }
            }
        }
        if self.frontiers.iter().any(|f| !(f.p_obs >= 0.0 && f.p_obs.is_finite())) {
            return Err(invalid_input("P_obs must be finite and non-negative"));
        }
        Ok(())
    }

    #[inline]
    fn d(&self, from: Option<usize>, to: usize) -> f64 {
        self.matrix[from.map_or(0, |f| f + 1)][to + 1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    /// Frontier indices in visiting order.
    pub permutation: Vec<usize>,
    pub cost: f64,
    /// Path length from the start to each visited frontier.
    pub cumulative: Vec<f64>,
}

fn check_permutation(n: usize, perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(invalid_input("permutation length differs from frontier count"));
    }
    for &i in perm {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(invalid_input("not a permutation of the frontier indices"));
        }
    }
    Ok(())
}

#[inline]
fn cost_unchecked(inst: &PlanningInstance, perm: &[usize]) -> f64 {
    let mut prev = None;
    let mut cum = 0.0;
    let mut w = 0.0;
    for &i in perm {
        cum += inst.d(prev, i);
        w += cum * inst.frontiers[i].p_obs;
        prev = Some(i);
    }
    w
}

/// Expected search cost of a visiting order; infinite if any leg is.
pub fn plan_cost(inst: &PlanningInstance, perm: &[usize]) -> Result<f64> {
    check_permutation(inst.len(), perm)?;
    Ok(cost_unchecked(inst, perm))
}

/// Builds the full result for an order.
pub fn evaluate_plan(inst: &PlanningInstance, perm: &[usize]) -> Result<PlanResult> {
    check_permutation(inst.len(), perm)?;
    let mut cumulative = Vec::with_capacity(perm.len());
    let mut prev = None;
    let mut cum = 0.0;
    for &i in perm {
        cum += inst.d(prev, i);
        cumulative.push(cum);
        prev = Some(i);
    }
    Ok(PlanResult {
        permutation: perm.to_vec(),
        cost: cost_unchecked(inst, perm),
        cumulative,
    })
}

pub const BRUTE_FORCE_MAX: usize = 10;

/// Exact optimum by depth-first enumeration in lexicographic order, so the
/// lexicographically smallest of equal-cost orders wins.
pub fn brute_force_plan(inst: &PlanningInstance) -> Result<PlanResult> {
    let n = inst.len();
    if n > BRUTE_FORCE_MAX {
        return Err(invalid_input(format!("brute force is limited to {BRUTE_FORCE_MAX} frontiers")));
    }
    struct Search<'a> {
        inst: &'a PlanningInstance,
        prefix: Vec<usize>,
        used: Vec<bool>,
        best: Option<(f64, Vec<usize>)>,
    }
    impl Search<'_> {
        fn go(&mut self, cum: f64, w: f64) {
            if let Some((b, _)) = &self.best {
                // Remaining terms are non-negative, and later orders are
                // lexicographically larger, so ties are pruned too.
                if w >= *b {
                    return;
                }
            }
            let n = self.used.len();
            if self.prefix.len() == n {
                self.best = Some((w, self.prefix.clone()));
                return;
            }
            let prev = self.prefix.last().copied();
            for i in 0..n {
                if self.used[i] {
                    continue;
                }
                let c = cum + self.inst.d(prev, i);
                let nw = w + c * self.inst.frontiers[i].p_obs;
                self.used[i] = true;
                self.prefix.push(i);
                self.go(c, nw);
                self.prefix.pop();
                self.used[i] = false;
            }
        }
    }
    let mut s = Search {
        inst,
        prefix: Vec::with_capacity(n),
        used: vec![false; n],
        best: None,
    };
    s.go(0.0, 0.0);
    let perm = match s.best {
        Some((_, p)) => p,
        // Every order is infinite; report the identity order.
        None => (0..n).collect(),
    };
    evaluate_plan(inst, &perm)
}

/// Nearest-neighbor tour from the start; ties go to the lower index.
pub fn greedy_tour(inst: &PlanningInstance) -> Vec<usize> {
    let n = inst.len();
    let mut used = vec![false; n];
    let mut out = Vec::with_capacity(n);
    let mut prev = None;
    for _ in 0..n {
        let next = (0..n)
            .filter(|&i| !used[i])
            .min_by(|&a, &b| inst.d(prev, a).total_cmp(&inst.d(prev, b)).then(a.cmp(&b)))
            .expect("unvisited frontier remains");
        used[next] = true;
        out.push(next);
        prev = Some(next);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealConfig {
    /// Initial temperature; derived from the cost spread of random
    /// neighbors of the start tour when absent.
    pub t0: Option<f64>,
    pub tf: f64,
    pub cooling: f64,
    pub chains: usize,
    /// Proposals per temperature level.
    pub iters_per_temp: usize,
    /// Swap, shift and reverse probabilities.
    pub op_probabilities: [f64; 3],
    pub rng_seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            t0: None,
            tf: 1e-3,
            cooling: 0.97,
            chains: 32,
            iters_per_temp: 4,
            op_probabilities: [0.4, 0.3, 0.3],
            rng_seed: 0,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tf > 0.0) {
            return Err(invalid_config("Tf must be positive"));
        }
        if let Some(t0) = self.t0 {
            if !(t0 > self.tf && t0.is_finite()) {
                return Err(invalid_config("T0 must exceed Tf"));
            }
        }
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return Err(invalid_config("cooling rate must be in (0, 1)"));
        }
        if self.chains == 0 || self.iters_per_temp == 0 {
            return Err(invalid_config("chains and iters_per_temp must be positive"));
        }
        let p = self.op_probabilities;
        if p.iter().any(|x| !(*x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid_config("operation probabilities must be non-negative and sum to 1"));
        }
        Ok(())
    }
}

fn two_indices(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    let i = rng.gen_range(0..n);
    let mut j = rng.gen_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// Applies one random swap, shift or reverse in place.
fn perturb(perm: &mut [usize], probs: &[f64; 3], rng: &mut ChaCha8Rng) {
    let n = perm.len();
    if n < 2 {
        return;
    }
    let r: f64 = rng.gen();
    let (i, j) = two_indices(rng, n);
    if r < probs[0] {
        perm.swap(i, j);
    } else if r < probs[0] + probs[1] {
        if i < j {
            perm[i..=j].rotate_left(1);
        } else {
            perm[j..=i].rotate_right(1);
        }
    } else {
        let (a, b) = (i.min(j), i.max(j));
        perm[a..=b].reverse();
    }
}

/// Repetitions of the neighbor operation at temperature `t`: up to half
/// the tour at `t0`, one near the end.
fn repetitions(n: usize, t: f64, t0: f64) -> usize {
    1 + ((n / 2) as f64 * (t / t0)).floor() as usize
}

fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

const SPREAD_SAMPLES: usize = 64;

/// Initial temperature: ten times the mean absolute cost change of random
/// neighbors of `init`.
pub fn initial_temperature(inst: &PlanningInstance, init: &[usize], cfg: &AnnealConfig) -> f64 {
    if let Some(t0) = cfg.t0 {
        return t0;
    }
    let base = cost_unchecked(inst, init);
    let mut rng = chain_rng(cfg.rng_seed, u64::MAX);
    let mut total = 0.0;
    let mut count = 0;
    for _ in 0..SPREAD_SAMPLES {
        let mut p = init.to_vec();
        perturb(&mut p, &cfg.op_probabilities, &mut rng);
        let c = cost_unchecked(inst, &p);
        if c.is_finite() && base.is_finite() {
            total += (c - base).abs();
            count += 1;
        }
    }
    if count == 0 {
        return 0.0;
    }
    10.0 * total / count as f64
}

fn run_chain(inst: &PlanningInstance, init: &[usize], t0: f64, cfg: &AnnealConfig, chain: u64) -> (f64, Vec<usize>) {
    let mut rng = chain_rng(cfg.rng_seed, chain);
    let n = init.len();
    let mut cur = init.to_vec();
    let mut cur_cost = cost_unchecked(inst, &cur);
    let mut best = (cur_cost, cur.clone());
    let mut cand = cur.clone();
    let mut t = t0;
    while t > cfg.tf {
        for _ in 0..cfg.iters_per_temp {
            cand.copy_from_slice(&cur);
            for _ in 0..repetitions(n, t, t0) {
                perturb(&mut cand, &cfg.op_probabilities, &mut rng);
            }
            let c = cost_unchecked(inst, &cand);
            if !c.is_finite() {
                continue;
            }
            let accept = c <= cur_cost || rng.gen::<f64>() < ((cur_cost - c) / t).exp();
            if accept {
                std::mem::swap(&mut cur, &mut cand);
                cur_cost = c;
                if (c, &cur) < (best.0, &best.1) {
                    best = (c, cur.clone());
                }
            }
        }
        t *= cfg.cooling;
    }
    best
}

/// Multi-chain simulated annealing. Chains start from the nearest-neighbor
/// tour, alternating with `warm` when given; the lowest cost wins, then the
/// lexicographically smallest order.
pub fn anneal_plan(inst: &PlanningInstance, cfg: &AnnealConfig, warm: Option<&[usize]>) -> Result<PlanResult> {
    cfg.validate()?;
    let n = inst.len();
    if n == 0 {
        return Err(invalid_input("cannot plan over zero frontiers"));
    }
    if let Some(w) = warm {
        check_permutation(n, w)?;
    }
    let greedy = greedy_tour(inst);
    let t0 = initial_temperature(inst, &greedy, cfg);
    let start_cost = cost_unchecked(inst, &greedy);
    if n == 1 || !(t0 > cfg.tf) {
        let mut best = (start_cost, greedy);
        if let Some(w) = warm {
            let c = cost_unchecked(inst, w);
            if (c, w) < (best.0, best.1.as_slice()) {
                best = (c, w.to_vec());
            }
        }
        return evaluate_plan(inst, &best.1);
    }
    let results: Vec<(f64, Vec<usize>)> = (0..cfg.chains as u64)
        .into_par_iter()
        .map(|k| {
            let init = match warm {
                Some(w) if k % 2 == 1 => w,
                _ => greedy.as_slice(),
            };
            run_chain(inst, init, t0, cfg, k)
        })
        .collect();
    let mut best = (start_cost, greedy);
    for r in results {
        if (r.0, &r.1) < (best.0, &best.1) {
            best = r;
        }
    }
    evaluate_plan(inst, &best.1)
}

/// Position of the first frontier of the plan.
pub fn next_goal(inst: &PlanningInstance, plan: &PlanResult) -> Option<Vec3> {
    plan.permutation.first().map(|&i| inst.frontiers[i].pos)
}
