use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{evaluate, Evaluation, PartitionError, PartitionProblem};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveOptions {
    pub budget: Duration,
    pub seed: u64,
    /// Stop after this many restarts (or random samples) even if budget
    /// remains. Makes runs independent of machine speed.
    pub max_restarts: Option<u64>,
}

impl SolveOptions {
    pub fn new(budget: Duration, seed: u64) -> Self {
        SolveOptions {
            budget,
            seed,
            max_restarts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub assignment: Vec<usize>,
    pub evaluation: Evaluation,
    /// Restarts (solver) or samples (random baseline) completed.
    pub restarts: u64,
    /// Candidate assignments scored.
    pub evaluations: u64,
}

/// Search key: infeasibility first, then the objective, then the sum of
/// squared deviations, which breaks ties on the plateaus of the max-based
/// objective.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Score {
    infeasibility: f64,
    objective: f64,
    spread: f64,
}

fn less(a: f64, b: f64) -> bool {
    a < b - 1e-9 * (1.0 + b.abs())
}

impl Score {
    fn better_than(&self, other: &Score) -> bool {
        if less(self.infeasibility, other.infeasibility) {
            return true;
        }
        if less(other.infeasibility, self.infeasibility) {
            return false;
        }
        if less(self.objective, other.objective) {
            return true;
        }
        if less(other.objective, self.objective) {
            return false;
        }
        less(self.spread, other.spread)
    }
}

/// Non-negative floats order like their bit patterns.
fn key(v: f64) -> u64 {
    v.to_bits()
}

/// Per-sub-cluster running sums for O(l + log m) move scoring.
struct State<'a> {
    p: &'a PartitionProblem,
    assign: Vec<usize>,
    rate: Vec<f64>,
    stat: Vec<f64>,
    dynamic: Vec<BTreeMap<u64, u32>>,
    cost: f64,
    r_bar: f64,
    s_bar: f64,
}

/// A hypothetical change to one sub-cluster: its new rate, static memory
/// and largest dynamic memory.
#[derive(Clone, Copy)]
struct Patch {
    j: usize,
    rate: f64,
    stat: f64,
    dmax: f64,
}

impl<'a> State<'a> {
    fn new(p: &'a PartitionProblem, assign: Vec<usize>) -> Self {
        let l = p.subclusters;
        let mut s = State {
            p,
            assign: vec![0; p.models.len()],
            rate: vec![0.0; l],
            stat: vec![0.0; l],
            dynamic: vec![BTreeMap::new(); l],
            cost: 0.0,
            r_bar: p.mean_rate(),
            s_bar: p.mean_static(),
        };
        for (i, j) in assign.into_iter().enumerate() {
            s.assign[i] = j;
            s.add(i, j);
        }
        s.cost = s.p.current.as_ref().map_or(0.0, |c| crate::change_cost(c, &s.assign));
        s
    }

    fn add(&mut self, i: usize, j: usize) {
        let m = &self.p.models[i];
        self.rate[j] += m.rate_rps;
        self.stat[j] += m.static_mem_mb;
        *self.dynamic[j].entry(key(m.dynamic_mem_mb)).or_insert(0) += 1;
    }

    fn remove(&mut self, i: usize, j: usize) {
        let m = &self.p.models[i];
        self.rate[j] -= m.rate_rps;
        self.stat[j] -= m.static_mem_mb;
        let k = key(m.dynamic_mem_mb);
        let n = self.dynamic[j].get_mut(&k).expect("model in sub-cluster");
        *n -= 1;
        if *n == 0 {
            self.dynamic[j].remove(&k);
        }
    }

    fn dmax(&self, j: usize) -> f64 {
        self.dynamic[j].keys().next_back().map_or(0.0, |k| f64::from_bits(*k))
    }

    /// Largest dynamic memory in `j` once model `i` has left.
    fn dmax_without(&self, j: usize, i: usize) -> f64 {
        let d = self.p.models[i].dynamic_mem_mb;
        let mut it = self.dynamic[j].iter().rev();
        match it.next() {
            Some((k, n)) if *k == key(d) && *n == 1 => it.next().map_or(0.0, |(k, _)| f64::from_bits(*k)),
            Some((k, _)) => f64::from_bits(*k),
            None => 0.0,
        }
    }

    fn model_cost(&self, i: usize, j: usize) -> f64 {
        match &self.p.current {
            Some(c) if c.assignment[i] != j => c.cost[i][j] + c.cost[i][c.assignment[i]],
            _ => 0.0,
        }
    }

    fn score_patched(&self, patches: &[Patch]) -> Score {
        let (mut infeasibility, mut dr, mut ds, mut spread) = (0.0, 0.0f64, 0.0f64, 0.0);
        let w = self.p.w;
        for j in 0..self.p.subclusters {
            let (rate, stat, dmax) = match patches.iter().find(|p| p.j == j) {
                Some(p) => (p.rate, p.stat, p.dmax),
                None => (self.rate[j], self.stat[j], self.dmax(j)),
            };
            if rate > self.p.r_max {
                infeasibility += excess(rate, self.p.r_max);
            }
            let need = stat + dmax;
            if need > self.p.s_max {
                infeasibility += excess(need, self.p.s_max);
            }
            let (er, es) = (rate - self.r_bar, stat - self.s_bar);
            dr = dr.max(er.abs());
            ds = ds.max(es.abs());
            spread += er * er + w * w * es * es;
        }
        Score {
            infeasibility,
            objective: dr + w * ds,
            spread,
        }
    }

    fn score(&self) -> Score {
        self.score_patched(&[])
    }

    fn within_budget(&self, cost: f64) -> bool {
        self.p.current.as_ref().is_none_or(|c| cost <= c.c_max + 1e-9)
    }

    /// Score after moving `i` to `b`, or `None` if that breaks the change
    /// budget.
    fn try_move(&self, i: usize, b: usize) -> Option<Score> {
        let a = self.assign[i];
        let cost = self.cost - self.model_cost(i, a) + self.model_cost(i, b);
        if !self.within_budget(cost) {
            return None;
        }
        let m = &self.p.models[i];
        Some(self.score_patched(&[
            Patch {
                j: a,
                rate: self.rate[a] - m.rate_rps,
                stat: self.stat[a] - m.static_mem_mb,
                dmax: self.dmax_without(a, i),
            },
            Patch {
                j: b,
                rate: self.rate[b] + m.rate_rps,
                stat: self.stat[b] + m.static_mem_mb,
                dmax: self.dmax(b).max(m.dynamic_mem_mb),
            },
        ]))
    }

    fn apply_move(&mut self, i: usize, b: usize) {
        let a = self.assign[i];
        self.cost += self.model_cost(i, b) - self.model_cost(i, a);
        self.remove(i, a);
        self.add(i, b);
        self.assign[i] = b;
    }

    fn try_swap(&self, i: usize, k: usize) -> Option<Score> {
        let (a, b) = (self.assign[i], self.assign[k]);
        let cost = self.cost - self.model_cost(i, a) - self.model_cost(k, b) + self.model_cost(i, b) + self.model_cost(k, a);
        if !self.within_budget(cost) {
            return None;
        }
        let (mi, mk) = (&self.p.models[i], &self.p.models[k]);
        let dmax_after = |j: usize, out: usize, incoming: f64| {
            let rest = self.dmax_without(j, out);
            rest.max(incoming)
        };
        Some(self.score_patched(&[
            Patch {
                j: a,
                rate: self.rate[a] - mi.rate_rps + mk.rate_rps,
                stat: self.stat[a] - mi.static_mem_mb + mk.static_mem_mb,
                dmax: dmax_after(a, i, mk.dynamic_mem_mb),
            },
            Patch {
                j: b,
                rate: self.rate[b] - mk.rate_rps + mi.rate_rps,
                stat: self.stat[b] - mk.static_mem_mb + mi.static_mem_mb,
                dmax: dmax_after(b, k, mi.dynamic_mem_mb),
            },
        ]))
    }

    fn apply_swap(&mut self, i: usize, k: usize) {
        let (a, b) = (self.assign[i], self.assign[k]);
        self.apply_move(i, b);
        self.apply_move(k, a);
    }
}

fn excess(value: f64, limit: f64) -> f64 {
    if limit > 0.0 {
        (value - limit) / limit
    } else {
        value - limit
    }
}

struct Clock {
    start: Instant,
    budget: Duration,
    evaluations: u64,
    expired: bool,
}

impl Clock {
    fn tick(&mut self) -> bool {
        self.evaluations += 1;
        if self.evaluations.is_multiple_of(512) && self.start.elapsed() >= self.budget {
            self.expired = true;
        }
        self.expired
    }
}

/// Randomized least-loaded construction.
fn construct(p: &PartitionProblem, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let (r_bar, s_bar) = (p.mean_rate().max(f64::MIN_POSITIVE), p.mean_static().max(f64::MIN_POSITIVE));
    let size = |i: usize| p.models[i].rate_rps / r_bar + p.models[i].static_mem_mb / s_bar;
    let mut order: Vec<(f64, usize)> = (0..p.models.len()).map(|i| (size(i) * rng.random_range(0.7..1.3), i)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let l = p.subclusters;
    let (mut rate, mut stat, mut dmax) = (vec![0.0; l], vec![0.0; l], vec![0.0f64; l]);
    let mut assign = vec![0; p.models.len()];
    let mut clusters: Vec<usize> = (0..l).collect();
    for (_, i) in order {
        let m = &p.models[i];
        clusters.shuffle(rng);
        let mut best: Option<((f64, f64), usize)> = None;
        for &j in &clusters {
            let r = rate[j] + m.rate_rps;
            let need = stat[j] + m.static_mem_mb + dmax[j].max(m.dynamic_mem_mb);
            let over = if r > p.r_max { excess(r, p.r_max) } else { 0.0 } + if need > p.s_max { excess(need, p.s_max) } else { 0.0 };
            let load = r / r_bar + (stat[j] + m.static_mem_mb) / s_bar;
            let k = (over, load);
            if best.is_none_or(|(b, _)| k.0 < b.0 || (k.0 == b.0 && k.1 < b.1)) {
                best = Some((k, j));
            }
        }
        let j = best.expect("at least one sub-cluster").1;
        rate[j] += m.rate_rps;
        stat[j] += m.static_mem_mb;
        dmax[j] = dmax[j].max(m.dynamic_mem_mb);
        assign[i] = j;
    }
    assign
}

/// Current assignment shaken by random moves that respect the change budget.
fn perturb(state: &mut State, rng: &mut ChaCha8Rng) {
    let m = state.assign.len();
    if m == 0 || state.p.subclusters < 2 {
        return;
    }
    for _ in 0..(m / 4).max(1) {
        let i = rng.random_range(0..m);
        let b = rng.random_range(0..state.p.subclusters);
        if b != state.assign[i] && state.try_move(i, b).is_some() {
            state.apply_move(i, b);
        }
    }
}

/// First-improvement descent over single moves and pairwise swaps.
fn descend(state: &mut State, rng: &mut ChaCha8Rng, clock: &mut Clock) {
    let m = state.assign.len();
    let l = state.p.subclusters;
    let mut current = state.score();
    let mut models: Vec<usize> = (0..m).collect();
    let mut clusters: Vec<usize> = (0..l).collect();
    loop {
        let mut improved = false;
        models.shuffle(rng);
        for &i in &models {
            clusters.shuffle(rng);
            for &b in &clusters {
                if b == state.assign[i] {
                    continue;
                }
                if clock.tick() {
                    return;
                }
                if let Some(s) = state.try_move(i, b) {
                    if s.better_than(&current) {
                        state.apply_move(i, b);
                        current = s;
                        improved = true;
                    }
                }
            }
        }
        for x in 0..m {
            let i = models[x];
            for &k in &models[x + 1..] {
                if state.assign[i] == state.assign[k] {
                    continue;
                }
                if clock.tick() {
                    return;
                }
                if let Some(s) = state.try_swap(i, k) {
                    if s.better_than(&current) {
                        state.apply_swap(i, k);
                        current = s;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            return;
        }
    }
}

fn finish(p: &PartitionProblem, best: Option<Vec<usize>>, restarts: u64, evaluations: u64) -> Result<Solution, PartitionError> {
    let assignment = best.unwrap_or_else(|| vec![0; p.models.len()]);
    let evaluation = evaluate(p, &assignment);
    let solution = Solution {
        assignment,
        evaluation,
        restarts,
        evaluations,
    };
    if solution.evaluation.feasible() {
        Ok(solution)
    } else {
        Err(PartitionError::Infeasible {
            score: solution.evaluation.infeasibility(),
            best: Box::new(solution),
        })
    }
}

/// Local search with random restarts until the budget (or restart cap) is
/// spent. With a current assignment, every restart starts from it and no
/// step may exceed the change budget.
pub fn solve(p: &PartitionProblem, opts: &SolveOptions) -> Result<Solution, PartitionError> {
    p.validate()?;
    if opts.budget.is_zero() {
        return Err(PartitionError::Invalid(vec!["time budget must be positive".into()]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut clock = Clock {
        start: Instant::now(),
        budget: opts.budget,
        evaluations: 0,
        expired: false,
    };
    let mut best: Option<(Score, Vec<usize>)> = None;
    let mut restarts = 0u64;
    loop {
        let mut state = match &p.current {
            Some(c) => {
                let mut s = State::new(p, c.assignment.clone());
                if restarts > 0 {
                    perturb(&mut s, &mut rng);
                }
                s
            }
            None => State::new(p, construct(p, &mut rng)),
        };
        descend(&mut state, &mut rng, &mut clock);
        let score = state.score();
        if best.as_ref().is_none_or(|(b, _)| score.better_than(b)) {
            best = Some((score, state.assign));
        }
        restarts += 1;
        if clock.expired || clock.start.elapsed() >= opts.budget || opts.max_restarts.is_some_and(|n| restarts >= n) {
            break;
        }
    }
    finish(p, best.map(|(_, a)| a), restarts, clock.evaluations)
}

/// Uniformly random assignments until the budget (or sample cap) is
/// spent; keeps the feasible one with the least objective.
pub fn random_solver(p: &PartitionProblem, opts: &SolveOptions) -> Result<Solution, PartitionError> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = Instant::now();
    let mut best: Option<(bool, f64, Vec<usize>)> = None;
    let mut samples = 0u64;
    let mut assign = vec![0; p.models.len()];
    loop {
        for j in assign.iter_mut() {
            *j = rng.random_range(0..p.subclusters);
        }
        let e = evaluate(p, &assign);
        let (feasible, value) = if e.feasible() { (true, e.objective) } else { (false, e.infeasibility()) };
        let take = match &best {
            None => true,
            Some((bf, bv, _)) => (feasible && !bf) || (feasible == *bf && value < *bv),
        };
        if take {
            best = Some((feasible, value, assign.clone()));
        }
        samples += 1;
        if opts.max_restarts.is_some_and(|n| samples >= n) || (samples.is_multiple_of(64) && start.elapsed() >= opts.budget) {
            break;
        }
    }
    finish(p, best.map(|(_, _, a)| a), samples, samples)
}

/// Every assignment of a small instance; `None` if none is feasible.
/// Refuses instances with more than 2^24 assignments.
pub fn exhaustive(p: &PartitionProblem) -> Result<Option<Solution>, PartitionError> {
    p.validate()?;
    let (m, l) = (p.models.len(), p.subclusters);
    let total = (l as f64).powi(m as i32);
    if total > (1u64 << 24) as f64 {
        return Err(PartitionError::TooLarge(total));
    }
    let mut assign = vec![0usize; m];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut count = 0u64;
    loop {
        let e = evaluate(p, &assign);
        count += 1;
        if e.feasible() && best.as_ref().is_none_or(|(b, _)| e.objective < *b) {
            best = Some((e.objective, assign.clone()));
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == m {
                return Ok(best.map(|(_, assignment)| Solution {
                    evaluation: evaluate(p, &assignment),
                    assignment,
                    restarts: 1,
                    evaluations: count,
                }));
            }
            assign[pos] += 1;
            if assign[pos] < l {
                break;
            }
            assign[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{CurrentAssignment, ModelLoad};

    fn model(r: f64, s: f64, d: f64) -> ModelLoad {
        ModelLoad {
            name: format!("m{r}"),
            rate_rps: r,
            static_mem_mb: s,
            dynamic_mem_mb: d,
        }
    }

    fn opts(seed: u64) -> SolveOptions {
        SolveOptions {
            budget: Duration::from_secs(5),
            seed,
            max_restarts: Some(50),
        }
    }

    #[test]
    fn incremental_scores_match_full_evaluation() {
        let models: Vec<_> = (0..9).map(|i| model(1.0 + i as f64 * 3.0, 10.0 + (i * 7 % 5) as f64, (i % 4) as f64)).collect();
        let mut p = PartitionProblem::new(models, 3);
        p.s_max = 45.0;
        p.r_max = 60.0;
        let mut state = State::new(&p, vec![0, 1, 2, 0, 1, 2, 0, 0, 0]);
        for (i, b) in [(3, 1), (0, 2), (8, 1), (2, 0)] {
            let predicted = state.try_move(i, b).unwrap();
            state.apply_move(i, b);
            let e = evaluate(&p, &state.assign);
            assert!((predicted.objective - e.objective).abs() < 1e-9);
            assert!((predicted.infeasibility - e.infeasibility()).abs() < 1e-9);
            assert_eq!(state.score(), predicted);
        }
        let predicted = state.try_swap(1, 4).unwrap();
        state.apply_swap(1, 4);
        assert!((predicted.objective - evaluate(&p, &state.assign).objective).abs() < 1e-9);
    }

    #[test]
    fn solver_matches_enumeration_on_eight_models() {
        let models: Vec<_> = [5.0, 9.0, 2.0, 7.0, 4.0, 8.0, 1.0, 6.0].iter().enumerate().map(|(i, r)| model(*r, 3.0 + i as f64, 0.0)).collect();
        let p = PartitionProblem::new(models, 2);
        let exact = exhaustive(&p).unwrap().unwrap();
        let found = solve(&p, &opts(1)).unwrap();
        assert!((found.evaluation.objective - exact.evaluation.objective).abs() < 1e-9);
    }

    #[test]
    fn zero_change_budget_keeps_the_current_assignment() {
        let models: Vec<_> = (0..6).map(|i| model(10.0 * (i + 1) as f64, 1.0, 0.0)).collect();
        let mut p = PartitionProblem::new(models, 2);
        let current = vec![0, 0, 0, 1, 1, 1];
        p.current = Some(CurrentAssignment {
            assignment: current.clone(),
            cost: vec![vec![1.0; 2]; 6],
            c_max: 0.0,
        });
        assert_eq!(solve(&p, &opts(3)).unwrap().assignment, current);
    }

    #[test]
    fn infeasible_instance_reports_best_effort() {
        let mut p = PartitionProblem::new(vec![model(10.0, 1.0, 0.0), model(10.0, 1.0, 0.0)], 1);
        p.r_max = 15.0;
        match solve(&p, &opts(0)) {
            Err(PartitionError::Infeasible { score, best }) => {
                assert!((score - 5.0 / 15.0).abs() < 1e-12);
                assert_eq!(best.assignment, vec![0, 0]);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
        assert!(exhaustive(&p).unwrap().is_none());
    }

    #[test]
    fn exhaustive_refuses_huge_instances() {
        let p = PartitionProblem::new((0..30).map(|i| model(i as f64, 1.0, 0.0)).collect(), 4);
        assert!(matches!(exhaustive(&p), Err(PartitionError::TooLarge(_))));
    }

    #[test]
    fn zero_budget_is_rejected() {
        let p = PartitionProblem::new(vec![model(1.0, 1.0, 0.0)], 1);
        assert!(solve(&p, &SolveOptions::new(Duration::ZERO, 0)).is_err());
    }

    #[test]
    fn capped_runs_are_deterministic() {
        let models: Vec<_> = (0..40).map(|i| model(((i * 37) % 23) as f64 + 1.0, ((i * 11) % 7) as f64 + 1.0, (i % 3) as f64)).collect();
        let p = PartitionProblem::new(models, 4);
        let a = solve(&p, &opts(9)).unwrap();
        let b = solve(&p, &opts(9)).unwrap();
        assert_eq!(a.assignment, b.assignment);
        let r1 = random_solver(&p, &opts(9)).unwrap();
        let r2 = random_solver(&p, &opts(9)).unwrap();
        assert_eq!(r1.assignment, r2.assignment);
    }
}
