//! Branch-and-bound over the slack-linearized selection program.
//!
//! The program minimizes `Σ_d |a_d · x − b_d|` over integer `x` in a box,
//! subject to `Σ x ≤ z` and `Σ T_j x_j ≤ l`. Each absolute value becomes a
//! nonnegative slack `s_d ≥ ±(a_d · x − b_d)`; LP relaxations of the result
//! give the node bounds. Once the optimum is proven a second, lexicographically
//! ordered search looks for smaller ties within a tenth of the node budget, so
//! among optima the lexicographically smallest `x` wins whenever that search
//! completes.

use std::time::{Duration, Instant};

use minilp::{ComparisonOp, OptimizationDirection, Problem};

const INTEGRAL_TOL: f64 = 1e-6;
const TIE_TOL: f64 = 1e-9;
const LP_MARGIN: f64 = 1e-9;
/// The lexicographic tie search may spend this fraction of the node limit.
const TIE_BUDGET_DIVISOR: usize = 10;

#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub coef: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct IntegerProgram {
    pub rows: Vec<Row>,
    pub upper: Vec<u32>,
    pub durations: Vec<f64>,
    pub total_cap: u32,
    pub duration_budget: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverBudget {
    pub node_limit: usize,
    /// Wall-clock limit. Leave unset when results must be reproducible.
    pub time_limit: Option<Duration>,
}

impl Default for SolverBudget {
    fn default() -> Self {
        Self {
            node_limit: 200_000,
            time_limit: None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<u32>,
    pub objective: f64,
    pub approximate: bool,
    pub nodes: usize,
}

impl IntegerProgram {
    pub fn n(&self) -> usize {
        self.upper.len()
    }

    pub fn objective(&self, x: &[u32]) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                let ax: f64 = r.coef.iter().zip(x).map(|(a, &v)| a * v as f64).sum();
                (ax - r.rhs).abs()
            })
            .sum()
    }

    pub fn within_duration(&self, x: &[u32]) -> bool {
        match self.duration_budget {
            None => true,
            Some(l) => {
                let used: f64 = self.durations.iter().zip(x).map(|(t, &v)| t * v as f64).sum();
                used <= l * (1.0 + 1e-12) + 1e-9
            }
        }
    }

    pub fn feasible(&self, x: &[u32]) -> bool {
        x.len() == self.n()
            && x.iter().zip(&self.upper).all(|(v, u)| v <= u)
            && x.iter().map(|&v| v as u64).sum::<u64>() <= self.total_cap as u64
            && self.within_duration(x)
    }

    /// LP relaxation over the box `[lo, hi]`; `None` when infeasible.
    fn relax(&self, lo: &[u32], hi: &[u32]) -> Option<(f64, Vec<f64>)> {
        if lo.iter().map(|&v| v as u64).sum::<u64>() > self.total_cap as u64 || !self.within_duration(lo) {
            return None;
        }
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let xs: Vec<_> = lo
            .iter()
            .zip(hi)
            .map(|(&l, &h)| lp.add_var(0.0, (l as f64, h as f64)))
            .collect();
        for row in &self.rows {
            let s = lp.add_var(1.0, (0.0, f64::INFINITY));
            let terms: Vec<_> = xs
                .iter()
                .zip(&row.coef)
                .filter(|(_, &a)| a != 0.0)
                .map(|(&v, &a)| (v, a))
                .collect();
            let mut up = vec![(s, 1.0)];
            up.extend(terms.iter().map(|&(v, a)| (v, -a)));
            lp.add_constraint(up.as_slice(), ComparisonOp::Ge, -row.rhs);
            let mut down = vec![(s, 1.0)];
            down.extend(terms.iter().copied());
            lp.add_constraint(down.as_slice(), ComparisonOp::Ge, row.rhs);
        }
        let all: Vec<_> = xs.iter().map(|&v| (v, 1.0)).collect();
        lp.add_constraint(all.as_slice(), ComparisonOp::Le, self.total_cap as f64);
        if let Some(l) = self.duration_budget {
            let dur: Vec<_> = xs
                .iter()
                .zip(&self.durations)
                .map(|(&v, &t)| (v, t))
                .collect();
            lp.add_constraint(dur.as_slice(), ComparisonOp::Le, l * (1.0 + 1e-12) + 1e-9);
        }
        let sol = lp.solve().ok()?;
        let values = xs
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&v, (&l, &h))| sol[v].clamp(l as f64, h as f64))
            .collect();
        Some((sol.objective(), values))
    }
}

struct Incumbent {
    x: Vec<u32>,
    objective: f64,
}

impl Incumbent {
    fn tie(&self) -> f64 {
        TIE_TOL * self.objective.abs().max(1.0)
    }

    fn offer(&mut self, x: Vec<u32>, objective: f64) {
        let tie = self.tie();
        if objective < self.objective - tie || (objective <= self.objective + tie && x < self.x) {
            self.x = x;
            self.objective = objective;
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    /// Only strictly better points matter.
    Improve,
    /// The optimum is proven; look for lexicographically smaller ties.
    Ties,
}

struct Node {
    lo: Vec<u32>,
    hi: Vec<u32>,
    parent_bound: f64,
}

struct Search<'a> {
    program: &'a IntegerProgram,
    budget: &'a SolverBudget,
    started: Instant,
    nodes: usize,
}

impl Search<'_> {
    fn out_of_time(&self) -> bool {
        self.budget.time_limit.is_some_and(|t| self.started.elapsed() >= t)
    }

    /// Whether no point of a box with this LP bound and lower corner matters.
    fn pruned(phase: Phase, inc: &Incumbent, bound: f64, lo: &[u32]) -> bool {
        let margin = LP_MARGIN * bound.abs().max(1.0);
        let tie = inc.tie();
        match phase {
            Phase::Improve => inc.objective <= tie || bound - margin >= inc.objective - tie,
            Phase::Ties => bound - margin > inc.objective + tie || lo >= inc.x.as_slice(),
        }
    }

    fn try_point(&self, inc: &mut Incumbent, x: Vec<u32>) {
        if self.program.feasible(&x) {
            let obj = self.program.objective(&x);
            inc.offer(x, obj);
        }
    }

    /// Depth-first search until the stack empties (true) or `limit` nodes have
    /// been expanded in total (false).
    fn run(&mut self, phase: Phase, inc: &mut Incumbent, limit: usize) -> bool {
        let n = self.program.n();
        let mut stack = vec![Node {
            lo: vec![0; n],
            hi: self.program.upper.clone(),
            parent_bound: f64::NEG_INFINITY,
        }];
        while let Some(node) = stack.pop() {
            if node.parent_bound.is_finite() && Self::pruned(phase, inc, node.parent_bound, &node.lo) {
                continue;
            }
            if self.nodes >= limit || self.out_of_time() {
                return false;
            }
            self.nodes += 1;
            let Some((bound, values)) = self.program.relax(&node.lo, &node.hi) else {
                continue;
            };
            if Self::pruned(phase, inc, bound, &node.lo) {
                continue;
            }

            let floor: Vec<u32> = values
                .iter()
                .zip(&node.lo)
                .map(|(v, &l)| ((v + INTEGRAL_TOL).floor() as u32).max(l))
                .collect();
            self.try_point(inc, floor);
            let nearest: Vec<u32> = values.iter().map(|v| v.round() as u32).collect();
            self.try_point(inc, nearest.clone());

            let (j, split) = match phase {
                Phase::Improve => {
                    let fractional = values
                        .iter()
                        .enumerate()
                        .map(|(j, v)| (j, (v - v.round()).abs()))
                        .filter(|&(_, f)| f > INTEGRAL_TOL)
                        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
                    match fractional {
                        Some((j, _)) => (j, values[j].floor() as u32),
                        // an integral relaxation is its own best point
                        None => continue,
                    }
                }
                Phase::Ties => match (0..n).find(|&j| node.lo[j] < node.hi[j]) {
                    // fix the first free variable at its smallest value first
                    Some(j) => (j, node.lo[j]),
                    None => continue,
                },
            };
            let mut up = Node {
                lo: node.lo.clone(),
                hi: node.hi.clone(),
                parent_bound: bound,
            };
            up.lo[j] = split + 1;
            let mut down = Node {
                lo: node.lo,
                hi: node.hi,
                parent_bound: bound,
            };
            down.hi[j] = split;
            if up.lo[j] <= up.hi[j] {
                stack.push(up);
            }
            if down.lo[j] <= down.hi[j] {
                stack.push(down);
            }
        }
        true
    }
}

pub(crate) fn solve(program: &IntegerProgram, budget: &SolverBudget, warm: Option<&[u32]>) -> Outcome {
    let zeros = vec![0u32; program.n()];
    let mut inc = Incumbent {
        objective: program.objective(&zeros),
        x: zeros,
    };
    if let Some(w) = warm.filter(|w| program.feasible(w)) {
        inc.offer(w.to_vec(), program.objective(w));
    }
    let mut search = Search {
        program,
        budget,
        started: Instant::now(),
        nodes: 0,
    };
    let proven = search.run(Phase::Improve, &mut inc, budget.node_limit);
    if proven {
        let limit = search.nodes.saturating_add(budget.node_limit / TIE_BUDGET_DIVISOR);
        if !search.run(Phase::Ties, &mut inc, limit) {
            log::debug!("tie search stopped after {} nodes; keeping the smallest tie found", search.nodes);
        }
    }
    Outcome {
        objective: inc.objective,
        x: inc.x,
        approximate: !proven,
        nodes: search.nodes,
    }
}
