//! Processor-sharing execution model.
//!
//! Every job carries `work_ms` of service. While `P` jobs are active on `cores`
//! of capacity each progresses at rate `min(1, cores / P)`, so an extra query
//! slows the others down linearly once the machine is saturated.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub start_ms: f64,
    pub work_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutcome {
    /// Completion time per job, in input order.
    pub completions: Vec<f64>,
    /// `∫ min(P(t), cores) dt`; equals the total work.
    pub busy_capacity_ms: f64,
}

pub fn simulate(jobs: &[Job], cores: u32) -> SimulationOutcome {
    let cores = cores.max(1) as f64;
    // work in times relative to the earliest start to keep precision with epoch timestamps
    let base = jobs.iter().map(|j| j.start_ms).fold(f64::INFINITY, f64::min);
    let base = if base.is_finite() { base } else { 0.0 };
    let start = |j: usize| jobs[j].start_ms - base;
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by(|&a, &b| jobs[a].start_ms.total_cmp(&jobs[b].start_ms).then(a.cmp(&b)));

    let mut completions = vec![f64::NAN; jobs.len()];
    let mut active: Vec<(usize, f64)> = Vec::new();
    let mut next = 0usize;
    let mut now = f64::NEG_INFINITY;
    let mut busy = 0.0;

    loop {
        if active.is_empty() {
            if next == order.len() {
                break;
            }
            now = now.max(start(order[next]));
        }
        // admit everything that has arrived
        while next < order.len() && start(order[next]) <= now {
            let j = order[next];
            if jobs[j].work_ms <= 0.0 {
                completions[j] = jobs[j].start_ms;
            } else {
                active.push((j, jobs[j].work_ms));
            }
            next += 1;
        }
        if active.is_empty() {
            continue;
        }
        let p = active.len() as f64;
        let rate = if p > cores { cores / p } else { 1.0 };
        let (argmin, min_remaining) = active
            .iter()
            .enumerate()
            .map(|(k, a)| (k, a.1))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        let finish_at = now + min_remaining / rate;
        let arrive_at = order.get(next).map_or(f64::INFINITY, |&j| start(j));
        let until = finish_at.min(arrive_at);
        let dt = until - now;
        let progress = dt * rate;
        busy += dt * p.min(cores);
        now = until;
        let finishing = until >= finish_at;
        let mut k = 0;
        active.retain_mut(|(j, rem)| {
            *rem -= progress;
            let done = *rem <= 1e-9 * jobs[*j].work_ms.max(1.0) || (finishing && k == argmin);
            k += 1;
            if done {
                completions[*j] = now + base;
            }
            !done
        });
    }

    SimulationOutcome {
        completions,
        busy_capacity_ms: busy,
    }
}
