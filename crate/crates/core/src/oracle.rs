//! Exact dynamic programming on [`FiniteMdp`].
//!
//! Ground truth for every learned quantity: policy values, reachability
//! estimation (REF) fixed points, the safest policy and its feasible set, the
//! best zero-violation reward, and the re-entry certificate.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, TabularPolicy};

/// Convergence tolerance on sup-norm sweeps.
pub const TOL: f64 = 1e-10;
/// Actions whose backups are within this of the best one count as tied.
pub const TIE_TOL: f64 = 1e-9;
/// `φ* ≤ TOL_FEAS` marks a state feasible.
pub const TOL_FEAS: f64 = 1e-6;
/// Above this many states policy evaluation iterates instead of factorizing.
pub const DIRECT_SOLVE_LIMIT: usize = 2000;

const MAX_SWEEPS: usize = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Reward,
    Cost,
}

fn expect(mdp: &FiniteMdp, s: usize, a: usize, v: &[f64]) -> f64 {
    mdp.successors(s, a).iter().map(|&(n, p)| p * v[n]).sum()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn signal_under(mdp: &FiniteMdp, policy: &TabularPolicy, signal: Signal) -> Vec<f64> {
    (0..mdp.n_states())
        .map(|s| match signal {
            Signal::Cost => mdp.cost(s),
            Signal::Reward => (0..mdp.n_actions()).map(|a| policy.prob(s, a) * mdp.reward(s, a)).sum(),
        })
        .collect()
}

/// Expected successor value under the policy: `Σ_a π(a|s) Σ_s' P(s'|s,a) v(s')`.
fn policy_expect(mdp: &FiniteMdp, policy: &TabularPolicy, s: usize, v: &[f64]) -> f64 {
    let mut total = 0.0;
    for a in 0..mdp.n_actions() {
        let pa = policy.prob(s, a);
        if pa > 0.0 {
            total += pa * expect(mdp, s, a, v);
        }
    }
    total
}

/// Solve `V = x_π + γ P_π V`.
pub fn policy_eval(mdp: &FiniteMdp, policy: &TabularPolicy, signal: Signal) -> Result<Vec<f64>> {
    policy.check_against(mdp)?;
    let n = mdp.n_states();
    let gamma = mdp.discount();
    let b = signal_under(mdp, policy, signal);
    if n <= DIRECT_SOLVE_LIMIT {
        let mut m = DMatrix::<f64>::identity(n, n);
        for s in 0..n {
            for a in 0..mdp.n_actions() {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                for &(next, p) in mdp.successors(s, a) {
                    m[(s, next)] -= gamma * pa * p;
                }
            }
        }
        let rhs = DVector::from_vec(b);
        let v = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NonFinite("singular policy-evaluation system".into()))?;
        let mut v: Vec<f64> = v.iter().copied().collect();
        if signal == Signal::Cost {
            // Round-off can leave tiny negatives where the exact value is zero.
            v.iter_mut().for_each(|x| *x = x.max(0.0));
        }
        return Ok(v);
    }
    let mut v = vec![0.0; n];
    for _ in 0..MAX_SWEEPS {
        let next: Vec<f64> = (0..n).map(|s| b[s] + gamma * policy_expect(mdp, policy, s, &v)).collect();
        let d = sup_diff(&next, &v);
        v = next;
        if d <= TOL {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence { iterations: MAX_SWEEPS, residual: f64::NAN })
}

/// States from which no violating state is reachable through positive-probability edges.
pub fn persistently_safe(mdp: &FiniteMdp, policy: &TabularPolicy) -> Vec<bool> {
    let n = mdp.n_states();
    // Reverse graph search from the violation set.
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            if policy.prob(s, a) > 0.0 {
                for &(next, _) in mdp.successors(s, a) {
                    preds[next].push(s);
                }
            }
        }
    }
    let mut unsafe_ = vec![false; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| mdp.cost(s) > 0.0).collect();
    for &s in &queue {
        unsafe_[s] = true;
    }
    while let Some(s) = queue.pop_front() {
        for &p in &preds[s] {
            if !unsafe_[p] {
                unsafe_[p] = true;
                queue.push_back(p);
            }
        }
    }
    unsafe_.into_iter().map(|u| !u).collect()
}

/// `Q(s,a) = x(s,a) + γ Σ P(s'|s,a) V(s')` for the given value table.
pub fn q_from_v(mdp: &FiniteMdp, v: &[f64], signal: Signal) -> Vec<f64> {
    let m = mdp.n_actions();
    let mut q = vec![0.0; mdp.n_states() * m];
    for s in 0..mdp.n_states() {
        for a in 0..m {
            let x = match signal {
                Signal::Reward => mdp.reward(s, a),
                Signal::Cost => mdp.cost(s),
            };
            q[s * m + a] = x + mdp.discount() * expect(mdp, s, a, v);
        }
    }
    q
}

/// The REF Bellman operator `B[p](s) = max{1_{h(s)>0}, γp Σ π P p(s')}`.
pub fn ref_bellman(mdp: &FiniteMdp, policy: &TabularPolicy, ref_discount: f64, p: &[f64]) -> Vec<f64> {
    (0..mdp.n_states())
        .map(|s| {
            if mdp.cost(s) > 0.0 {
                1.0
            } else {
                ref_discount * policy_expect(mdp, policy, s, p)
            }
        })
        .collect()
}

/// Fixed point of the REF Bellman operator.
///
/// With `ref_discount < 1` this is the unique fixed point, reached from zeros.
/// With `ref_discount = 1` it is the least fixed point, reached by monotone
/// iteration from the violation indicator; this is the exact probability of
/// ever visiting a violating state.
pub fn ref_fixed_point(mdp: &FiniteMdp, policy: &TabularPolicy, ref_discount: f64) -> Result<Vec<f64>> {
    policy.check_against(mdp)?;
    if !(ref_discount > 0.0 && ref_discount <= 1.0) {
        return Err(Error::InvalidModel(format!("REF discount {ref_discount} outside (0,1]")));
    }
    let n = mdp.n_states();
    let safe = persistently_safe(mdp, policy);
    let mut p: Vec<f64> = if ref_discount < 1.0 {
        vec![0.0; n]
    } else {
        mdp.violation().as_f64()
    };
    for _ in 0..MAX_SWEEPS {
        let mut next = ref_bellman(mdp, policy, ref_discount, &p);
        for (s, x) in next.iter_mut().enumerate() {
            if safe[s] {
                *x = 0.0;
            }
        }
        let d = sup_diff(&next, &p);
        p = next;
        if d <= TOL * 1e-2 {
            return Ok(p);
        }
    }
    Err(Error::NoConvergence { iterations: MAX_SWEEPS, residual: f64::NAN })
}

/// Optimal (minimal) discounted cost value and a greedy safest policy.
#[derive(Debug, Clone)]
pub struct SafestPolicy {
    pub policy: TabularPolicy,
    pub v_c: Vec<f64>,
}

/// Value iteration `V(s) = base(s) + γ opt_a Σ P V` restricted to `allowed` actions.
fn value_iteration(
    mdp: &FiniteMdp,
    allowed: &dyn Fn(usize, usize) -> bool,
    backup: &dyn Fn(usize, usize, &[f64]) -> f64,
    minimize: bool,
) -> Result<Vec<f64>> {
    let n = mdp.n_states();
    let gamma = mdp.discount();
    let stop = TOL * (1.0 - gamma);
    let mut v = vec![0.0; n];
    for _ in 0..MAX_SWEEPS {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                let vals = (0..mdp.n_actions()).filter(|&a| allowed(s, a)).map(|a| backup(s, a, &v));
                if minimize {
                    vals.fold(f64::INFINITY, f64::min)
                } else {
                    vals.fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect();
        let d = sup_diff(&next, &v);
        v = next;
        if d <= stop {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence { iterations: MAX_SWEEPS, residual: f64::NAN })
}

/// Minimal probability of ever reaching a violation when each state may only
/// use `allowed` actions (monotone iteration from the indicator).
fn min_reach(mdp: &FiniteMdp, allowed: &[Vec<usize>]) -> Result<Vec<f64>> {
    let n = mdp.n_states();
    let mut p = mdp.violation().as_f64();
    for _ in 0..MAX_SWEEPS {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                if mdp.cost(s) > 0.0 {
                    1.0
                } else {
                    allowed[s].iter().map(|&a| expect(mdp, s, a, &p)).fold(f64::INFINITY, f64::min)
                }
            })
            .collect();
        let d = sup_diff(&next, &p);
        p = next;
        if d <= TOL * 1e-2 {
            return Ok(p);
        }
    }
    Err(Error::NoConvergence { iterations: MAX_SWEEPS, residual: f64::NAN })
}

/// Policy minimizing the discounted cost return from every state.
///
/// Ties among cost-optimal actions (within [`TIE_TOL`]) are broken by the
/// smallest expected successor reach probability, computed over cost-optimal
/// actions only, then by the lowest action index.
pub fn safest_policy(mdp: &FiniteMdp) -> Result<SafestPolicy> {
    let gamma = mdp.discount();
    let v_c = value_iteration(
        mdp,
        &|_, _| true,
        &|s, a, v| mdp.cost(s) + gamma * expect(mdp, s, a, v),
        true,
    )?;
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let optimal: Vec<Vec<usize>> = (0..n)
        .map(|s| {
            let q: Vec<f64> = (0..m).map(|a| expect(mdp, s, a, &v_c)).collect();
            let best = q.iter().copied().fold(f64::INFINITY, f64::min);
            (0..m).filter(|&a| q[a] <= best + TIE_TOL).collect()
        })
        .collect();
    let reach = min_reach(mdp, &optimal)?;
    let mut actions = Vec::with_capacity(n);
    for (s, acts) in optimal.iter().enumerate() {
        let mut best = acts[0];
        let mut best_val = expect(mdp, s, best, &reach);
        for &a in &acts[1..] {
            let val = expect(mdp, s, a, &reach);
            if val < best_val - TIE_TOL {
                best = a;
                best_val = val;
            }
        }
        actions.push(best);
    }
    Ok(SafestPolicy { policy: TabularPolicy::deterministic(m, &actions)?, v_c })
}

/// Optimal REF: the safest policy's reach probability, exact and discounted.
#[derive(Debug, Clone)]
pub struct OptimalRef {
    pub safest: SafestPolicy,
    /// `γp = 1`.
    pub phi_exact: Vec<f64>,
    /// `γp` equal to the MDP discount, the quantity a learner targets.
    pub phi_discounted: Vec<f64>,
    pub feasible: Vec<bool>,
}

pub fn optimal_ref(mdp: &FiniteMdp) -> Result<OptimalRef> {
    let safest = safest_policy(mdp)?;
    let phi_exact = ref_fixed_point(mdp, &safest.policy, 1.0)?;
    let phi_discounted = ref_fixed_point(mdp, &safest.policy, mdp.discount())?;
    let feasible = phi_exact.iter().map(|&p| p <= TOL_FEAS).collect();
    Ok(OptimalRef { safest, phi_exact, phi_discounted, feasible })
}

/// `V_h(s) = max{h(s), γ_h V_h(s')}` on a deterministic MDP under a deterministic policy.
pub fn reachability_value(mdp: &FiniteMdp, policy: &TabularPolicy, gamma_h: f64) -> Result<Vec<f64>> {
    policy.check_against(mdp)?;
    if !(gamma_h > 0.0 && gamma_h <= 1.0) {
        return Err(Error::InvalidModel(format!("reachability discount {gamma_h} outside (0,1]")));
    }
    let n = mdp.n_states();
    let mut succ = Vec::with_capacity(n);
    for s in 0..n {
        let row = policy.row(s);
        let acts: Vec<usize> = (0..row.len()).filter(|&a| row[a] > 0.0).collect();
        if acts.len() != 1 || mdp.successors(s, acts[0]).len() != 1 {
            return Err(Error::Unsupported(format!(
                "reachability value needs deterministic dynamics and policy (state {s} branches)"
            )));
        }
        succ.push(mdp.successors(s, acts[0])[0].0);
    }
    // Each trajectory is a lasso with at most n distinct states, so n sweeps suffice.
    let mut v: Vec<f64> = mdp.costs().to_vec();
    for _ in 0..=n {
        v = (0..n).map(|s| mdp.cost(s).max(gamma_h * v[succ[s]])).collect();
    }
    Ok(v)
}

/// Best zero-violation reward from each state of the zero-cost region.
#[derive(Debug, Clone)]
pub struct ConstrainedReference {
    /// `None` outside the zero-cost region.
    pub value: Vec<Option<f64>>,
    /// Restricted reward-optimal actions on the region, safest actions elsewhere.
    pub policy: TabularPolicy,
    pub region: Vec<bool>,
}

impl ConstrainedReference {
    pub fn is_empty(&self) -> bool {
        !self.region.iter().any(|&f| f)
    }

    /// Expected value over an initial distribution restricted to the region.
    pub fn mean_over(&self, d0: &[f64]) -> Option<f64> {
        let mut mass = 0.0;
        let mut total = 0.0;
        for (s, &w) in d0.iter().enumerate() {
            if let (Some(v), true) = (self.value[s], w > 0.0) {
                mass += w;
                total += w * v;
            }
        }
        (mass > 0.0).then(|| total / mass)
    }
}

pub fn constrained_optimal_reference(mdp: &FiniteMdp) -> Result<ConstrainedReference> {
    let safest = safest_policy(mdp)?;
    constrained_reference_from(mdp, &safest)
}

pub fn constrained_reference_from(mdp: &FiniteMdp, safest: &SafestPolicy) -> Result<ConstrainedReference> {
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let region: Vec<bool> = safest.v_c.iter().map(|&v| v == 0.0).collect();
    let admissible = |s: usize, a: usize| region[s] && mdp.successors(s, a).iter().all(|&(n, _)| region[n]);
    for s in (0..n).filter(|&s| region[s]) {
        assert!(
            (0..m).any(|a| admissible(s, a)),
            "zero-cost state {s} has no action staying in the zero-cost region"
        );
    }
    let gamma = mdp.discount();
    let v = value_iteration(
        mdp,
        &|s, a| !region[s] || admissible(s, a),
        &|s, a, v| if region[s] { mdp.reward(s, a) + gamma * expect(mdp, s, a, v) } else { 0.0 },
        false,
    )?;
    let mut actions = Vec::with_capacity(n);
    for s in 0..n {
        if !region[s] {
            let row = safest.policy.row(s);
            actions.push(row.iter().position(|&p| p > 0.0).unwrap_or(0));
            continue;
        }
        let mut best = None;
        let mut best_val = f64::NEG_INFINITY;
        for a in (0..m).filter(|&a| admissible(s, a)) {
            let q = mdp.reward(s, a) + gamma * expect(mdp, s, a, &v);
            if q > best_val + TIE_TOL {
                best = Some(a);
                best_val = q;
            }
        }
        actions.push(best.expect("admissible action exists"));
    }
    let policy = TabularPolicy::deterministic(m, &actions)?;
    let exact = policy_eval(mdp, &policy, Signal::Reward)?;
    let value = (0..n).map(|s| region[s].then_some(exact[s])).collect();
    Ok(ConstrainedReference { value, policy, region })
}

/// Unconstrained optimal reward values and a greedy policy.
pub fn optimal_values(mdp: &FiniteMdp) -> Result<(Vec<f64>, TabularPolicy)> {
    let gamma = mdp.discount();
    let v = value_iteration(
        mdp,
        &|_, _| true,
        &|s, a, v| mdp.reward(s, a) + gamma * expect(mdp, s, a, v),
        false,
    )?;
    let q = q_from_v(mdp, &v, Signal::Reward);
    let m = mdp.n_actions();
    let actions: Vec<usize> = (0..mdp.n_states())
        .map(|s| {
            let row = &q[s * m..(s + 1) * m];
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter().position(|&x| x >= best - TIE_TOL).unwrap_or(0)
        })
        .collect();
    Ok((v, TabularPolicy::deterministic(m, &actions)?))
}

/// Re-entry certificate for a state of a deterministic MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct ReentryCertificate {
    /// `false` when no path to the feasible set exists.
    pub applicable: bool,
    /// Feasible set is reached at trajectory position `m` (position 1 is the start).
    pub m: Option<usize>,
    /// Largest gap between violations along the cheapest trajectory that never
    /// enters the feasible set; `None` when every trajectory enters it.
    pub w: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// Evaluate `H_max (1−γ^{m−1})/(1−γ) < H_min γ^w/(1−γ^w)` for the given state.
pub fn reentry_certificate(mdp: &FiniteMdp, state: usize, gamma: f64) -> Result<ReentryCertificate> {
    Ok(reentry_certificates(mdp, &[state], gamma)?.remove(0))
}

/// [`reentry_certificate`] for many states, sharing the value computations.
pub fn reentry_certificates(mdp: &FiniteMdp, states: &[usize], gamma: f64) -> Result<Vec<ReentryCertificate>> {
    if !mdp.is_deterministic() {
        return Err(Error::Unsupported("re-entry certificate needs a deterministic MDP".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidModel(format!("discount {gamma} outside (0,1)")));
    }
    let n = mdp.n_states();
    if let Some(&s) = states.iter().find(|&&s| s >= n) {
        return Err(Error::InvalidModel(format!("state {s} out of range")));
    }
    let mdp = mdp.with_discount(gamma)?;
    let safest = safest_policy(&mdp)?;
    let feasible: Vec<bool> = safest.v_c.iter().map(|&v| v == 0.0).collect();
    let succ = |s: usize, a: usize| mdp.successors(s, a)[0].0;

    // Cheapest trajectories that stay outside the feasible set forever.
    let allowed = |s: usize, a: usize| !feasible[s] && !feasible[succ(s, a)];
    let mut alive: Vec<bool> = feasible.iter().map(|f| !f).collect();
    // Prune states with no way to stay outside.
    loop {
        let mut changed = false;
        for s in 0..n {
            if alive[s] && !(0..mdp.n_actions()).any(|a| allowed(s, a) && alive[succ(s, a)]) {
                alive[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut stay_out: Option<Vec<f64>> = None;
    let h_max = mdp.h_max();
    let h_min = mdp.h_min().unwrap_or(0.0);
    let mut out = Vec::with_capacity(states.len());
    for &state in states {
        // m: shortest path to the feasible set.
        let mut dist = vec![usize::MAX; n];
        dist[state] = 0;
        let mut queue = VecDeque::from([state]);
        let mut hit = None;
        while let Some(s) = queue.pop_front() {
            if feasible[s] {
                hit = Some(dist[s]);
                break;
            }
            for a in 0..mdp.n_actions() {
                let t = succ(s, a);
                if dist[t] == usize::MAX {
                    dist[t] = dist[s] + 1;
                    queue.push_back(t);
                }
            }
        }
        let Some(steps) = hit else {
            out.push(ReentryCertificate {
                applicable: false,
                m: None,
                w: None,
                lhs: f64::NAN,
                rhs: f64::NAN,
                satisfied: false,
            });
            continue;
        };
        let m = steps + 1;
        if m == 1 {
            out.push(ReentryCertificate { applicable: true, m: Some(1), w: None, lhs: 0.0, rhs: f64::INFINITY, satisfied: true });
            continue;
        }
        let lhs = h_max * (1.0 - gamma.powi(steps as i32)) / (1.0 - gamma);
        let w = if !alive[state] {
            None
        } else {
            if stay_out.is_none() {
                stay_out = Some(value_iteration(
                    &mdp,
                    &|s, a| !alive[s] || (allowed(s, a) && alive[succ(s, a)]),
                    &|s, a, v| if alive[s] { mdp.cost(s) + gamma * v[succ(s, a)] } else { 0.0 },
                    true,
                )?);
            }
            let v = stay_out.as_deref().unwrap_or_default();
            let next = |s: usize| {
                let mut best = None;
                let mut best_val = f64::INFINITY;
                for a in (0..mdp.n_actions()).filter(|&a| allowed(s, a) && alive[succ(s, a)]) {
                    let q = v[succ(s, a)];
                    if q < best_val - TIE_TOL {
                        best = Some(succ(s, a));
                        best_val = q;
                    }
                }
                best.expect("alive state has a surviving action")
            };
            // Unroll the lasso long enough to see two full cycles.
            let mut seen = vec![usize::MAX; n];
            let mut path = vec![state];
            seen[state] = 0;
            let mut s = state;
            let (mu, lambda) = loop {
                s = next(s);
                if seen[s] != usize::MAX {
                    break (seen[s], path.len() - seen[s]);
                }
                seen[s] = path.len();
                path.push(s);
            };
            let total = mu + 2 * lambda + 1;
            let at = |t: usize| if t < path.len() { path[t] } else { path[mu + (t - mu) % lambda] };
            let mut last = 0;
            let mut gap = 0;
            for t in 1..=total {
                if mdp.cost(at(t)) > 0.0 {
                    gap = gap.max(t - last);
                    last = t;
                }
            }
            Some(gap.max(1))
        };
        let rhs = match w {
            None => f64::INFINITY,
            Some(w) => {
                let gw = gamma.powi(w as i32);
                h_min * gw / (1.0 - gw)
            }
        };
        out.push(ReentryCertificate { applicable: true, m: Some(m), w, lhs, rhs, satisfied: lhs < rhs });
    }
    Ok(out)
}

/// Everything the oracle knows about one MDP and one policy.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub v: Vec<f64>,
    pub v_c: Vec<f64>,
    /// Only for deterministic MDPs and policies.
    pub v_h: Option<Vec<f64>>,
    pub phi: Vec<f64>,
    pub phi_star: Vec<f64>,
    pub phi_star_discounted: Vec<f64>,
    pub safest_policy: TabularPolicy,
    pub v_c_star: Vec<f64>,
    pub feasible_mask: Vec<bool>,
    pub constrained_optimal_v: Vec<Option<f64>>,
}

impl OracleSolution {
    pub fn compute(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<Self> {
        let opt = optimal_ref(mdp)?;
        let constrained = constrained_reference_from(mdp, &opt.safest)?;
        let v_h = if mdp.is_deterministic() && policy.is_deterministic() {
            Some(reachability_value(mdp, policy, 1.0)?)
        } else {
            None
        };
        Ok(Self {
            v: policy_eval(mdp, policy, Signal::Reward)?,
            v_c: policy_eval(mdp, policy, Signal::Cost)?,
            v_h,
            phi: ref_fixed_point(mdp, policy, 1.0)?,
            phi_star: opt.phi_exact,
            phi_star_discounted: opt.phi_discounted,
            safest_policy: opt.safest.policy,
            v_c_star: opt.safest.v_c,
            feasible_mask: opt.feasible,
            constrained_optimal_v: constrained.value,
        })
    }

    /// `state,v,v_c,phi_star,feasible` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "v", "v_c", "phi_star", "phi_star_discounted", "feasible"])?;
        for s in 0..self.v.len() {
            w.write_record([
                s.to_string(),
                self.v[s].to_string(),
                self.v_c[s].to_string(),
                self.phi_star[s].to_string(),
                self.phi_star_discounted[s].to_string(),
                u8::from(self.feasible_mask[s]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::FiniteMdpBuilder;

    fn one_state(r: f64) -> FiniteMdp {
        let mut b = FiniteMdpBuilder::new(1, 1);
        b.deterministic(0, 0, 0).reward(0, 0, r).discount(0.9);
        b.build().unwrap()
    }

    /// s0 → violation (s1) w.p. 0.3, absorbing safe (s2) w.p. 0.7.
    fn split() -> FiniteMdp {
        let mut b = FiniteMdpBuilder::new(3, 1);
        b.transition(0, 0, &[(1, 0.3), (2, 0.7)])
            .deterministic(1, 0, 1)
            .cost(1, 1.0)
            .absorbing(2);
        b.build().unwrap()
    }

    #[test]
    fn geometric_value() {
        let mdp = one_state(1.0);
        let v = policy_eval(&mdp, &TabularPolicy::uniform(1, 1), Signal::Reward).unwrap();
        assert!((v[0] - 10.0).abs() < 1e-12);
        let vc = policy_eval(&mdp, &TabularPolicy::uniform(1, 1), Signal::Cost).unwrap();
        assert_eq!(vc[0], 0.0);
    }

    #[test]
    fn split_reach_probabilities() {
        let mdp = split();
        let pi = TabularPolicy::uniform(3, 1);
        let p1 = ref_fixed_point(&mdp, &pi, 1.0).unwrap();
        assert!((p1[0] - 0.3).abs() < 1e-12);
        assert_eq!(p1[1], 1.0);
        assert_eq!(p1[2], 0.0);
        let p99 = ref_fixed_point(&mdp, &pi, 0.99).unwrap();
        assert!((p99[0] - 0.297).abs() < 1e-12);
    }

    #[test]
    fn reachability_value_is_max_of_future_costs() {
        let mut b = FiniteMdpBuilder::new(4, 1);
        b.deterministic(0, 0, 1).deterministic(1, 0, 2).deterministic(2, 0, 3).absorbing(3);
        b.cost(1, 2.0).cost(2, 1.0);
        let mdp = b.build().unwrap();
        let v = reachability_value(&mdp, &TabularPolicy::uniform(4, 1), 1.0).unwrap();
        assert_eq!(v[0], 2.0);
        assert_eq!(v[3], 0.0);
        let err = reachability_value(&split(), &TabularPolicy::uniform(3, 1), 1.0).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    /// Chain: start (cost 1) → s1 (cost 1) → feasible absorbing; or a
    /// violating self-loop reachable from the start.
    fn reentry_chain() -> FiniteMdp {
        let mut b = FiniteMdpBuilder::new(4, 2);
        b.deterministic(0, 0, 1).deterministic(0, 1, 3);
        b.deterministic(1, 0, 2).deterministic(1, 1, 2);
        b.absorbing(2);
        b.deterministic(3, 0, 3).deterministic(3, 1, 3);
        b.cost(0, 1.0).cost(1, 1.0).cost(3, 1.0);
        b.build().unwrap()
    }

    #[test]
    fn reentry_certificate_examples() {
        let mdp = reentry_chain();
        let c = reentry_certificate(&mdp, 0, 0.99).unwrap();
        assert_eq!((c.m, c.w), (Some(3), Some(1)));
        assert!((c.lhs - 1.99).abs() < 1e-12);
        assert!((c.rhs - 99.0).abs() < 1e-9);
        assert!(c.satisfied);
        let c = reentry_certificate(&mdp, 0, 0.3).unwrap();
        assert!((c.lhs - 1.3).abs() < 1e-12);
        assert!((c.rhs - 0.3 / 0.7).abs() < 1e-12);
        assert!(!c.satisfied);
        let c = reentry_certificate(&mdp, 2, 0.3).unwrap();
        assert_eq!(c.m, Some(1));
        assert_eq!(c.lhs, 0.0);
        assert!(c.satisfied);
    }

    #[test]
    fn empty_feasible_region() {
        let mut b = FiniteMdpBuilder::new(1, 1);
        b.deterministic(0, 0, 0).cost(0, 1.0);
        let r = constrained_optimal_reference(&b.build().unwrap()).unwrap();
        assert!(r.is_empty());
        assert_eq!(r.value, vec![None]);
    }
}
