//! Fixed-step solver for hybrid systems
//!
//! ```text
//!   ẋ = F(x)   x ∈ C (flow set)
//!   x⁺ = G(x)  x ∈ D (jump set)
//! ```
//!
//! producing solutions on hybrid time domains. Flows use classical RK4 in the
//! ambient coordinates followed by a system-supplied projection (rotation
//! blocks are pulled back onto SO(3)). Entry into the jump set during a step
//! is localized by bisection on the system's jump indicator.

use thiserror::Error;

/// Hybrid time `(t, j)`: flow time and jump count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridTime {
    pub t: f64,
    pub j: usize,
}

impl HybridTime {
    /// Lexicographic order along a solution.
    pub fn precedes_or_equals(&self, other: &HybridTime) -> bool {
        self.t < other.t || (self.t == other.t && self.j <= other.j)
    }
}

/// A hybrid system over a flat state vector.
///
/// Set membership is encoded by a scalar indicator: by default the state is
/// in the jump set when `jump_indicator >= 0` and in the flow set when
/// `jump_indicator <= 0`, so the two closed sets cover the state space and
/// intersect on the boundary.
pub trait HybridSystem {
    /// Per-sample data recorded alongside the state.
    type Record: Clone;

    fn dim(&self) -> usize;

    fn flow(&self, t: f64, x: &[f64], dx: &mut [f64]);

    fn jump(&self, t: f64, x: &[f64]) -> Vec<f64>;

    fn jump_indicator(&self, t: f64, x: &[f64]) -> f64;

    fn in_flow_set(&self, t: f64, x: &[f64]) -> bool {
        self.jump_indicator(t, x) <= 0.0
    }

    fn in_jump_set(&self, t: f64, x: &[f64]) -> bool {
        self.jump_indicator(t, x) >= 0.0
    }

    /// Restores manifold constraints after a step or jump.
    fn project(&self, _x: &mut [f64]) {}

    /// Called once per step before any evaluation at time `t` (jump checks,
    /// recording, and the flow step that starts at `t`).
    fn begin_step(&mut self, _t: f64) {}

    /// Domain checks run after every accepted step.
    fn check(&self, _t: f64, _x: &[f64]) -> Result<(), String> {
        Ok(())
    }

    fn record(&self, t: f64, x: &[f64]) -> Self::Record;
}

/// Which map wins on the intersection of the flow and jump sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Priority {
    Jump,
    Flow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_max: f64,
    pub j_max: usize,
    pub priority: Priority,
    /// Localize jump-set entry within a step by bisection.
    pub refine: bool,
    /// Bisection tolerance; `None` means `1e-9 · dt`.
    pub refine_tol: Option<f64>,
    /// Uniform sub-samples used to find the first sign change in a step.
    pub refine_subdivisions: usize,
    /// Consecutive jumps allowed at one instant before aborting.
    pub chatter_limit: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_max: 20.0,
            j_max: 50,
            priority: Priority::Jump,
            refine: true,
            refine_tol: None,
            refine_subdivisions: 8,
            chatter_limit: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(SolverError::InvalidConfig(format!(
                "t_max must be nonnegative, got {}",
                self.t_max
            )));
        }
        if self.j_max < 1 {
            return Err(SolverError::InvalidConfig("j_max must be at least 1".into()));
        }
        if self.refine_subdivisions < 1 {
            return Err(SolverError::InvalidConfig("refine_subdivisions must be at least 1".into()));
        }
        Ok(())
    }

    fn tolerance(&self) -> f64 {
        self.refine_tol.unwrap_or(1e-9 * self.dt)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("initial state has dimension {got}, system expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("{jumps} consecutive jumps at t = {t} without flowing (chattering)")]
    Chattering { t: f64, jumps: usize },
    #[error("state at (t = {t}, j = {j}) is in neither the flow set nor the jump set")]
    LeftDomain { t: f64, j: usize },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("rejected at t = {t}: {message}")]
    Rejected { t: f64, message: String },
}

#[derive(Debug, Clone)]
pub struct ArcSample<R> {
    pub time: HybridTime,
    pub state: Vec<f64>,
    pub record: R,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub t: f64,
    /// Jump counter before the jump.
    pub j: usize,
    /// Index of the pre-jump sample in [`HybridArc::samples`].
    pub pre: usize,
    /// Index of the post-jump sample.
    pub post: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    TimeLimit,
    JumpLimit,
}

/// A solution sampled on its hybrid time domain.
#[derive(Debug, Clone)]
pub struct HybridArc<R> {
    pub samples: Vec<ArcSample<R>>,
    pub jumps: Vec<JumpEvent>,
    pub termination: Termination,
}

impl<R> HybridArc<R> {
    pub fn last(&self) -> &ArcSample<R> {
        self.samples.last().expect("arcs always hold the initial sample")
    }

    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    /// Consecutive sample pairs that belong to the same flow interval.
    pub fn flow_steps(&self) -> impl Iterator<Item = (&ArcSample<R>, &ArcSample<R>)> {
        self.samples
            .windows(2)
            .filter(|w| w[0].time.j == w[1].time.j)
            .map(|w| (&w[0], &w[1]))
    }

    /// Checks the hybrid-time bookkeeping: `(t, j)` is lexicographically
    /// nondecreasing, `j` is constant within flows, and each jump keeps `t`
    /// and increments `j` by exactly one.
    pub fn check_well_formed(&self) -> Result<(), String> {
        for (k, w) in self.samples.windows(2).enumerate() {
            let (a, b) = (w[0].time, w[1].time);
            if !a.precedes_or_equals(&b) {
                return Err(format!("sample {k}: hybrid time decreases"));
            }
            if b.j != a.j && !(b.j == a.j + 1 && b.t == a.t) {
                return Err(format!("sample {k}: invalid jump bookkeeping"));
            }
            if b.j == a.j && b.t <= a.t {
                return Err(format!("sample {k}: flow step without progress"));
            }
        }
        for e in &self.jumps {
            let (pre, post) = (&self.samples[e.pre], &self.samples[e.post]);
            if pre.time.t != e.t || post.time.t != e.t || pre.time.j != e.j || post.time.j != e.j + 1 {
                return Err(format!("jump at t = {} is inconsistent with its samples", e.t));
            }
        }
        Ok(())
    }
}

/// Result of [`detect_crossing`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crossing {
    /// First sign change, localized to within the tolerance. The returned
    /// time lies on the far side of the change.
    At(f64),
    None,
}

/// Locates the first sign change of `f` on `[0, h]`, treating `f >= 0` as
/// one sign. `f` is sampled at `subdivisions` uniform points and the first
/// bracketing interval is bisected down to `tol`.
pub fn detect_crossing<F: FnMut(f64) -> f64>(mut f: F, h: f64, tol: f64, subdivisions: usize) -> Crossing {
    let n = subdivisions.max(1);
    let start_sign = f(0.0) >= 0.0;
    let mut lo = 0.0;
    for k in 1..=n {
        let tau = h * k as f64 / n as f64;
        if (f(tau) >= 0.0) != start_sign {
            let mut hi = tau;
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if (f(mid) >= 0.0) == start_sign {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Crossing::At(hi);
        }
        lo = tau;
    }
    Crossing::None
}

fn rk4_step<S: HybridSystem + ?Sized>(sys: &S, t: f64, x: &[f64], h: f64, scratch: &mut Rk4Scratch) -> Vec<f64> {
    let n = x.len();
    let Rk4Scratch { k1, k2, k3, k4, tmp } = scratch;
    sys.flow(t, x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    sys.flow(t + 0.5 * h, tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    sys.flow(t + 0.5 * h, tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    sys.flow(t + h, tmp, k4);
    let mut out: Vec<f64> = (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    sys.project(&mut out);
    out
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

fn should_jump<S: HybridSystem + ?Sized>(sys: &S, priority: Priority, t: f64, x: &[f64]) -> bool {
    match priority {
        Priority::Jump => sys.in_jump_set(t, x),
        Priority::Flow => sys.in_jump_set(t, x) && !sys.in_flow_set(t, x),
    }
}

/// Solves the hybrid system from `x0` until `t_max` or `j_max` jumps.
pub fn solve<S: HybridSystem + ?Sized>(
    sys: &mut S,
    x0: &[f64],
    cfg: &SolverConfig,
) -> Result<HybridArc<S::Record>, SolverError> {
    cfg.validate()?;
    if x0.len() != sys.dim() {
        return Err(SolverError::Dimension {
            expected: sys.dim(),
            got: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    sys.project(&mut x);
    let mut t = 0.0;
    let mut j = 0usize;
    let mut scratch = Rk4Scratch::new(x.len());
    let end_slack = 1e-9 * cfg.dt;

    sys.begin_step(t);
    let mut samples = vec![ArcSample {
        time: HybridTime { t, j },
        record: sys.record(t, &x),
        state: x.clone(),
    }];
    let mut jumps = Vec::new();

    loop {
        let mut burst = 0usize;
        while should_jump(sys, cfg.priority, t, &x) {
            if burst >= cfg.chatter_limit {
                return Err(SolverError::Chattering { t, jumps: burst + 1 });
            }
            let mut next = sys.jump(t, &x);
            sys.project(&mut next);
            x = next;
            burst += 1;
            let pre = samples.len() - 1;
            j += 1;
            samples.push(ArcSample {
                time: HybridTime { t, j },
                record: sys.record(t, &x),
                state: x.clone(),
            });
            jumps.push(JumpEvent {
                t,
                j: j - 1,
                pre,
                post: samples.len() - 1,
            });
            if j >= cfg.j_max {
                return Ok(HybridArc {
                    samples,
                    jumps,
                    termination: Termination::JumpLimit,
                });
            }
        }
        if !sys.in_flow_set(t, &x) {
            return Err(SolverError::LeftDomain { t, j });
        }
        if t >= cfg.t_max - end_slack {
            break;
        }

        let mut h = cfg.dt.min(cfg.t_max - t);
        let mut next = rk4_step(sys, t, &x, h, &mut scratch);
        if cfg.refine && !should_jump(sys, cfg.priority, t, &x) && should_jump(sys, cfg.priority, t, &next) {
            let x_start = x.clone();
            let crossing = detect_crossing(
                |tau| {
                    if tau == 0.0 {
                        return sys.jump_indicator(t, &x_start);
                    }
                    let y = rk4_step(sys, t, &x_start, tau, &mut Rk4Scratch::new(x_start.len()));
                    sys.jump_indicator(t + tau, &y)
                },
                h,
                cfg.tolerance(),
                cfg.refine_subdivisions,
            );
            if let Crossing::At(tau) = crossing {
                if tau < h {
                    h = tau;
                    next = rk4_step(sys, t, &x, h, &mut scratch);
                }
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite { t: t + h });
        }
        x = next;
        t += h;
        if cfg.t_max - t < end_slack {
            t = cfg.t_max;
        }
        sys.check(t, &x).map_err(|message| SolverError::Rejected { t, message })?;
        sys.begin_step(t);
        samples.push(ArcSample {
            time: HybridTime { t, j },
            record: sys.record(t, &x),
            state: x.clone(),
        });
    }

    Ok(HybridArc {
        samples,
        jumps,
        termination: Termination::TimeLimit,
    })
}
