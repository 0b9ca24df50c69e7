//! Runs scenario members in parallel and writes their artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hybrid_attitude::controllers::{ClosedLoop, ControllerKind, LoopRecord, LoopState};
use hybrid_attitude::hybrid::{solve, HybridArc, SolverError};
use hybrid_attitude::monitors::{
    certify_arc, monitor_series, CertificationReport, CertifyOptions, MonitorError, MonitorKind, MonitorRecord,
};
use hybrid_attitude::so3::rot_distance;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, Member, Scenario};
use crate::output::{line_chart, trajectory_csv, Series};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{label}: {source}")]
    Solver {
        label: String,
        #[source]
        source: SolverError,
    },
    #[error("{label}: {source}")]
    Monitor {
        label: String,
        #[source]
        source: MonitorError,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit code: 1 for configuration problems, 2 for solver
    /// failures. Monitor and I/O errors count as solver-side failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Solver { .. } | Self::Monitor { .. } | Self::Io { .. } => 2,
        }
    }
}

/// A simulated and certified scenario member.
#[derive(Debug, Clone)]
pub struct MemberResult {
    pub label: String,
    pub kind: ControllerKind,
    /// The closed loop as configured, before the run consumed its noise.
    pub closed_loop: ClosedLoop,
    pub arc: HybridArc<LoopRecord>,
    pub series: Vec<MonitorRecord>,
    pub report: CertificationReport,
}

impl MemberResult {
    /// Earliest time after which `|R_e|_I` stays below `threshold`.
    pub fn settling_time(&self, threshold: f64) -> Option<f64> {
        settle(&self.series, threshold, |r| r.dist_re)
    }

    pub fn final_state(&self) -> LoopState {
        LoopState::from_slice(&self.arc.last().state)
    }

    pub fn csv(&self, stride: usize) -> String {
        trajectory_csv(
            &self.arc,
            &self.series,
            self.kind,
            self.closed_loop.params(),
            &self.report,
            stride,
        )
    }
}

fn settle(series: &[MonitorRecord], threshold: f64, f: impl Fn(&MonitorRecord) -> f64) -> Option<f64> {
    if series.last().is_none_or(|r| f(r) >= threshold) {
        return None;
    }
    let last_above = series.iter().rposition(|r| f(r) >= threshold);
    Some(match last_above {
        Some(i) => series[i + 1].time.t,
        None => series[0].time.t,
    })
}

/// Simulates and certifies one member.
pub fn simulate_member(m: &Member, scenario: &Scenario) -> Result<MemberResult, RunError> {
    let mut lp = m.closed_loop.clone();
    let arc = solve(&mut lp, &m.x0, &scenario.solver).map_err(|source| RunError::Solver {
        label: m.label.clone(),
        source,
    })?;
    let monitor = MonitorKind::for_controller(m.kind);
    let wrap = |source| RunError::Monitor {
        label: m.label.clone(),
        source,
    };
    let series = monitor_series(&arc, &m.closed_loop, monitor).map_err(wrap)?;
    let report = certify_arc(&arc, &m.closed_loop, monitor, &CertifyOptions::default()).map_err(wrap)?;
    Ok(MemberResult {
        label: m.label.clone(),
        kind: m.kind,
        closed_loop: m.closed_loop.clone(),
        arc,
        series,
        report,
    })
}

/// Simulates all members in parallel; results keep the member order.
pub fn simulate(scenario: &Scenario) -> Result<Vec<MemberResult>, RunError> {
    scenario
        .members
        .par_iter()
        .map(|m| simulate_member(m, scenario))
        .collect()
}

/// Outcome of [`run_scenario`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub results: Vec<MemberResult>,
    pub files: Vec<PathBuf>,
    pub text: String,
}

impl RunSummary {
    pub fn all_certified(&self) -> bool {
        self.results.iter().all(|r| r.report.passed())
    }

    /// 0 when every member certified, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_certified() {
            0
        } else {
            3
        }
    }
}

fn write(path: PathBuf, contents: &str, files: &mut Vec<PathBuf>) -> Result<(), RunError> {
    fs::write(&path, contents).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    files.push(path);
    Ok(())
}

pub fn summary_text(scenario: &Scenario, results: &[MemberResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {}", scenario.name);
    for w in &scenario.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    let _ = writeln!(
        s,
        "{:<24} {:>6} {:>12} {:>12} {:>12} {:>6}",
        "member", "jumps", "t(|Re|<0.1)", "|Re| final", "|we| final", "cert"
    );
    for r in results {
        let settle = r.settling_time(0.1).map_or("-".to_string(), |t| format!("{t:.3}"));
        let last = r.final_state();
        let _ = writeln!(
            s,
            "{:<24} {:>6} {:>12} {:>12.3e} {:>12.3e} {:>6}",
            r.label,
            r.arc.jump_count(),
            settle,
            rot_distance(&last.re),
            last.omega_e.norm(),
            if r.report.passed() { "PASS" } else { "FAIL" }
        );
    }
    s
}

fn plots(results: &[MemberResult]) -> Vec<(&'static str, String)> {
    let overlay = |f: &dyn Fn(&MonitorRecord) -> f64| -> Vec<Series> {
        results
            .iter()
            .map(|r| Series {
                name: r.label.clone(),
                points: r.series.iter().map(|m| (m.time.t, f(m))).collect(),
            })
            .collect()
    };
    let theta: Vec<Series> = results
        .iter()
        .map(|r| Series {
            name: r.label.clone(),
            points: r.arc.samples.iter().map(|s| (s.time.t, s.state[9])).collect(),
        })
        .collect();
    let torque: Vec<Series> = results
        .iter()
        .flat_map(|r| {
            ["x", "y", "z"].into_iter().enumerate().map(move |(k, c)| Series {
                name: format!("{} tau_{c}", r.label),
                points: r.arc.samples.iter().map(|s| (s.time.t, s.record.torque[k])).collect(),
            })
        })
        .collect();
    vec![
        ("dist_re", line_chart("Attitude error", "t [s]", "|R_e|_I", &overlay(&|m| m.dist_re))),
        ("theta", line_chart("Warping angle", "t [s]", "theta [rad]", &theta)),
        (
            "omega_e",
            line_chart("Angular velocity error", "t [s]", "|omega_e| [rad/s]", &overlay(&|m| m.omega_e_norm)),
        ),
        ("torque", line_chart("Control torque", "t [s]", "tau [N m]", &torque)),
        ("lyapunov", line_chart("Lyapunov function", "t [s]", "L", &overlay(&|m| m.lyapunov))),
    ]
}

/// Writes every member's CSV and report, the summary and, optionally, the
/// plots into `out_dir/<scenario name>/`. Runs on the calling thread only.
pub fn write_outputs(
    scenario: &Scenario,
    results: &[MemberResult],
    out_dir: &Path,
    with_plots: bool,
) -> Result<Vec<PathBuf>, RunError> {
    let dir = out_dir.join(&scenario.name);
    fs::create_dir_all(&dir).map_err(|source| RunError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut files = Vec::new();
    for r in results {
        write(dir.join(format!("{}.csv", r.label)), &r.csv(scenario.csv_stride), &mut files)?;
        write(
            dir.join(format!("{}_report.txt", r.label)),
            &r.report.to_string(),
            &mut files,
        )?;
    }
    write(dir.join("summary.txt"), &summary_text(scenario, results), &mut files)?;
    if with_plots {
        for (name, svg) in plots(results) {
            write(dir.join(format!("{name}.svg")), &svg, &mut files)?;
        }
    }
    Ok(files)
}

pub fn run_scenario(scenario: &Scenario, out_dir: &Path, with_plots: bool) -> Result<RunSummary, RunError> {
    let results = simulate(scenario)?;
    let files = write_outputs(scenario, &results, out_dir, with_plots)?;
    let text = summary_text(scenario, &results);
    Ok(RunSummary { results, files, text })
}
