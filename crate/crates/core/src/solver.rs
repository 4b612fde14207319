//! Steady-state and transient solution of the sparse thermal system.
//!
//! Steady state: `G · T = P` via sparse Cholesky, with a Jacobi-
//! preconditioned conjugate-gradient fallback if the direct solve does not
//! reach the residual target. Transient: implicit time stepping (backward
//! Euler by default, Crank–Nicolson optionally), factoring the shifted
//! matrix once per step size and reusing it for every step.
//!
//! The linear algebra always runs sequentially, so temperatures are
//! bit-identical regardless of how many workers handled assembly; worker
//! parallelism lives entirely upstream (tiling, gridding, assembly).

use std::ops::Deref;
use std::sync::Once;

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::grid::ThermalGrid;
use crate::network::{map_power, SparseSystem};

/// Relative residual target for steady solves: ‖G·T − P‖∞ / ‖P‖∞.
pub const STEADY_RESIDUAL_TARGET: f64 = 1e-10;

/// Per-cell temperatures in kelvin, indexed by cell id.
#[derive(Clone, Debug)]
pub struct TemperatureField(pub Vec<f64>);

impl Deref for TemperatureField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TemperatureField {
    /// Hottest cell: (cell id, temperature). Ties resolve to the lowest id.
    pub fn hottest(&self) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &t) in self.0.iter().enumerate() {
            if t > best.1 {
                best = (i, t);
            }
        }
        best
    }

    pub fn coldest(&self) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, &t) in self.0.iter().enumerate() {
            if t < best.1 {
                best = (i, t);
            }
        }
        best
    }
}

/// Force the dense/sparse kernels sequential, once per process. Keeps every
/// temperature bit-identical across `--workers` settings.
fn sequential_linear_algebra() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        faer::set_global_parallelism(faer::Par::Seq);
    });
}

fn to_sparse(sys: &SparseSystem, diag_shift: &[f64], scale: f64) -> Result<SparseColMat<usize, f64>> {
    let mut triplets = Vec::with_capacity(sys.values.len());
    for (row, &shift) in diag_shift.iter().enumerate() {
        for k in sys.row_ptr[row]..sys.row_ptr[row + 1] {
            let col = sys.col_idx[k];
            let mut v = sys.values[k] * scale;
            if col == row {
                v += shift;
            }
            triplets.push(Triplet::new(row, col, v));
        }
    }
    SparseColMat::try_new_from_triplets(sys.n, sys.n, &triplets)
        .map_err(|e| Error::Numerical(format!("could not build sparse matrix: {e:?}")))
}

fn factorize(a: &SparseColMat<usize, f64>) -> Result<Llt<usize, f64>> {
    let sym = SymbolicLlt::try_new(a.symbolic(), Side::Lower)
        .map_err(|e| Error::Numerical(format!("symbolic factorization failed: {e:?}")))?;
    Llt::try_new_with_symbolic(sym, a.as_ref(), Side::Lower)
        .map_err(|e| Error::Numerical(format!("Cholesky factorization failed: {e:?}")))
}

fn solve_with(llt: &Llt<usize, f64>, rhs: &[f64]) -> Vec<f64> {
    let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
    let x = llt.solve(&b);
    (0..rhs.len()).map(|i| x[(i, 0)]).collect()
}

/// Relative infinity-norm residual of `G·T = P`.
pub fn steady_residual(sys: &SparseSystem, t: &[f64]) -> f64 {
    let gt = sys.multiply(t);
    let num = gt
        .iter()
        .zip(&sys.p)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let den = sys.p.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Jacobi-preconditioned conjugate gradients on `G·x = rhs`, warm-started
/// at `x0`. Returns the iterate once the relative residual drops below
/// `tol` (or after `max_iter` sweeps, whichever is first).
pub fn pcg_solve(sys: &SparseSystem, rhs: &[f64], x0: &[f64], tol: f64, max_iter: usize) -> Vec<f64> {
    let n = sys.n;
    let diag: Vec<f64> = (0..n).map(|i| sys.entry(i, i).max(f64::MIN_POSITIVE)).collect();
    let mut x = x0.to_vec();
    let gx = sys.multiply(&x);
    let mut r: Vec<f64> = rhs.iter().zip(&gx).map(|(b, a)| b - a).collect();
    let norm_b = rhs.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..max_iter {
        let rmax = r.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        if rmax / norm_b <= tol {
            break;
        }
        let gp = sys.multiply(&p);
        let pgp: f64 = p.iter().zip(&gp).map(|(a, b)| a * b).sum();
        if pgp <= 0.0 {
            break; // not positive definite along p; give up gracefully
        }
        let alpha = rz / pgp;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * gp[i];
        }
        z = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}

/// Reusable steady-state solver: factors `G` once and solves for any
/// number of source vectors.
pub struct SteadySolver {
    llt: Llt<usize, f64>,
    n: usize,
}

impl SteadySolver {
    pub fn new(sys: &SparseSystem) -> Result<Self> {
        sequential_linear_algebra();
        if sys.sink_conductance.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Numerical(
                "system has no thermal ground: no boundary face couples to the sink".into(),
            ));
        }
        let a = to_sparse(sys, &vec![0.0; sys.n], 1.0)?;
        Ok(SteadySolver {
            llt: factorize(&a)?,
            n: sys.n,
        })
    }

    /// Solve `G·T = sys.p` using the stored factorization, falling back to
    /// conjugate gradients if the direct solution misses the residual
    /// target (and failing loudly if that still is not enough).
    pub fn solve(&self, sys: &SparseSystem) -> Result<TemperatureField> {
        assert_eq!(sys.n, self.n, "system size changed since factorization");
        let mut t = solve_with(&self.llt, &sys.p);
        let mut res = steady_residual(sys, &t);
        if res > STEADY_RESIDUAL_TARGET {
            t = pcg_solve(sys, &sys.p, &t, STEADY_RESIDUAL_TARGET / 10.0, 20 * sys.n + 100);
            res = steady_residual(sys, &t);
        }
        if res > STEADY_RESIDUAL_TARGET {
            return Err(Error::Numerical(format!(
                "steady solve stalled at relative residual {res:.3e} \
                 (target {STEADY_RESIDUAL_TARGET:.1e})"
            )));
        }
        Ok(TemperatureField(t))
    }
}

/// One-shot steady solve.
pub fn solve_steady(sys: &SparseSystem) -> Result<TemperatureField> {
    SteadySolver::new(sys)?.solve(sys)
}

/// Implicit time-integration scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TimeScheme {
    /// First-order, unconditionally stable, no oscillations.
    #[default]
    BackwardEuler,
    /// Second-order, unconditionally stable.
    CrankNicolson,
}

/// Transient run parameters.
#[derive(Clone, Debug)]
pub struct TransientConfig {
    /// Step size in seconds.
    pub dt: f64,
    /// End time in seconds; the run covers ⌈t_end/dt⌉ steps.
    pub t_end: f64,
    pub scheme: TimeScheme,
    /// Clamp evaluated power drives at 0 W (off by default; the standard
    /// pulse signal is non-negative by construction).
    pub clamp_power_floor: bool,
}

impl TransientConfig {
    pub fn new(dt: f64, t_end: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Invalid(format!("step size dt = {dt} must be positive")));
        }
        if !(t_end.is_finite() && t_end >= 0.0) {
            return Err(Error::Invalid(format!("end time {t_end} must be non-negative")));
        }
        Ok(TransientConfig {
            dt,
            t_end,
            scheme: TimeScheme::default(),
            clamp_power_floor: false,
        })
    }

    pub fn steps(&self) -> usize {
        ((self.t_end / self.dt) * (1.0 - 1e-12)).ceil() as usize
    }
}

/// Reusable transient stepper. Factors the shifted system once:
///
/// - backward Euler:  (C/dt + G) T₊ = (C/dt) Tₙ + P₊
/// - Crank–Nicolson:  (C/dt + G/2) T₊ = (C/dt) Tₙ − (G Tₙ)/2 + (Pₙ + P₊)/2
///
/// `step` advances one dt; `sys.p` must hold the source vector of the NEW
/// time level when `step` is called (the previous level is remembered).
pub struct TransientStepper {
    llt: Llt<usize, f64>,
    c_over_dt: Vec<f64>,
    scheme: TimeScheme,
    prev_p: Vec<f64>,
}

impl TransientStepper {
    /// `sys.p` must hold the source vector at the initial time.
    pub fn new(sys: &SparseSystem, dt: f64, scheme: TimeScheme) -> Result<Self> {
        sequential_linear_algebra();
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Invalid(format!("step size dt = {dt} must be positive")));
        }
        let c_over_dt: Vec<f64> = sys.c.iter().map(|&c| c / dt).collect();
        let scale = match scheme {
            TimeScheme::BackwardEuler => 1.0,
            TimeScheme::CrankNicolson => 0.5,
        };
        let a = to_sparse(sys, &c_over_dt, scale)?;
        Ok(TransientStepper {
            llt: factorize(&a)?,
            c_over_dt,
            scheme,
            prev_p: sys.p.clone(),
        })
    }

    pub fn step(&mut self, sys: &SparseSystem, t: &[f64]) -> Vec<f64> {
        let n = t.len();
        let rhs: Vec<f64> = match self.scheme {
            TimeScheme::BackwardEuler => (0..n)
                .map(|i| self.c_over_dt[i] * t[i] + sys.p[i])
                .collect(),
            TimeScheme::CrankNicolson => {
                let gt = sys.multiply(t);
                (0..n)
                    .map(|i| {
                        self.c_over_dt[i] * t[i] - 0.5 * gt[i]
                            + 0.5 * (self.prev_p[i] + sys.p[i])
                    })
                    .collect()
            }
        };
        self.prev_p.clone_from(&sys.p);
        solve_with(&self.llt, &rhs)
    }
}

/// Gaussian heat pulse riding on a constant base load:
///
///   P(t) = P₀ + P₀ · exp(−(t − t₀)² / τ²) · sin(ω t)
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerSignal {
    /// Base wattage and modulation amplitude, W.
    pub p0: f64,
    /// Pulse center, s.
    pub t0: f64,
    /// Squared pulse width τ², s².
    pub tau2: f64,
    /// Carrier angular frequency, rad/s.
    pub omega: f64,
}

/// Evaluate a power signal, optionally clamped at 0 W.
pub fn power_signal(sig: &PowerSignal, t: f64, clamp_floor: bool) -> f64 {
    let envelope = (-(t - sig.t0) * (t - sig.t0) / sig.tau2).exp();
    let v = sig.p0 + sig.p0 * envelope * (sig.omega * t).sin();
    if clamp_floor {
        v.max(0.0)
    } else {
        v
    }
}

/// Time behavior of one power source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PowerDrive {
    Constant(f64),
    Signal(PowerSignal),
}

impl PowerDrive {
    pub fn at(&self, t: f64, clamp_floor: bool) -> f64 {
        match self {
            PowerDrive::Constant(w) => *w,
            PowerDrive::Signal(sig) => power_signal(sig, t, clamp_floor),
        }
    }
}

/// A named cell whose temperature is recorded every step.
#[derive(Clone, Debug)]
pub struct Probe {
    pub name: String,
    pub cell: usize,
}

/// Output of a transient run.
#[derive(Clone, Debug)]
pub struct TransientResult {
    /// Time of every recorded sample, starting at 0.
    pub times: Vec<f64>,
    /// One trace per probe, aligned with `times`.
    pub traces: Vec<Vec<f64>>,
    /// Temperature field after the final step.
    pub final_field: TemperatureField,
}

impl TransientResult {
    /// (time, temperature) of the hottest sample of one probe trace.
    pub fn peak(&self, probe: usize) -> (f64, f64) {
        let trace = &self.traces[probe];
        let mut best = (self.times[0], trace[0]);
        for (&t, &temp) in self.times.iter().zip(trace) {
            if temp > best.1 {
                best = (t, temp);
            }
        }
        best
    }
}

/// March the system from the stack's initial temperature to `t_end`,
/// re-evaluating every power drive at each new time level.
pub fn run_transient(
    grid: &ThermalGrid,
    sys: &mut SparseSystem,
    drives: &[PowerDrive],
    cfg: &TransientConfig,
    probes: &[Probe],
) -> Result<TransientResult> {
    for p in probes {
        if p.cell >= sys.n {
            return Err(Error::Invalid(format!(
                "probe '{}' addresses cell {} but the grid has {} cells",
                p.name, p.cell, sys.n
            )));
        }
    }
    let drive_values = |t: f64| -> Vec<f64> {
        drives.iter().map(|d| d.at(t, cfg.clamp_power_floor)).collect()
    };
    sys.replace_power(map_power(&drive_values(0.0), grid)?);
    let mut stepper = TransientStepper::new(sys, cfg.dt, cfg.scheme)?;

    let mut t_now = vec![grid.initial_temperature; sys.n];
    let mut times = vec![0.0];
    let mut traces: Vec<Vec<f64>> = probes.iter().map(|p| vec![t_now[p.cell]]).collect();
    for step in 1..=cfg.steps() {
        let t_next = step as f64 * cfg.dt;
        sys.replace_power(map_power(&drive_values(t_next), grid)?);
        t_now = stepper.step(sys, &t_now);
        times.push(t_next);
        for (trace, probe) in traces.iter_mut().zip(probes) {
            trace.push(t_now[probe.cell]);
        }
    }
    Ok(TransientResult {
        times,
        traces,
        final_field: TemperatureField(t_now),
    })
}

/// Probe traces as CSV: one row per (time, probe) sample.
pub fn transient_to_csv(result: &TransientResult, probes: &[Probe]) -> String {
    let mut out = String::from("t,probe,temperature_k\n");
    for (i, &t) in result.times.iter().enumerate() {
        for (probe, trace) in probes.iter().zip(&result.traces) {
            out.push_str(&format!("{t:.9},{},{:.6}\n", probe.name, trace[i]));
        }
    }
    out
}
