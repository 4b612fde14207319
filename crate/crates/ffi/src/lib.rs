//! C interface to the thermal simulator.
//!
//! Conventions:
//! - Handles (`HsStack`, `HsGrid`, `HsSystem`, `HsField`) are opaque;
//!   create them with the `hs_*` constructors and release them with the
//!   matching `hs_*_free`. Freeing null is a no-op.
//! - Constructors return null on failure; functions returning
//!   [`HsStatus`] report failure through their return value. Either way
//!   the cause is available from [`hs_last_error_message`] (thread-local,
//!   valid until the next failing call on the same thread).
//! - Strings are NUL-terminated UTF-8. Temperatures are kelvin, powers
//!   watts, times seconds.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use heatstack::grid::{build_uniform_grid, ThermalGrid};
use heatstack::network::{assemble, SparseSystem};
use heatstack::solver::{
    run_transient, solve_steady, PowerDrive, PowerSignal, TemperatureField, TimeScheme,
    TransientConfig,
};
use heatstack::stack::{adaptive_divide, validate_stack, ValidatedStack};
use heatstack::stackfile::parse_stack_text;
use heatstack::Error;

/// Result code for fallible calls that do not return a handle.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HsStatus {
    /// The call succeeded.
    HsOk = 0,
    /// Malformed or inconsistent input (files, text, arguments).
    HsInvalidInput = 1,
    /// The solver failed to produce a trustworthy answer.
    HsNumericalFailure = 2,
    /// A required pointer argument was null.
    HsNullPointer = 3,
    /// A string argument was not valid UTF-8.
    HsInvalidUtf8 = 4,
    /// An internal invariant was violated; state may be inconsistent.
    HsInternalPanic = 5,
}

/// Time integration scheme for transient runs.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HsScheme {
    /// First-order implicit; damps all modes, safe at any step size.
    HsBackwardEuler = 0,
    /// Second-order trapezoidal.
    HsCrankNicolson = 1,
}

/// Time behavior of one power source.
///
/// `kind = 0`: constant `p0` watts (other fields ignored).
/// `kind = 1`: modulated pulse
/// `p(t) = p0 + p0 * exp(-(t - t0)^2 / tau2) * sin(omega * t)`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct HsDrive {
    pub kind: u32,
    pub p0: f64,
    pub t0: f64,
    pub tau2: f64,
    pub omega: f64,
}

/// Validated stack description (layers, materials, sink).
pub struct HsStack {
    inner: ValidatedStack,
}

/// Discretized cell mesh over a stack.
pub struct HsGrid {
    inner: ThermalGrid,
}

/// Assembled conductance/capacitance network with its power vector.
pub struct HsSystem {
    inner: SparseSystem,
}

/// Per-cell temperatures in kelvin, indexed like the grid's cells.
pub struct HsField {
    inner: TemperatureField,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> =
        RefCell::new(CString::new("no error").expect("static message"));
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NUL bytes stripped");
    });
}

fn status_of(err: &Error) -> HsStatus {
    match err {
        Error::Numerical(_) => HsStatus::HsNumericalFailure,
        _ => HsStatus::HsInvalidInput,
    }
}

/// Run `f`, trapping panics so they cannot unwind across the C boundary.
fn guarded<T>(f: impl FnOnce() -> Result<T, (HsStatus, String)>) -> Result<T, HsStatus> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err((status, msg))) => {
            set_error(&msg);
            Err(status)
        }
        Err(_) => {
            set_error("internal panic; see stderr for details");
            Err(HsStatus::HsInternalPanic)
        }
    }
}

fn lib_err(e: Error) -> (HsStatus, String) {
    (status_of(&e), e.to_string())
}

/// # Safety
/// `s` must be null or point to a NUL-terminated string.
unsafe fn required_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (HsStatus, String)> {
    if s.is_null() {
        return Err((HsStatus::HsNullPointer, format!("{what} must not be null")));
    }
    unsafe { CStr::from_ptr(s) }
        .to_str()
        .map_err(|_| (HsStatus::HsInvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn required_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (HsStatus, String)> {
    if p.is_null() {
        Err((HsStatus::HsNullPointer, format!("{what} must not be null")))
    } else {
        Ok(unsafe { &*p })
    }
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent failure on this thread. Never
/// null; the pointer stays valid until the next failing call on the
/// same thread.
#[no_mangle]
pub extern "C" fn hs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parse and validate a stack description from text. `base_dir` resolves
/// relative floorplan references and may be null for "." . Returns null
/// on failure.
///
/// # Safety
/// `text` (and `base_dir` when non-null) must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn hs_stack_parse_text(
    text: *const c_char,
    base_dir: *const c_char,
) -> *mut HsStack {
    guarded(|| {
        let text = unsafe { required_str(text, "stack text") }?;
        let base = if base_dir.is_null() {
            "."
        } else {
            unsafe { required_str(base_dir, "base directory") }?
        };
        let desc = parse_stack_text(text, Path::new(base)).map_err(lib_err)?;
        let stack = validate_stack(desc).map_err(lib_err)?;
        Ok(boxed(HsStack { inner: stack }))
    })
    .unwrap_or(ptr::null_mut())
}

/// Parse and validate a stack description file. Relative floorplan
/// references resolve against the file's directory. Returns null on
/// failure.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hs_stack_parse_file(path: *const c_char) -> *mut HsStack {
    guarded(|| {
        let path = Path::new(unsafe { required_str(path, "stack path") }?);
        let text = std::fs::read_to_string(path).map_err(|e| {
            (
                HsStatus::HsInvalidInput,
                format!("cannot read {}: {e}", path.display()),
            )
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let desc = parse_stack_text(&text, base).map_err(lib_err)?;
        let stack = validate_stack(desc).map_err(lib_err)?;
        Ok(boxed(HsStack { inner: stack }))
    })
    .unwrap_or(ptr::null_mut())
}

/// Number of layers in the stack (0 if `stack` is null).
///
/// # Safety
/// `stack` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hs_stack_layer_count(stack: *const HsStack) -> usize {
    if stack.is_null() {
        return 0;
    }
    unsafe { &*stack }.inner.layers.len()
}

/// Split high-resistance layers until the variance of per-layer vertical
/// resistances falls to `rel_threshold` of its starting value or
/// `max_iter` splits have happened. Returns a new handle; the input is
/// untouched.
///
/// # Safety
/// `stack` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hs_stack_divide(
    stack: *const HsStack,
    rel_threshold: f64,
    max_iter: u32,
) -> *mut HsStack {
    guarded(|| {
        let stack = required_ref(stack, "stack handle")?;
        let (divided, _report) = adaptive_divide(&stack.inner, rel_threshold, max_iter);
        Ok(boxed(HsStack { inner: divided }))
    })
    .unwrap_or(ptr::null_mut())
}

/// Release a stack handle (null is a no-op).
///
/// # Safety
/// `stack` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hs_stack_free(stack: *mut HsStack) {
    if !stack.is_null() {
        drop(unsafe { Box::from_raw(stack) });
    }
}

/// Mesh the stack on an `nx` by `ny` in-plane lattice. Returns null on
/// failure.
///
/// # Safety
/// `stack` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hs_grid_uniform(
    stack: *const HsStack,
    nx: usize,
    ny: usize,
) -> *mut HsGrid {
    guarded(|| {
        let stack = required_ref(stack, "stack handle")?;
        let grid = build_uniform_grid(&stack.inner, nx, ny).map_err(lib_err)?;
        Ok(boxed(HsGrid { inner: grid }))
    })
    .unwrap_or(ptr::null_mut())
}

/// Number of cells in the grid (0 if `grid` is null).
///
/// # Safety
/// `grid` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hs_grid_cell_count(grid: *const HsGrid) -> usize {
    if grid.is_null() {
        return 0;
    }
    unsafe { &*grid }.inner.n_cells()
}

/// Release a grid handle (null is a no-op).
///
/// # Safety
/// `grid` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hs_grid_free(grid: *mut HsGrid) {
    if !grid.is_null() {
        drop(unsafe { Box::from_raw(grid) });
    }
}

/// Assemble the conductance/capacitance network for a grid.
/// `powers[i]` is the wattage of source id `i`; `powers` may be null
/// when `n_powers` is 0. Returns null on failure.
///
/// # Safety
/// `grid` must be a live handle; `powers` must be null or point to
/// `n_powers` doubles.
#[no_mangle]
pub unsafe extern "C" fn hs_system_assemble(
    grid: *const HsGrid,
    powers: *const f64,
    n_powers: usize,
) -> *mut HsSystem {
    guarded(|| {
        let grid = required_ref(grid, "grid handle")?;
        let powers = if n_powers == 0 {
            &[]
        } else if powers.is_null() {
            return Err((
                HsStatus::HsNullPointer,
                "powers must not be null when n_powers > 0".to_string(),
            ));
        } else {
            unsafe { std::slice::from_raw_parts(powers, n_powers) }
        };
        let sys = assemble(&grid.inner, powers).map_err(lib_err)?;
        Ok(boxed(HsSystem { inner: sys }))
    })
    .unwrap_or(ptr::null_mut())
}

/// Release a system handle (null is a no-op).
///
/// # Safety
/// `system` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hs_system_free(system: *mut HsSystem) {
    if !system.is_null() {
        drop(unsafe { Box::from_raw(system) });
    }
}

/// Solve the steady-state temperature field. Returns null on failure.
///
/// # Safety
/// `system` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hs_steady_solve(system: *const HsSystem) -> *mut HsField {
    guarded(|| {
        let system = required_ref(system, "system handle")?;
        let field = solve_steady(&system.inner).map_err(lib_err)?;
        Ok(boxed(HsField { inner: field }))
    })
    .unwrap_or(ptr::null_mut())
}

/// March the system from the stack's initial temperature to `t_end`
/// with step `dt`, re-evaluating `drives` each step, and return the
/// final field. The system's power vector is updated in place. Returns
/// null on failure.
///
/// # Safety
/// `grid` and `system` must be live handles; `drives` must be null or
/// point to `n_drives` entries.
#[no_mangle]
pub unsafe extern "C" fn hs_transient_final(
    grid: *const HsGrid,
    system: *mut HsSystem,
    drives: *const HsDrive,
    n_drives: usize,
    dt: f64,
    t_end: f64,
    scheme: HsScheme,
) -> *mut HsField {
    guarded(|| {
        let grid = required_ref(grid, "grid handle")?;
        if system.is_null() {
            return Err((
                HsStatus::HsNullPointer,
                "system handle must not be null".to_string(),
            ));
        }
        let system = unsafe { &mut *system };
        let raw = if n_drives == 0 {
            &[]
        } else if drives.is_null() {
            return Err((
                HsStatus::HsNullPointer,
                "drives must not be null when n_drives > 0".to_string(),
            ));
        } else {
            unsafe { std::slice::from_raw_parts(drives, n_drives) }
        };
        let drives: Vec<PowerDrive> = raw
            .iter()
            .enumerate()
            .map(|(i, d)| match d.kind {
                0 => Ok(PowerDrive::Constant(d.p0)),
                1 => Ok(PowerDrive::Signal(PowerSignal {
                    p0: d.p0,
                    t0: d.t0,
                    tau2: d.tau2,
                    omega: d.omega,
                })),
                k => Err((
                    HsStatus::HsInvalidInput,
                    format!("drive {i}: unknown kind {k} (0 = constant, 1 = pulse)"),
                )),
            })
            .collect::<Result<_, _>>()?;
        let mut cfg = TransientConfig::new(dt, t_end).map_err(lib_err)?;
        cfg.scheme = match scheme {
            HsScheme::HsBackwardEuler => TimeScheme::BackwardEuler,
            HsScheme::HsCrankNicolson => TimeScheme::CrankNicolson,
        };
        let result = run_transient(&grid.inner, &mut system.inner, &drives, &cfg, &[])
            .map_err(lib_err)?;
        Ok(boxed(HsField {
            inner: result.final_field,
        }))
    })
    .unwrap_or(ptr::null_mut())
}

/// Number of cells in the field (0 if `field` is null).
///
/// # Safety
/// `field` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hs_field_len(field: *const HsField) -> usize {
    if field.is_null() {
        return 0;
    }
    unsafe { &*field }.inner.len()
}

/// Copy the whole field into `out` (kelvin, cell order). `capacity`
/// must be at least the field length.
///
/// # Safety
/// `field` must be a live handle; `out` must point to `capacity`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hs_field_copy(
    field: *const HsField,
    out: *mut f64,
    capacity: usize,
) -> HsStatus {
    match guarded(|| {
        let field = required_ref(field, "field handle")?;
        if out.is_null() {
            return Err((
                HsStatus::HsNullPointer,
                "output buffer must not be null".to_string(),
            ));
        }
        let n = field.inner.len();
        if capacity < n {
            return Err((
                HsStatus::HsInvalidInput,
                format!("output capacity {capacity} is smaller than the field ({n} cells)"),
            ));
        }
        unsafe { std::slice::from_raw_parts_mut(out, n) }.copy_from_slice(&field.inner);
        Ok(())
    }) {
        Ok(()) => HsStatus::HsOk,
        Err(status) => status,
    }
}

/// Report the hottest cell: its index into the grid's cells and its
/// temperature. Either output pointer may be null to skip it.
///
/// # Safety
/// `field` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_field_hottest(
    field: *const HsField,
    out_cell: *mut usize,
    out_kelvin: *mut f64,
) -> HsStatus {
    match guarded(|| {
        let field = required_ref(field, "field handle")?;
        let (cell, kelvin) = field.inner.hottest();
        if !out_cell.is_null() {
            unsafe { *out_cell = cell };
        }
        if !out_kelvin.is_null() {
            unsafe { *out_kelvin = kelvin };
        }
        Ok(())
    }) {
        Ok(()) => HsStatus::HsOk,
        Err(status) => status,
    }
}

/// Release a field handle (null is a no-op).
///
/// # Safety
/// `field` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hs_field_free(field: *mut HsField) {
    if !field.is_null() {
        drop(unsafe { Box::from_raw(field) });
    }
}

/// Evaluate the modulated pulse
/// `p(t) = p0 + p0 * exp(-(t - t0)^2 / tau2) * sin(omega * t)`.
#[no_mangle]
pub extern "C" fn hs_pulse_power(p0: f64, t0: f64, tau2: f64, omega: f64, t: f64) -> f64 {
    heatstack::solver::power_signal(
        &PowerSignal {
            p0,
            t0,
            tau2,
            omega,
        },
        t,
        false,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    const SINGLE_LAYER: &str = "\
material silicon k=130 density=2300 heat_capacity=700
footprint 0 0 1000 1000
layer chip thickness=1000 material=silicon source power=0
sink face=top h=10000 ambient=300
";

    fn cstr(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    fn last_error() -> String {
        unsafe {
            CStr::from_ptr(hs_last_error_message())
                .to_string_lossy()
                .into_owned()
        }
    }

    #[test]
    fn version_is_a_semver_string() {
        let v = unsafe { CStr::from_ptr(hs_version()) }.to_str().unwrap();
        assert_eq!(v.split('.').count(), 3, "got '{v}'");
    }

    #[test]
    fn parse_reports_null_and_bad_input_through_last_error() {
        let stack = unsafe { hs_stack_parse_text(ptr::null(), ptr::null()) };
        assert!(stack.is_null());
        assert!(last_error().contains("null"), "got '{}'", last_error());

        let bad = cstr("footprint 0 0 10 10\nnonsense here\n");
        let stack = unsafe { hs_stack_parse_text(bad.as_ptr(), ptr::null()) };
        assert!(stack.is_null());
        assert!(last_error().contains("line 2"), "got '{}'", last_error());
    }

    #[test]
    fn full_chain_reproduces_the_closed_form_uniform_die() {
        unsafe {
            let text = cstr(SINGLE_LAYER);
            let stack = hs_stack_parse_text(text.as_ptr(), ptr::null());
            assert!(!stack.is_null(), "{}", last_error());
            assert_eq!(hs_stack_layer_count(stack), 1);

            let grid = hs_grid_uniform(stack, 1, 1);
            assert!(!grid.is_null(), "{}", last_error());
            assert_eq!(hs_grid_cell_count(grid), 1);

            // 0.05 W into hA = 1e4 * 1e-6 = 0.01 W/K: a 5 K rise.
            let powers = [0.05f64];
            let sys = hs_system_assemble(grid, powers.as_ptr(), powers.len());
            assert!(!sys.is_null(), "{}", last_error());

            let field = hs_steady_solve(sys);
            assert!(!field.is_null(), "{}", last_error());
            assert_eq!(hs_field_len(field), 1);

            let mut cell = usize::MAX;
            let mut kelvin = 0.0;
            assert_eq!(
                hs_field_hottest(field, &mut cell, &mut kelvin),
                HsStatus::HsOk
            );
            assert_eq!(cell, 0);
            assert!((kelvin - 305.0).abs() < 1e-9, "got {kelvin}");

            let mut out = [0.0f64; 1];
            assert_eq!(hs_field_copy(field, out.as_mut_ptr(), 1), HsStatus::HsOk);
            assert!((out[0] - 305.0).abs() < 1e-9);

            hs_field_free(field);
            hs_system_free(sys);
            hs_grid_free(grid);
            hs_stack_free(stack);
        }
    }

    #[test]
    fn field_copy_rejects_short_buffers() {
        unsafe {
            let text = cstr(SINGLE_LAYER);
            let stack = hs_stack_parse_text(text.as_ptr(), ptr::null());
            let grid = hs_grid_uniform(stack, 2, 2);
            let powers = [0.05f64];
            let sys = hs_system_assemble(grid, powers.as_ptr(), 1);
            let field = hs_steady_solve(sys);
            assert_eq!(hs_field_len(field), 4);

            let mut out = [0.0f64; 2];
            assert_eq!(
                hs_field_copy(field, out.as_mut_ptr(), 2),
                HsStatus::HsInvalidInput
            );
            assert!(last_error().contains("capacity"), "got '{}'", last_error());

            hs_field_free(field);
            hs_system_free(sys);
            hs_grid_free(grid);
            hs_stack_free(stack);
        }
    }

    #[test]
    fn transient_with_constant_drive_approaches_steady_state() {
        unsafe {
            let text = cstr(SINGLE_LAYER);
            let stack = hs_stack_parse_text(text.as_ptr(), ptr::null());
            let grid = hs_grid_uniform(stack, 1, 1);
            let powers = [0.05f64];
            let sys = hs_system_assemble(grid, powers.as_ptr(), 1);

            let drives = [HsDrive {
                kind: 0,
                p0: 0.05,
                t0: 0.0,
                tau2: 1.0,
                omega: 0.0,
            }];
            // Thermal time constant C/G ~ 0.16 s for this die; 100 s is
            // deep into equilibrium.
            let field = hs_transient_final(
                grid,
                sys,
                drives.as_ptr(),
                1,
                1.0,
                100.0,
                HsScheme::HsBackwardEuler,
            );
            assert!(!field.is_null(), "{}", last_error());
            let mut kelvin = 0.0;
            hs_field_hottest(field, ptr::null_mut(), &mut kelvin);
            assert!((kelvin - 305.0).abs() < 1e-3, "got {kelvin}");

            let bad = [HsDrive {
                kind: 7,
                p0: 1.0,
                t0: 0.0,
                tau2: 1.0,
                omega: 0.0,
            }];
            let null_field = hs_transient_final(
                grid,
                sys,
                bad.as_ptr(),
                1,
                1.0,
                1.0,
                HsScheme::HsBackwardEuler,
            );
            assert!(null_field.is_null());
            assert!(last_error().contains("kind"), "got '{}'", last_error());

            hs_field_free(field);
            hs_system_free(sys);
            hs_grid_free(grid);
            hs_stack_free(stack);
        }
    }

    #[test]
    fn divide_produces_more_layers() {
        // The insulator's vertical resistance dwarfs the copper's, so
        // each split of it lowers the variance and all three allowed
        // iterations run.
        let text = "\
material copper k=385 density=8900 heat_capacity=387
material insulator k=1 density=2500 heat_capacity=1000
footprint 0 0 1000 1000
layer blanket thickness=1000 material=insulator
layer spreader thickness=100 material=copper
sink face=top h=10000 ambient=300
";
        unsafe {
            let text = cstr(text);
            let stack = hs_stack_parse_text(text.as_ptr(), ptr::null());
            assert_eq!(hs_stack_layer_count(stack), 2);
            let divided = hs_stack_divide(stack, 0.0, 3);
            assert!(!divided.is_null(), "{}", last_error());
            assert_eq!(hs_stack_layer_count(divided), 5);
            hs_stack_free(divided);
            hs_stack_free(stack);
        }
    }

    #[test]
    fn pulse_power_matches_the_reference_points() {
        assert!((hs_pulse_power(25.0, 0.5, 0.1, 10.0 * std::f64::consts::PI, 0.0) - 25.0).abs() < 1e-9);
        let p = hs_pulse_power(25.0, 0.5, 0.1, 10.0 * std::f64::consts::PI, 0.55);
        assert!((p - 25.0 * (1.0 - (-0.025f64).exp())).abs() < 1e-9, "got {p}");
    }
}
