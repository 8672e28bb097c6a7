//! C ABI over the transport solver and reconstruction pipeline.
//!
//! All objects cross the boundary as opaque handles created and released by
//! paired `_new`/`_free` functions; every fallible call returns an
//! [`RtStatus`] and leaves a description retrievable through
//! [`rt_last_error_message`] on the calling thread. The full run pipeline is
//! exposed through [`rt_run_json`], which accepts the same JSON
//! configuration documents as the `rte-tomo` command-line tool.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rte_tomo::experiments::{generate_dataset, ExperimentPair};
use rte_tomo::{
    measure_outflow, solve_forward, BoundarySide, Medium, MediumKind, PhaseGrid, SolveCounter,
    SolverOptions,
};

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtStatus {
    /// Success.
    Ok = 0,
    /// A pointer argument was null or an index was out of range.
    InvalidArgument = 1,
    /// Invalid configuration or malformed input file.
    ConfigError = 2,
    /// A transport solve failed to converge.
    SolverError = 3,
    /// An iteration tripped the divergence guard.
    Divergence = 4,
    /// An internal panic was caught at the boundary.
    Panic = 5,
}

/// Coefficient kind of a medium handle.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtMediumKind {
    Scattering = 0,
    Absorption = 1,
}

impl From<RtMediumKind> for MediumKind {
    fn from(k: RtMediumKind) -> Self {
        match k {
            RtMediumKind::Scattering => MediumKind::Scattering,
            RtMediumKind::Absorption => MediumKind::Absorption,
        }
    }
}

/// Opaque phase-space grid.
pub struct RtGrid {
    inner: PhaseGrid,
}

/// Opaque nodal coefficient field.
pub struct RtMedium {
    inner: Medium,
}

/// Opaque synthetic measurement dataset.
pub struct RtDataset {
    pairs: Vec<ExperimentPair>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = CString::new(message.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = text);
}

fn status_of(err: &rte_tomo::Error) -> RtStatus {
    match err.exit_code() {
        2 => RtStatus::ConfigError,
        4 => RtStatus::Divergence,
        _ => RtStatus::SolverError,
    }
}

fn guarded(body: impl FnOnce() -> RtStatus) -> RtStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {message}"));
            RtStatus::Panic
        }
    }
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> RtStatus {
    if out.is_null() {
        set_error("output pointer is null");
        return RtStatus::InvalidArgument;
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    RtStatus::Ok
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn rt_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Create a phase grid with `n_cells_per_side` cells per axis and
/// `n_angles` directions (at least 4, divisible by 4).
///
/// # Safety
/// `out` must be a valid pointer to receive the handle; release it with
/// [`rt_grid_free`].
#[no_mangle]
pub unsafe extern "C" fn rt_grid_new(
    n_cells_per_side: usize,
    n_angles: usize,
    out: *mut *mut RtGrid,
) -> RtStatus {
    guarded(|| match PhaseGrid::new(n_cells_per_side, n_angles) {
        Ok(inner) => unsafe { write_handle(out, RtGrid { inner }) },
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    })
}

/// Release a grid handle (null is ignored).
///
/// # Safety
/// `grid` must have come from [`rt_grid_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rt_grid_free(grid: *mut RtGrid) {
    if !grid.is_null() {
        drop(unsafe { Box::from_raw(grid) });
    }
}

/// Number of spatial nodes; zero for a null handle.
///
/// # Safety
/// `grid` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rt_grid_node_count(grid: *const RtGrid) -> usize {
    unsafe { grid.as_ref() }.map_or(0, |g| g.inner.n_nodes())
}

/// Number of directions; zero for a null handle.
///
/// # Safety
/// `grid` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rt_grid_angle_count(grid: *const RtGrid) -> usize {
    unsafe { grid.as_ref() }.map_or(0, |g| g.inner.n_angles())
}

/// Size of the inflow boundary set; zero for a null handle.
///
/// # Safety
/// `grid` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rt_grid_inflow_count(grid: *const RtGrid) -> usize {
    unsafe { grid.as_ref() }.map_or(0, |g| g.inner.side_len(BoundarySide::Inflow))
}

/// Size of the outflow boundary set; zero for a null handle.
///
/// # Safety
/// `grid` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rt_grid_outflow_count(grid: *const RtGrid) -> usize {
    unsafe { grid.as_ref() }.map_or(0, |g| g.inner.side_len(BoundarySide::Outflow))
}

/// Create the reference two-bump coefficient on the grid.
///
/// # Safety
/// `grid` must be a live handle; `out` receives a handle to release with
/// [`rt_medium_free`].
#[no_mangle]
pub unsafe extern "C" fn rt_medium_two_bump(
    grid: *const RtGrid,
    kind: RtMediumKind,
    out: *mut *mut RtMedium,
) -> RtStatus {
    guarded(|| {
        let Some(grid) = (unsafe { grid.as_ref() }) else {
            set_error("grid handle is null");
            return RtStatus::InvalidArgument;
        };
        let inner = Medium::from_fn(
            &grid.inner,
            kind.into(),
            rte_tomo::experiments::bump_coefficient,
        );
        unsafe { write_handle(out, RtMedium { inner }) }
    })
}

/// Create a constant coefficient field.
///
/// # Safety
/// As [`rt_medium_two_bump`].
#[no_mangle]
pub unsafe extern "C" fn rt_medium_constant(
    grid: *const RtGrid,
    kind: RtMediumKind,
    value: f64,
    out: *mut *mut RtMedium,
) -> RtStatus {
    guarded(|| {
        let Some(grid) = (unsafe { grid.as_ref() }) else {
            set_error("grid handle is null");
            return RtStatus::InvalidArgument;
        };
        let inner = Medium::constant(&grid.inner, kind.into(), value);
        unsafe { write_handle(out, RtMedium { inner }) }
    })
}

/// Create a coefficient field from `len` nodal values in node-major order.
///
/// # Safety
/// `values` must point to `len` readable doubles; `len` must equal the
/// grid's node count.
#[no_mangle]
pub unsafe extern "C" fn rt_medium_from_values(
    grid: *const RtGrid,
    kind: RtMediumKind,
    values: *const f64,
    len: usize,
    out: *mut *mut RtMedium,
) -> RtStatus {
    guarded(|| {
        let Some(grid) = (unsafe { grid.as_ref() }) else {
            set_error("grid handle is null");
            return RtStatus::InvalidArgument;
        };
        if values.is_null() {
            set_error("values pointer is null");
            return RtStatus::InvalidArgument;
        }
        let slice = unsafe { std::slice::from_raw_parts(values, len) };
        match Medium::new(&grid.inner, kind.into(), slice.to_vec()) {
            Ok(inner) => unsafe { write_handle(out, RtMedium { inner }) },
            Err(e) => {
                set_error(e.to_string());
                RtStatus::ConfigError
            }
        }
    })
}

/// Copy the nodal values of a medium into a caller buffer of length `len`
/// (the grid's node count).
///
/// # Safety
/// `buffer` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rt_medium_values(
    medium: *const RtMedium,
    buffer: *mut f64,
    len: usize,
) -> RtStatus {
    guarded(|| {
        let Some(medium) = (unsafe { medium.as_ref() }) else {
            set_error("medium handle is null");
            return RtStatus::InvalidArgument;
        };
        if buffer.is_null() || len != medium.inner.values().len() {
            set_error(format!(
                "buffer must hold {} values",
                medium.inner.values().len()
            ));
            return RtStatus::InvalidArgument;
        }
        unsafe { std::slice::from_raw_parts_mut(buffer, len) }
            .copy_from_slice(medium.inner.values());
        RtStatus::Ok
    })
}

/// Release a medium handle (null is ignored).
///
/// # Safety
/// `medium` must have come from a medium constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rt_medium_free(medium: *mut RtMedium) {
    if !medium.is_null() {
        drop(unsafe { Box::from_raw(medium) });
    }
}

/// Solve the forward problem for the normalized delta source at position
/// `inflow_index` in the grid's inflow set and write the measured outflow
/// (one value per outflow pair) into `psi`.
///
/// # Safety
/// `psi` must point to `psi_len` writable doubles with `psi_len` equal to
/// the grid's outflow count.
#[no_mangle]
pub unsafe extern "C" fn rt_albedo_delta(
    grid: *const RtGrid,
    medium: *const RtMedium,
    inflow_index: usize,
    tolerance: f64,
    psi: *mut f64,
    psi_len: usize,
) -> RtStatus {
    guarded(|| {
        let (Some(grid), Some(medium)) = (unsafe { grid.as_ref() }, unsafe { medium.as_ref() })
        else {
            set_error("grid or medium handle is null");
            return RtStatus::InvalidArgument;
        };
        let g = &grid.inner;
        if psi.is_null() || psi_len != g.side_len(BoundarySide::Outflow) {
            set_error(format!(
                "psi must hold {} values",
                g.side_len(BoundarySide::Outflow)
            ));
            return RtStatus::InvalidArgument;
        }
        let pairs = g.side_pairs(BoundarySide::Inflow);
        if inflow_index >= pairs.len() {
            set_error(format!(
                "inflow index {inflow_index} out of range ({})",
                pairs.len()
            ));
            return RtStatus::InvalidArgument;
        }
        let inflow = match rte_tomo::experiments::delta_inflow(g, pairs[inflow_index]) {
            Ok(f) => f,
            Err(e) => {
                set_error(e.to_string());
                return status_of(&e);
            }
        };
        let opts = SolverOptions {
            tolerance: if tolerance > 0.0 { tolerance } else { 1e-12 },
            ..SolverOptions::default()
        };
        match solve_forward(g, &medium.inner, &inflow, None, &opts, &SolveCounter::new()) {
            Ok(out) => {
                let values = measure_outflow(g, &out.field);
                unsafe { std::slice::from_raw_parts_mut(psi, psi_len) }
                    .copy_from_slice(values.values());
                RtStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Quadrature-weighted (or plain, when `weighted` is false) relative L2
/// error between two media on the same grid.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_relative_error(
    grid: *const RtGrid,
    candidate: *const RtMedium,
    truth: *const RtMedium,
    weighted: bool,
    out: *mut f64,
) -> RtStatus {
    guarded(|| {
        let (Some(grid), Some(candidate), Some(truth)) = (
            unsafe { grid.as_ref() },
            unsafe { candidate.as_ref() },
            unsafe { truth.as_ref() },
        ) else {
            set_error("a handle is null");
            return RtStatus::InvalidArgument;
        };
        if out.is_null() {
            set_error("output pointer is null");
            return RtStatus::InvalidArgument;
        }
        match rte_tomo::analysis::relative_error(
            &grid.inner,
            &candidate.inner,
            &truth.inner,
            weighted,
        ) {
            Ok(v) => {
                unsafe { *out = v };
                RtStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Generate a seeded synthetic dataset against a ground-truth medium.
///
/// # Safety
/// `grid` and `medium` must be live handles; `out` receives a handle to
/// release with [`rt_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_generate(
    grid: *const RtGrid,
    medium: *const RtMedium,
    n_pairs: usize,
    noise_std: f64,
    seed: u64,
    out: *mut *mut RtDataset,
) -> RtStatus {
    guarded(|| {
        let (Some(grid), Some(medium)) = (unsafe { grid.as_ref() }, unsafe { medium.as_ref() })
        else {
            set_error("grid or medium handle is null");
            return RtStatus::InvalidArgument;
        };
        match generate_dataset(
            &grid.inner,
            &medium.inner,
            n_pairs,
            noise_std,
            seed,
            &SolverOptions::default(),
            &SolveCounter::new(),
        ) {
            Ok(pairs) => unsafe { write_handle(out, RtDataset { pairs }) },
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Number of experiments in a dataset; zero for a null handle.
///
/// # Safety
/// `dataset` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_len(dataset: *const RtDataset) -> usize {
    unsafe { dataset.as_ref() }.map_or(0, |d| d.pairs.len())
}

/// Source location (inflow node and angle index) of experiment `k`.
///
/// # Safety
/// `node` and `angle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_source(
    dataset: *const RtDataset,
    k: usize,
    node: *mut usize,
    angle: *mut usize,
) -> RtStatus {
    guarded(|| {
        let Some(dataset) = (unsafe { dataset.as_ref() }) else {
            set_error("dataset handle is null");
            return RtStatus::InvalidArgument;
        };
        let Some(pair) = dataset.pairs.get(k) else {
            set_error(format!("experiment {k} out of range"));
            return RtStatus::InvalidArgument;
        };
        if node.is_null() || angle.is_null() {
            set_error("output pointer is null");
            return RtStatus::InvalidArgument;
        }
        unsafe {
            *node = pair.source.node;
            *angle = pair.source.angle;
        }
        RtStatus::Ok
    })
}

/// Copy experiment `k`'s measured outflow into a caller buffer of length
/// `len` (the grid's outflow count).
///
/// # Safety
/// `buffer` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_psi(
    dataset: *const RtDataset,
    k: usize,
    buffer: *mut f64,
    len: usize,
) -> RtStatus {
    guarded(|| {
        let Some(dataset) = (unsafe { dataset.as_ref() }) else {
            set_error("dataset handle is null");
            return RtStatus::InvalidArgument;
        };
        let Some(pair) = dataset.pairs.get(k) else {
            set_error(format!("experiment {k} out of range"));
            return RtStatus::InvalidArgument;
        };
        if buffer.is_null() || len != pair.psi.values().len() {
            set_error(format!("buffer must hold {} values", pair.psi.values().len()));
            return RtStatus::InvalidArgument;
        }
        unsafe { std::slice::from_raw_parts_mut(buffer, len) }
            .copy_from_slice(pair.psi.values());
        RtStatus::Ok
    })
}

/// Release a dataset handle (null is ignored).
///
/// # Safety
/// `dataset` must have come from [`rt_dataset_generate`] and not be freed
/// twice.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_free(dataset: *mut RtDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// Execute a pipeline command with a JSON run configuration, writing all
/// artifacts under `out_dir`. `command` is one of `generate-data`,
/// `invert`, `assemble-linear`, `spectral-report` or `cost-table`; the
/// configuration documents are the same ones the command-line tool accepts.
///
/// # Safety
/// `command`, `config_json` and `out_dir` must be valid NUL-terminated
/// strings.
#[no_mangle]
pub unsafe extern "C" fn rt_run_json(
    command: *const c_char,
    config_json: *const c_char,
    out_dir: *const c_char,
) -> RtStatus {
    guarded(|| {
        let (Some(command), Some(config_json), Some(out_dir)) = (
            unsafe { cstr(command) },
            unsafe { cstr(config_json) },
            unsafe { cstr(out_dir) },
        ) else {
            set_error("command, config and out_dir must be valid strings");
            return RtStatus::InvalidArgument;
        };
        let config = match rte_tomo::config::RunConfig::from_json(config_json) {
            Ok(c) => c,
            Err(e) => {
                set_error(e.to_string());
                return RtStatus::ConfigError;
            }
        };
        let out = Path::new(out_dir);
        let result = match command {
            "generate-data" => rte_tomo::runner::execute_generate_data(&config, out).map(|_| ()),
            "invert" => rte_tomo::runner::execute_invert(&config, out).and_then(|s| {
                if let Some(reason) = s.aborted {
                    Err(rte_tomo::Error::Aborted(reason))
                } else {
                    Ok(())
                }
            }),
            "assemble-linear" => {
                rte_tomo::runner::execute_assemble_linear(&config, out).map(|_| ())
            }
            "spectral-report" => {
                rte_tomo::runner::execute_spectral_report(&config, out).map(|_| ())
            }
            "cost-table" => rte_tomo::runner::execute_cost_table(&config, out).map(|_| ()),
            other => {
                set_error(format!("unknown command {other:?}"));
                return RtStatus::InvalidArgument;
            }
        };
        match result {
            Ok(()) => RtStatus::Ok,
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().ok()
}
