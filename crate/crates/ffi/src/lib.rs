//! C interface to the simulator.
//!
//! A simulation is an opaque heap handle created from configuration text and
//! released with `chb_simulation_free`. Every fallible call returns a
//! `ChbStatus`; the message of the last failure on the calling thread is
//! available through `chb_last_error_message`.

use chb_core::{parse_config, Error, Field, Mesh, Simulation};
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    SingularMatrix = 4,
    NonConvergence = 5,
    Constraint = 6,
    Domain = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChbField {
    Phi = 0,
    Mu = 1,
    Ux = 2,
    Uy = 3,
    Theta = 4,
    Pressure = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ChbEnergies {
    pub total: f64,
    pub interface: f64,
    pub elastic: f64,
    pub fluid: f64,
}

/// Opaque simulation handle.
pub struct ChbSimulation {
    sim: Simulation,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> ChbStatus {
    match e {
        Error::InvalidArgument(_) | Error::ResourceGuard(_) => ChbStatus::InvalidArgument,
        Error::Parse { .. } => ChbStatus::Parse,
        Error::SingularMatrix { .. } => ChbStatus::SingularMatrix,
        Error::NonConvergence { .. } => ChbStatus::NonConvergence,
        Error::Compatibility { .. } | Error::Constraint { .. } => ChbStatus::Constraint,
        Error::Monotonicity { .. } | Error::Domain(_) => ChbStatus::Domain,
        Error::Io(_) => ChbStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (ChbStatus, String)>) -> ChbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ChbStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ChbStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (ChbStatus, String) {
    (status_of(&e), e.to_string())
}

fn null() -> (ChbStatus, String) {
    (ChbStatus::NullPointer, "null pointer argument".to_string())
}

/// Creates a simulation from `key = value` configuration text (may be empty
/// for the defaults) and stores the handle in `*out`.
///
/// # Safety
/// `config` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chb_simulation_new(
    config: *const c_char,
    out: *mut *mut ChbSimulation,
) -> ChbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        *out = std::ptr::null_mut();
        let text = if config.is_null() {
            ""
        } else {
            CStr::from_ptr(config)
                .to_str()
                .map_err(|_| (ChbStatus::InvalidArgument, "configuration is not UTF-8".into()))?
        };
        let cfg = parse_config(text).map_err(core_err)?;
        let mesh = Mesh::build(cfg.n).map_err(core_err)?;
        let sim = Simulation::new(cfg.solver, mesh, cfg.params, cfg.sources).map_err(core_err)?;
        *out = Box::into_raw(Box::new(ChbSimulation { sim }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sim` must be null or a handle from `chb_simulation_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn chb_simulation_free(sim: *mut ChbSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances one time step. `converged` (optional) receives whether the
/// step met its stopping test.
///
/// # Safety
/// `sim` must be a live handle; `converged` null or writable.
#[no_mangle]
pub unsafe extern "C" fn chb_simulation_step(
    sim: *mut ChbSimulation,
    converged: *mut bool,
) -> ChbStatus {
    guard(|| {
        let s = sim.as_mut().ok_or_else(null)?;
        let r = s.sim.step().map_err(core_err)?;
        if !converged.is_null() {
            *converged = r.converged;
        }
        Ok(())
    })
}

/// # Safety
/// `sim` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn chb_simulation_energies(
    sim: *const ChbSimulation,
    out: *mut ChbEnergies,
) -> ChbStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(null)?;
        let out = out.as_mut().ok_or_else(null)?;
        let e = s.sim.energies();
        *out = ChbEnergies {
            total: e.total,
            interface: e.interface,
            elastic: e.elastic,
            fluid: e.fluid,
        };
        Ok(())
    })
}

/// Number of mesh vertices, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn chb_simulation_num_vertices(sim: *const ChbSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.sim.state().n_vertices())
}

/// Current simulated time, or NaN for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn chb_simulation_time(sim: *const ChbSimulation) -> f64 {
    sim.as_ref().map_or(f64::NAN, |s| s.sim.time())
}

/// Copies nodal values of `field` into `buf` (length `len`, at least the
/// vertex count).
///
/// # Safety
/// `sim` must be a live handle; `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn chb_simulation_copy_field(
    sim: *const ChbSimulation,
    field: ChbField,
    buf: *mut f64,
    len: usize,
) -> ChbStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(null)?;
        if buf.is_null() {
            return Err(null());
        }
        let f = match field {
            ChbField::Phi => Field::Phi,
            ChbField::Mu => Field::Mu,
            ChbField::Ux => Field::Ux,
            ChbField::Uy => Field::Uy,
            ChbField::Theta => Field::Theta,
            ChbField::Pressure => Field::P,
        };
        let values = s.sim.state().field(f);
        if len < values.len() {
            return Err((
                ChbStatus::BufferTooSmall,
                format!("buffer holds {len} values, {} needed", values.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buf, values.len()).copy_from_slice(values);
        Ok(())
    })
}

/// Copies the last error message on this thread into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length without the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn chb_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}
