//! C ABI over the `pearcey` crate.
//!
//! Every function returns a [`PearceyStatus`]; results go through out
//! pointers. Handles are opaque and must be released with the matching
//! `_free` function. After a failure, `pearcey_last_error` describes it.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use pearcey::finite_n::{FiniteNKernel, Form, PathModel, ZeroStartMethod, MAX_SUM_FORM_N};
use pearcey::fredholm::{NystromSystem, RegionFamily};
use pearcey::higher_order::singularity_roots;
use pearcey::kernels::{KernelSpec, MatrixKernel, PearceyKernel};
use pearcey::special::{phi, psi, PearceyParams};
use pearcey::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PearceyStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NonConvergence = 3,
    Singular = 4,
    OutOfRange = 5,
    Infeasible = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

type SharedKernel = Arc<dyn MatrixKernel + Send>;

/// A matrix kernel: the extended Pearcey kernel, its order-R variant or a finite-n kernel.
pub struct PearceyKernelHandle {
    kernel: SharedKernel,
}

/// A discretized operator I − Kχ on a fixed family of regions.
pub struct PearceySystemHandle {
    system: NystromSystem<SharedKernel>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PearceyStatus {
    match e {
        Error::NonConvergence { .. } | Error::RootFinding { .. } | Error::Conditioning { .. } => {
            PearceyStatus::NonConvergence
        }
        Error::Singular(_) => PearceyStatus::Singular,
        Error::OutOfRange { .. } => PearceyStatus::OutOfRange,
        Error::Infeasible { .. } => PearceyStatus::Infeasible,
        _ => PearceyStatus::InvalidArgument,
    }
}

enum Failure {
    Status(PearceyStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null() -> Failure {
    Failure::Status(PearceyStatus::NullPointer, "null pointer argument".into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PearceyStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PearceyStatus::Ok
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            PearceyStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a>(ptr: *const f64, len: usize) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    out.write(v);
    Ok(())
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn pearcey_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pearcey_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// φ^{(deriv)}(x) at time `tau`; order 1 is the canonical Pearcey function.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pearcey_phi(tau: f64, order_r: usize, x: f64, deriv: usize, out: *mut f64) -> PearceyStatus {
    guard(|| write(out, phi(x, &PearceyParams::new(tau, order_r)?, deriv)?))
}

/// ψ^{(deriv)}(y) at time `tau`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pearcey_psi(tau: f64, order_r: usize, y: f64, deriv: usize, out: *mut f64) -> PearceyStatus {
    guard(|| write(out, psi(y, &PearceyParams::new(tau, order_r)?, deriv)?))
}

/// Extended kernel on `m` increasing times. Order 1 gives the canonical
/// quartic kernel, orders 2..=8 the scaled higher-order kernels.
///
/// # Safety
/// `taus` must be valid for `m` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn pearcey_kernel_new(
    taus: *const f64,
    m: usize,
    order_r: usize,
    out: *mut *mut PearceyKernelHandle,
) -> PearceyStatus {
    guard(|| {
        let taus = slice(taus, m)?.to_vec();
        let spec = if order_r == 1 { KernelSpec::pearcey(taus)? } else { KernelSpec::higher_order(taus, order_r)? };
        let kernel: SharedKernel = Arc::new(PearceyKernel::new(spec)?);
        write(out, Box::into_raw(Box::new(PearceyKernelHandle { kernel })))
    })
}

/// Finite-n kernel for `n` Brownian bridges from `starts` (null means all
/// zero) to distinct `ends`, observed at `m` times in (0, 1).
///
/// # Safety
/// `starts` (if non-null) and `ends` must be valid for `n` reads, `taus`
/// for `m` reads, `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn pearcey_finite_n_kernel_new(
    starts: *const f64,
    ends: *const f64,
    n: usize,
    taus: *const f64,
    m: usize,
    out: *mut *mut PearceyKernelHandle,
) -> PearceyStatus {
    guard(|| {
        let ends = slice(ends, n)?.to_vec();
        let starts = if starts.is_null() { vec![0.0; n] } else { slice(starts, n)?.to_vec() };
        let model = PathModel::new(starts, ends, slice(taus, m)?.to_vec())?;
        let form = match (model.has_zero_starts(), model.n() <= MAX_SUM_FORM_N) {
            (false, _) => Form::General,
            (true, true) => Form::ZeroStart(ZeroStartMethod::Sum),
            (true, false) => Form::ZeroStart(ZeroStartMethod::Contour),
        };
        let kernel: SharedKernel = Arc::new(FiniteNKernel::new(model, form)?);
        write(out, Box::into_raw(Box::new(PearceyKernelHandle { kernel })))
    })
}

/// # Safety
/// `handle` must come from a `_new` function and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pearcey_kernel_free(handle: *mut PearceyKernelHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `handle` must be null or live; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pearcey_kernel_num_times(
    handle: *const PearceyKernelHandle,
    out: *mut usize,
) -> PearceyStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(null)?;
        write(out, h.kernel.num_times())
    })
}

/// ∂x^dx ∂y^dy K_ij(x, y) with 0-based time indices.
///
/// # Safety
/// `handle` must be null or live; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pearcey_kernel_entry(
    handle: *const PearceyKernelHandle,
    i: usize,
    j: usize,
    x: f64,
    y: f64,
    dx: usize,
    dy: usize,
    out: *mut f64,
) -> PearceyStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(null)?;
        let m = h.kernel.num_times();
        if i >= m || j >= m {
            return Err(Failure::Status(PearceyStatus::InvalidArgument, format!("time index out of range 0..{m}")));
        }
        write(out, h.kernel.entry(i, j, x, y, dx, dy)?)
    })
}

/// Regions from a flat list of interval bounds: time k owns `counts[k]`
/// consecutive pairs (a, b) of `bounds`.
unsafe fn regions(bounds: *const f64, counts: *const usize, m: usize) -> Result<RegionFamily, Failure> {
    if m > 0 && counts.is_null() {
        return Err(null());
    }
    let counts = if m == 0 { &[][..] } else { std::slice::from_raw_parts(counts, m) };
    let total: usize = counts.iter().sum();
    let flat = slice(bounds, 2 * total)?;
    let mut sets = Vec::with_capacity(m);
    let mut pos = 0;
    for &c in counts {
        sets.push((0..c).map(|q| [flat[2 * (pos + q)], flat[2 * (pos + q) + 1]]).collect());
        pos += c;
    }
    Ok(RegionFamily::new(sets)?)
}

/// Discretize I − Kχ with `nodes_per_interval` Gauss–Legendre nodes. The
/// system keeps its own reference to the kernel, which may be freed first.
///
/// # Safety
/// `counts` must be valid for `num_times` reads, `bounds` for twice their
/// sum, `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn pearcey_system_new(
    kernel: *const PearceyKernelHandle,
    bounds: *const f64,
    counts: *const usize,
    nodes_per_interval: usize,
    out: *mut *mut PearceySystemHandle,
) -> PearceyStatus {
    guard(|| {
        let k = kernel.as_ref().ok_or_else(null)?;
        let regions = regions(bounds, counts, k.kernel.num_times())?;
        let system = NystromSystem::discretize(k.kernel.clone(), regions, nodes_per_interval)?;
        write(out, Box::into_raw(Box::new(PearceySystemHandle { system })))
    })
}

/// # Safety
/// `handle` must come from `pearcey_system_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pearcey_system_free(handle: *mut PearceySystemHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// det(I − Kχ), checked to lie in [0, 1] up to 1e−8.
///
/// # Safety
/// `handle` must be null or live; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pearcey_system_gap_probability(
    handle: *const PearceySystemHandle,
    out: *mut f64,
) -> PearceyStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(null)?;
        write(out, h.system.gap_probability()?)
    })
}

/// Resolvent kernel ∂x^dx ∂y^dy R_ij(x, y).
///
/// # Safety
/// `handle` must be null or live; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pearcey_system_resolvent(
    handle: *const PearceySystemHandle,
    i: usize,
    x: f64,
    j: usize,
    y: f64,
    dx: usize,
    dy: usize,
    out: *mut f64,
) -> PearceyStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(null)?;
        let m = h.system.kernel().num_times();
        if i >= m || j >= m {
            return Err(Failure::Status(PearceyStatus::InvalidArgument, format!("time index out of range 0..{m}")));
        }
        write(out, h.system.resolvent(i, x, j, y, dx, dy)?)
    })
}

/// ∂ log det / ∂ endpoint, in the order the bounds were given.
///
/// # Safety
/// `handle` must be null or live; `grad` must be valid for `cap` writes
/// and `len` for one write. `len` receives the number of endpoints even
/// when `cap` is too small.
#[no_mangle]
pub unsafe extern "C" fn pearcey_system_log_det_gradient(
    handle: *const PearceySystemHandle,
    grad: *mut f64,
    cap: usize,
    len: *mut usize,
) -> PearceyStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(null)?;
        let g = h.system.log_det_gradient()?;
        write(len, g.len())?;
        if g.len() > cap {
            return Err(Failure::Status(PearceyStatus::BufferTooSmall, format!("need room for {} values", g.len())));
        }
        if !g.is_empty() && grad.is_null() {
            return Err(null());
        }
        for (q, (_, v)) in g.iter().enumerate() {
            write(grad.add(q), *v)?;
        }
        Ok(())
    })
}

/// One-shot det(I − Kχ).
///
/// # Safety
/// As for `pearcey_system_new`.
#[no_mangle]
pub unsafe extern "C" fn pearcey_gap_probability(
    kernel: *const PearceyKernelHandle,
    bounds: *const f64,
    counts: *const usize,
    nodes_per_interval: usize,
    out: *mut f64,
) -> PearceyStatus {
    let mut sys: *mut PearceySystemHandle = std::ptr::null_mut();
    let s = pearcey_system_new(kernel, bounds, counts, nodes_per_interval, &mut sys);
    if s != PearceyStatus::Ok {
        return s;
    }
    let s = pearcey_system_gap_probability(sys, out);
    pearcey_system_free(sys);
    s
}

/// The R roots a_r of the order-R endpoint polynomial, sorted by real then
/// imaginary part.
///
/// # Safety
/// `re` and `im` must be valid for `cap` writes, `len` for one write.
#[no_mangle]
pub unsafe extern "C" fn pearcey_roots(
    order_r: usize,
    re: *mut f64,
    im: *mut f64,
    cap: usize,
    len: *mut usize,
) -> PearceyStatus {
    guard(|| {
        let sys = singularity_roots(order_r)?;
        write(len, sys.roots.len())?;
        if sys.roots.len() > cap {
            return Err(Failure::Status(
                PearceyStatus::BufferTooSmall,
                format!("need room for {} roots", sys.roots.len()),
            ));
        }
        if re.is_null() || im.is_null() {
            return Err(null());
        }
        for (q, z) in sys.roots.iter().enumerate() {
            write(re.add(q), z.re)?;
            write(im.add(q), z.im)?;
        }
        Ok(())
    })
}
