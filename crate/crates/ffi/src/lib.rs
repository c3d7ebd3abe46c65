//! C ABI over `roughdyadic`.
//!
//! Objects cross the boundary as opaque handles created by `rd_*_new` /
//! `rd_*_generate` and released by the matching `rd_*_free`. Every fallible
//! call returns an [`RdStatus`]; on failure the message is kept per thread
//! and can be copied out with [`rd_last_error_message`]. Output buffers are
//! caller-allocated, with their capacity passed alongside; a short buffer
//! yields [`RdStatus::BufferTooSmall`] and the required length in `*needed`
//! where the call has such a parameter.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use roughdyadic::lift::{dyadic_diff, dyadic_level1, dyadic_level2, lift_polygonal, DyadicLiftTable};
use roughdyadic::paths::DyadicBrownianPath;
use roughdyadic::solver::{solve_wz, ReferenceCase};
use roughdyadic::variation::{d_p_grid_polygons, default_anchor_level, dyadic_anchors, rho, RhoParams, TailMode};
use roughdyadic::verifier::{compute_c_theta, verify_lemma, LemmaId, RateCheckSpec, Verdict};
use roughdyadic::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    IndexOutOfRange = 4,
    NotConverged = 5,
    BlowUp = 6,
    Parse = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Verdict of a lemma check.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdVerdict {
    Pass = 0,
    Fail = 1,
    Inconclusive = 2,
}

/// Opaque handle to a generated dyadic Brownian path.
pub struct RdPath {
    inner: DyadicBrownianPath,
}

/// Settings for [`rd_verify_lemma`]; start from [`rd_rate_check_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RdRateCheck {
    pub dim: u32,
    pub p: f64,
    pub gamma: f64,
    pub q: f64,
    pub n_tilde: u32,
    pub beta: f64,
    pub theta: f64,
    pub delta: f64,
    pub eps: f64,
    pub m_lo: u32,
    pub m_hi: u32,
    pub n_lo: u32,
    pub n_hi: u32,
    pub samples: u64,
    pub seed: u64,
    pub slope_tol: f64,
    pub margin: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> RdStatus {
    match err {
        Error::DimensionMismatch { .. } => RdStatus::DimensionMismatch,
        Error::IndexOutOfRange(_) => RdStatus::IndexOutOfRange,
        Error::InvalidParameter(_) => RdStatus::InvalidArgument,
        Error::NotConverged { .. } => RdStatus::NotConverged,
        Error::BlowUp { .. } => RdStatus::BlowUp,
        Error::Parse(_) => RdStatus::Parse,
        Error::Io(_) => RdStatus::Io,
    }
}

fn fail(status: RdStatus, msg: impl Into<String>) -> RdStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, mapping library errors and panics to status codes.
fn guard<F: FnOnce() -> Result<(), RdStatus>>(f: F) -> RdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            RdStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(RdStatus::Panic, msg)
        }
    }
}

fn lib<T>(r: roughdyadic::Result<T>) -> Result<T, RdStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn path_ref<'a>(path: *const RdPath) -> Result<&'a DyadicBrownianPath, RdStatus> {
    if path.is_null() {
        return Err(fail(RdStatus::NullPointer, "path handle is null"));
    }
    Ok(&(*path).inner)
}

unsafe fn write_out(values: &[f64], out: *mut f64, cap: usize, needed: *mut usize) -> Result<(), RdStatus> {
    if !needed.is_null() {
        *needed = values.len();
    }
    if out.is_null() {
        return Err(fail(RdStatus::NullPointer, "output buffer is null"));
    }
    if cap < values.len() {
        return Err(fail(
            RdStatus::BufferTooSmall,
            format!("buffer holds {cap} values, need {}", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn write_scalar(value: f64, out: *mut f64) -> Result<(), RdStatus> {
    if out.is_null() {
        return Err(fail(RdStatus::NullPointer, "output pointer is null"));
    }
    *out = value;
    Ok(())
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, RdStatus> {
    if s.is_null() {
        return Err(fail(RdStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(RdStatus::Parse, format!("{what} is not UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `cap`) and returns its full length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn rd_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Generates a `dim`-dimensional path on the grid of level `resolution`.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_path_generate(dim: u32, resolution: u32, seed: u64, out: *mut *mut RdPath) -> RdStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(RdStatus::NullPointer, "out is null"));
        }
        let inner = lib(DyadicBrownianPath::generate(dim as usize, resolution, seed))?;
        *out = Box::into_raw(Box::new(RdPath { inner }));
        Ok(())
    })
}

/// Builds a path from `(2^resolution + 1) × dim` row-major grid values.
///
/// # Safety
/// `values` must be valid for `len` reads and `out` for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn rd_path_from_values(
    dim: u32,
    resolution: u32,
    values: *const f64,
    len: usize,
    out: *mut *mut RdPath,
) -> RdStatus {
    guard(|| {
        if out.is_null() || values.is_null() {
            return Err(fail(RdStatus::NullPointer, "values or out is null"));
        }
        let v = std::slice::from_raw_parts(values, len).to_vec();
        let inner = lib(DyadicBrownianPath::from_values(dim as usize, resolution, v))?;
        *out = Box::into_raw(Box::new(RdPath { inner }));
        Ok(())
    })
}

/// Releases a path; null is ignored.
///
/// # Safety
/// `path` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rd_path_free(path: *mut RdPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// # Safety
/// `path` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn rd_path_dim(path: *const RdPath) -> u32 {
    path.as_ref().map_or(0, |p| p.inner.dim() as u32)
}

/// # Safety
/// `path` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn rd_path_resolution(path: *const RdPath) -> u32 {
    path.as_ref().map_or(0, |p| p.inner.resolution())
}

/// `w(k 2^{-level})` into `out[0..dim]`.
///
/// # Safety
/// `path` must be live and `out` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn rd_path_value(path: *const RdPath, level: u32, k: u64, out: *mut f64, cap: usize) -> RdStatus {
    guard(|| {
        let p = path_ref(path)?;
        if level > p.resolution() || k > (1u64 << level) {
            return Err(fail(
                RdStatus::IndexOutOfRange,
                format!("point {k} of level {level} outside a resolution-{} grid", p.resolution()),
            ));
        }
        write_out(p.value_at(level, k), out, cap, ptr::null_mut())
    })
}

/// Level-1 increment of `w^(m)` over the `k`-th level-`n` dyadic interval
/// (`k` is 1-based), `dim` values.
///
/// # Safety
/// `path` must be live and `out` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn rd_dyadic_level1(
    path: *const RdPath,
    m: u32,
    n: u32,
    k: u64,
    out: *mut f64,
    cap: usize,
) -> RdStatus {
    guard(|| {
        let v = lib(dyadic_level1(path_ref(path)?, m, n, k))?;
        write_out(&v, out, cap, ptr::null_mut())
    })
}

/// Level-2 increment of `w^(m)` over the `k`-th level-`n` interval,
/// `dim × dim` row-major.
///
/// # Safety
/// `path` must be live and `out` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn rd_dyadic_level2(
    path: *const RdPath,
    m: u32,
    n: u32,
    k: u64,
    out: *mut f64,
    cap: usize,
) -> RdStatus {
    guard(|| {
        let v = lib(dyadic_level2(path_ref(path)?, m, n, k))?;
        write_out(&v, out, cap, ptr::null_mut())
    })
}

/// `X_level(w^(m+1)) − X_level(w^(m))` over the `k`-th level-`n`
/// interval; `level` is 1 (`dim` values) or 2 (`dim × dim`).
///
/// # Safety
/// `path` must be live and `out` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn rd_dyadic_diff(
    path: *const RdPath,
    m: u32,
    n: u32,
    k: u64,
    level: u32,
    out: *mut f64,
    cap: usize,
) -> RdStatus {
    guard(|| {
        let level = u8::try_from(level).map_err(|_| fail(RdStatus::InvalidArgument, "level must be 1 or 2"))?;
        let v = lib(dyadic_diff(path_ref(path)?, m, n, k, level))?;
        write_out(&v, out, cap, ptr::null_mut())
    })
}

/// Level-1 (`dim`) and level-2 (`dim × dim`) parts of the lift of `w^(m)`
/// over `[s, t]`.
///
/// # Safety
/// `path` must be live; `level1` and `level2` valid for `dim` and
/// `dim * dim` writes.
#[no_mangle]
pub unsafe extern "C" fn rd_lift_increment(
    path: *const RdPath,
    m: u32,
    s: f64,
    t: f64,
    level1: *mut f64,
    level2: *mut f64,
) -> RdStatus {
    guard(|| {
        let p = path_ref(path)?;
        let g = lib(lift_polygonal(&lib(p.polygonal(m))?, s, t))?;
        let d = p.dim();
        write_out(g.level1(), level1, d, ptr::null_mut())?;
        write_out(g.level2(), level2, d * d, ptr::null_mut())
    })
}

/// Grid `d_p` distance between the lifts of `w^(a)` and `w^(b)`, on the
/// dyadic anchors of level `anchor_level` (0 picks the default for
/// `min(a, b)`).
///
/// # Safety
/// `path` must be live and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rd_d_p_grid(
    path: *const RdPath,
    a: u32,
    b: u32,
    anchor_level: u32,
    p: f64,
    out: *mut f64,
) -> RdStatus {
    guard(|| {
        let w = path_ref(path)?;
        let level = if anchor_level == 0 {
            default_anchor_level(a.min(b))
        } else {
            anchor_level
        };
        if level > 16 {
            return Err(fail(RdStatus::InvalidArgument, "anchor level above 16"));
        }
        let v = lib(d_p_grid_polygons(
            &lib(w.polygonal(a))?,
            &lib(w.polygonal(b))?,
            &dyadic_anchors(level),
            p,
        ))?;
        write_scalar(v, out)
    })
}

/// `ρ_j(w^(a), w^(b))` with the analytic tail; pass `b = UINT32_MAX` for
/// `ρ_j(w^(a))` against the zero path.
///
/// # Safety
/// `path` must be live and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rd_rho(
    path: *const RdPath,
    j: u32,
    a: u32,
    b: u32,
    p: f64,
    gamma: f64,
    out: *mut f64,
) -> RdStatus {
    guard(|| {
        let w = path_ref(path)?;
        let j = u8::try_from(j).map_err(|_| fail(RdStatus::InvalidArgument, "j must be 1 or 2"))?;
        let params = lib(RhoParams::new(p, gamma, 30, TailMode::AnalyticTail))?;
        let ta = DyadicLiftTable::new(&lib(w.polygonal(a))?);
        let v = if b == u32::MAX {
            lib(rho(j, &ta, &roughdyadic::variation::ZeroPath { dim: w.dim() }, &params))?
        } else {
            let tb = DyadicLiftTable::new(&lib(w.polygonal(b))?);
            lib(rho(j, &ta, &tb, &params))?
        };
        write_scalar(v, out)
    })
}

/// Solves the reference case `case_id` (`exp_scalar`, `commuting_linear`,
/// `rotation_area`) along `w^(m)` and writes the endpoint. The path must
/// have the case's driver dimension.
///
/// # Safety
/// `case_id` must be a NUL-terminated string, `path` live, `out` valid for
/// `cap` writes and `needed` null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rd_solve_endpoint(
    case_id: *const c_char,
    path: *const RdPath,
    m: u32,
    substeps: u32,
    out: *mut f64,
    cap: usize,
    needed: *mut usize,
) -> RdStatus {
    guard(|| {
        let case = lib(ReferenceCase::from_id(c_str(case_id, "case_id")?))?;
        let w = path_ref(path)?;
        let field = case.field();
        let res = lib(solve_wz(field.as_ref(), &case.initial_state(), &lib(w.polygonal(m))?, substeps as usize))?;
        write_out(res.endpoint(), out, cap, needed)
    })
}

/// `1 / Σ_{n≥1} n^γ 2^{−nθ}`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rd_compute_c_theta(theta: f64, gamma: f64, out: *mut f64) -> RdStatus {
    guard(|| write_scalar(lib(compute_c_theta(theta, gamma))?, out))
}

/// Default settings for [`rd_verify_lemma`].
#[no_mangle]
pub extern "C" fn rd_rate_check_default() -> RdRateCheck {
    let s = RateCheckSpec::default();
    RdRateCheck {
        dim: s.dim as u32,
        p: s.rho.p,
        gamma: s.rho.gamma,
        q: s.q,
        n_tilde: s.n_tilde,
        beta: s.beta,
        theta: s.theta,
        delta: s.delta,
        eps: s.eps,
        m_lo: s.m_range.0,
        m_hi: s.m_range.1,
        n_lo: s.n_range.0,
        n_hi: s.n_range.1,
        samples: s.samples as u64,
        seed: s.seed,
        slope_tol: s.slope_tol,
        margin: s.margin,
    }
}

/// Runs the Monte Carlo check for `lemma_id` (e.g. `"lem1a"`, `"th8"`).
///
/// # Safety
/// `lemma_id` must be a NUL-terminated string, `spec` valid for one read and
/// `verdict` for one write.
#[no_mangle]
pub unsafe extern "C" fn rd_verify_lemma(
    lemma_id: *const c_char,
    spec: *const RdRateCheck,
    verdict: *mut RdVerdict,
) -> RdStatus {
    guard(|| {
        let lemma: LemmaId = lib(c_str(lemma_id, "lemma_id")?.parse())?;
        if spec.is_null() || verdict.is_null() {
            return Err(fail(RdStatus::NullPointer, "spec or verdict is null"));
        }
        let c = *spec;
        let defaults = RateCheckSpec::default();
        let s = RateCheckSpec {
            dim: c.dim as usize,
            rho: RhoParams {
                p: c.p,
                gamma: c.gamma,
                ..defaults.rho
            },
            q: c.q,
            n_tilde: c.n_tilde,
            beta: c.beta,
            theta: c.theta,
            delta: c.delta,
            eps: c.eps,
            m_range: (c.m_lo, c.m_hi),
            n_range: (c.n_lo, c.n_hi),
            samples: c.samples as usize,
            seed: c.seed,
            slope_tol: c.slope_tol,
            margin: c.margin,
            ..defaults
        };
        let report = lib(verify_lemma(lemma, &s))?;
        *verdict = match report.verdict {
            Verdict::Pass => RdVerdict::Pass,
            Verdict::Fail => RdVerdict::Fail,
            Verdict::Inconclusive => RdVerdict::Inconclusive,
        };
        Ok(())
    })
}
