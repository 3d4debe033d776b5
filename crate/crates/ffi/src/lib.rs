//! C ABI for `hwgn2`.
//!
//! Every function returns an [`Hwgn2Status`]. On failure a message is kept
//! per thread and can be read with [`hwgn2_last_error`]. Handles are opaque
//! and must be released with their `_free` function; freeing null is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hwgn2::leakage::{welch_t, Population, TraceSet};
use hwgn2::mips::{assemble, disassemble, MipsProgram};
use hwgn2::nncompile::{binarize, compile_bnn, compile_mlp, encode_mlp_input, CompileOptions, Model};
use hwgn2::ot::OtProfile;
use hwgn2::protocol::engine::derive;
use hwgn2::protocol::{predict_rounds, run_loopback, EvaluatorReport, Mode, Security, SessionConfig, SessionError, Verdict};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hwgn2Status {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    /// Malformed model, program or input.
    Parse = 3,
    /// The session aborted.
    Protocol = 4,
    /// The caller's buffer is too small; the needed length was written.
    BufferTooSmall = 5,
    Panic = 6,
}

/// An assembled or compiled program.
pub struct Hwgn2Program {
    inner: MipsProgram,
}

/// Outcome of a finished session.
pub struct Hwgn2Result {
    report: EvaluatorReport,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct Hwgn2ProgramInfo {
    pub instructions: u64,
    pub dmem_words: u64,
    pub include_mult: bool,
    pub input_base: u32,
    pub input_words: u32,
    pub output_base: u32,
    pub output_words: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct Hwgn2CommStats {
    pub rounds: u64,
    pub bytes_garbler_to_evaluator: u64,
    pub bytes_evaluator_to_garbler: u64,
    pub peak_resident_tables: u64,
    pub peak_resident_labels: u64,
    pub step_count: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Fail(Hwgn2Status, String);

fn fail(status: Hwgn2Status, msg: impl ToString) -> Fail {
    Fail(status, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> Hwgn2Status {
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(fail(Hwgn2Status::Panic, msg))
    });
    match r {
        Ok(()) => {
            set_error("");
            Hwgn2Status::Ok
        }
        Err(Fail(status, msg)) => {
            set_error(&msg);
            status
        }
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(Hwgn2Status::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(Hwgn2Status::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    match (p.is_null(), n) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(fail(Hwgn2Status::NullArgument, format!("{what} is null"))),
        (false, _) => Ok(std::slice::from_raw_parts(p, n)),
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| fail(Hwgn2Status::NullArgument, format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(Hwgn2Status::NullArgument, format!("{what} is null")))
}

/// Copies `src` into `buf` (capacity `cap`), writing the full length to `len`.
unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, cap: usize, len: *mut usize) -> Result<(), Fail> {
    *out(len, "len")? = src.len();
    if src.len() > cap {
        return Err(fail(Hwgn2Status::BufferTooSmall, format!("need {} elements, have {cap}", src.len())));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(fail(Hwgn2Status::NullArgument, "buf is null"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn hwgn2_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Assembles program text.
///
/// # Safety
/// `source` must be a NUL-terminated string; `program` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwgn2_program_assemble(source: *const c_char, program: *mut *mut Hwgn2Program) -> Hwgn2Status {
    guard(|| {
        let slot = out(program, "program")?;
        *slot = ptr::null_mut();
        let inner = assemble(text(source, "source")?).map_err(|e| fail(Hwgn2Status::Parse, e))?;
        *slot = Box::into_raw(Box::new(Hwgn2Program { inner }));
        Ok(())
    })
}

/// Compiles a JSON model. With `bnn`, an MLP is binarized first.
///
/// # Safety
/// `model_json` must be a NUL-terminated string; `program` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwgn2_program_compile(
    model_json: *const c_char,
    bnn: bool,
    program: *mut *mut Hwgn2Program,
) -> Hwgn2Status {
    guard(|| {
        let slot = out(program, "program")?;
        *slot = ptr::null_mut();
        let model = Model::from_json(text(model_json, "model_json")?).map_err(|e| fail(Hwgn2Status::Parse, e))?;
        let opts = CompileOptions::default();
        let inner = match (&model, bnn) {
            (Model::Mlp(m), false) => compile_mlp(m, opts),
            (Model::Mlp(m), true) => compile_bnn(&binarize(m), opts),
            (Model::Bnn(m), _) => compile_bnn(m, opts),
        }
        .map_err(|e| fail(Hwgn2Status::Parse, e))?;
        *slot = Box::into_raw(Box::new(Hwgn2Program { inner }));
        Ok(())
    })
}

/// # Safety
/// `program` must come from this library; `info` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwgn2_program_info(program: *const Hwgn2Program, info: *mut Hwgn2ProgramInfo) -> Hwgn2Status {
    guard(|| {
        let p = &handle(program, "program")?.inner;
        *out(info, "info")? = Hwgn2ProgramInfo {
            instructions: p.instructions.len() as u64,
            dmem_words: p.dmem_words as u64,
            include_mult: p.include_mult,
            input_base: p.evaluator_input_region.0,
            input_words: p.evaluator_input_region.1,
            output_base: p.output_region.0,
            output_words: p.output_region.1,
        };
        Ok(())
    })
}

/// Program text; release with [`hwgn2_string_free`].
///
/// # Safety
/// `program` must come from this library; `source` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwgn2_program_disassemble(program: *const Hwgn2Program, source: *mut *mut c_char) -> Hwgn2Status {
    guard(|| {
        let slot = out(source, "source")?;
        *slot = ptr::null_mut();
        let s = disassemble(&handle(program, "program")?.inner);
        *slot = CString::new(s).map_err(|e| fail(Hwgn2Status::InvalidArgument, e))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `program` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hwgn2_program_free(program: *mut Hwgn2Program) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hwgn2_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Packs pixel values 0..=255 four per word, as compiled MLPs expect.
///
/// # Safety
/// `pixels` must hold `n` values; `words` must hold `cap` words.
#[no_mangle]
pub unsafe extern "C" fn hwgn2_encode_pixels(
    pixels: *const i32,
    n: usize,
    words: *mut u32,
    cap: usize,
    len: *mut usize,
) -> Hwgn2Status {
    guard(|| {
        let w = encode_mlp_input(slice(pixels, n, "pixels")?).map_err(|e| fail(Hwgn2Status::InvalidArgument, e))?;
        copy_out(&w, words, cap, len)
    })
}

/// Runs garbler and evaluator in this process. `mode` is `"full"` or
/// `"stream:K"`, `security` is `"hbc"` or `"malicious:S"`, `seed` is 32
/// bytes. The OT group follows `HWGN2_PROFILE`.
///
/// # Safety
/// Pointers must be valid for the given lengths; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwgn2_run_loopback(
    program: *const Hwgn2Program,
    input: *const u32,
    input_words: usize,
    mode: *const c_char,
    security: *const c_char,
    seed: *const u8,
    result: *mut *mut Hwgn2Result,
) -> Hwgn2Status {
    guard(|| {
        let slot = out(result, "result")?;
        *slot = ptr::null_mut();
        let p = &handle(program, "program")?.inner;
        let x = slice(input, input_words, "input")?;
        let mode: Mode = text(mode, "mode")?.parse().map_err(|e| fail(Hwgn2Status::InvalidArgument, e))?;
        let security: Security = text(security, "security")?
            .parse()
            .map_err(|e| fail(Hwgn2Status::InvalidArgument, e))?;
        let seed: [u8; 32] = slice(seed, 32, "seed")?.try_into().unwrap();
        let profile = OtProfile::from_env().map_err(|e| fail(Hwgn2Status::InvalidArgument, e))?;
        let cfg = |s| {
            let mut c = SessionConfig::new(mode, security, s);
            c.ot_profile = profile;
            c
        };
        let (g, e) = run_loopback(&cfg(derive(&seed, b"garbler")), &cfg(derive(&seed, b"evaluator")), p, x);
        let report = e.map_err(|e| {
            let status = match e {
                SessionError::Config(_) | SessionError::Mips(_) => Hwgn2Status::InvalidArgument,
                _ => Hwgn2Status::Protocol,
            };
            fail(status, e)
        })?;
        if report.verdict == Verdict::Ok {
            g.map_err(|e| fail(Hwgn2Status::Protocol, e))?;
        }
        *slot = Box::into_raw(Box::new(Hwgn2Result { report }));
        Ok(())
    })
}

/// Output words. Fails with `BufferTooSmall` (and the needed length in
/// `len`) when `cap` is short.
///
/// # Safety
/// `result` must come from this library; `words` must hold `cap` words.
#[no_mangle]
pub unsafe extern "C" fn hwgn2_result_output(
    result: *const Hwgn2Result,
    words: *mut u32,
    cap: usize,
    len: *mut usize,
) -> Hwgn2Status {
    guard(|| {
        let r = &handle(result, "result")?.report;
        let y = r
            .y
            .as_deref()
            .ok_or_else(|| fail(Hwgn2Status::InvalidArgument, "no plain output"))?;
        copy_out(y, words, cap, len)
    })
}

/// # Safety
/// `result` must come from this library; `stats` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwgn2_result_stats(result: *const Hwgn2Result, stats: *mut Hwgn2CommStats) -> Hwgn2Status {
    guard(|| {
        let r = &handle(result, "result")?.report;
        *out(stats, "stats")? = Hwgn2CommStats {
            rounds: r.stats.ot_rounds,
            bytes_garbler_to_evaluator: r.stats.bytes_garbler_to_evaluator,
            bytes_evaluator_to_garbler: r.stats.bytes_evaluator_to_garbler,
            peak_resident_tables: r.stats.peak_resident_tables,
            peak_resident_labels: r.stats.peak_resident_labels,
            step_count: r.side_info.step_count,
        };
        Ok(())
    })
}

/// Cut-and-choose verdict: `*cheat_copy` is -1 when the run was accepted,
/// otherwise the index of a copy that failed its audit.
///
/// # Safety
/// `result` must come from this library; `cheat_copy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwgn2_result_verdict(result: *const Hwgn2Result, cheat_copy: *mut i64) -> Hwgn2Status {
    guard(|| {
        *out(cheat_copy, "cheat_copy")? = match handle(result, "result")?.report.verdict {
            Verdict::Ok => -1,
            Verdict::Cheat { copy } => copy as i64,
        };
        Ok(())
    })
}

/// # Safety
/// `result` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hwgn2_result_free(result: *mut Hwgn2Result) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Round trips of a session over `steps` processor steps.
///
/// # Safety
/// `mode` and `security` must be NUL-terminated; `rounds` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hwgn2_predict_rounds(
    mode: *const c_char,
    security: *const c_char,
    steps: u64,
    rounds: *mut u64,
) -> Hwgn2Status {
    guard(|| {
        let mode: Mode = text(mode, "mode")?.parse().map_err(|e| fail(Hwgn2Status::InvalidArgument, e))?;
        let security: Security = text(security, "security")?
            .parse()
            .map_err(|e| fail(Hwgn2Status::InvalidArgument, e))?;
        *out(rounds, "rounds")? = predict_rounds(mode, security, steps);
        Ok(())
    })
}

/// Welch t per sample of two row-major trace matrices with `n_samples`
/// columns. `t` must hold `n_samples` values.
///
/// # Safety
/// `a` holds `n_a * n_samples` floats, `b` holds `n_b * n_samples`.
#[no_mangle]
pub unsafe extern "C" fn hwgn2_welch_t(
    a: *const f32,
    n_a: usize,
    b: *const f32,
    n_b: usize,
    n_samples: usize,
    t: *mut f64,
) -> Hwgn2Status {
    guard(|| {
        let set = |p, n, pop, what| -> Result<TraceSet, Fail> {
            let len = n_samples
                .checked_mul(n)
                .ok_or_else(|| fail(Hwgn2Status::InvalidArgument, "size overflow"))?;
            let mut s = TraceSet::new(pop, n_samples);
            s.data = slice(p, len, what)?.to_vec();
            Ok(s)
        };
        let (a, b) = (set(a, n_a, Population::Fixed, "a")?, set(b, n_b, Population::Random, "b")?);
        let series = welch_t(&a, &b).map_err(|e| fail(Hwgn2Status::InvalidArgument, e))?;
        if n_samples > 0 && t.is_null() {
            return Err(fail(Hwgn2Status::NullArgument, "t is null"));
        }
        ptr::copy_nonoverlapping(series.t.as_ptr(), t, n_samples);
        Ok(())
    })
}

/// NUL-terminated library version.
#[no_mangle]
pub extern "C" fn hwgn2_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
