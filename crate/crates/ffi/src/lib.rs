//! C ABI over `vep-core`.
//!
//! Every fallible call returns a [`VepStatus`]; on failure a message is
//! kept per thread and can be read with [`vep_last_error`]. Objects cross
//! the boundary as opaque handles that the caller releases with the
//! matching `*_free` function. Strings returned to the caller are owned by
//! the caller and released with [`vep_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use vep_core::analytics::{self, Viewpoint};
use vep_core::codec::{self, Decoded};
use vep_core::ledger::{forge_block, Localchain};
use vep_core::scenario::{self, ScenarioFile};
use vep_core::simnet::{airtime_us, PeriodDistribution};
use vep_core::{Digest, InfoFlag, ItsMessage};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VepStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Domain = 4,
    Decode = 5,
    Ledger = 6,
    Io = 7,
    Panic = 8,
}

/// Which node's delay a consensus prediction refers to.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VepViewpoint {
    AllNodes = 0,
    Primary = 1,
}

/// Period distribution of a periodic message generator.
pub struct VepDistribution(PeriodDistribution);

/// A decoded frame.
pub struct VepFrame {
    decoded: Decoded,
    len: usize,
}

/// A station's copy of a localchain.
pub struct VepLocalchain(Localchain);

/// Flat summary of a decoded frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct VepFrameInfo {
    pub msg_type: u8,
    pub sender: u32,
    pub timestamp_ms: u64,
    pub seq: u64,
    pub frame_len: usize,
    pub base_len: usize,
    /// The magic was found after the base message.
    pub extension_present: bool,
    /// The extension region parsed cleanly.
    pub extension_valid: bool,
    pub sp_id: u16,
    pub event_id: u32,
    pub has_ledger: bool,
    pub has_consensus: bool,
    pub has_token: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

type FfiResult<T> = Result<T, (VepStatus, String)>;

fn fail<T>(status: VepStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err((status, msg.into()))
}

/// Runs `f`, records any error or panic, and turns it into a status.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> VepStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VepStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            VepStatus::Panic
        }
    }
}

unsafe fn cstr<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(VepStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (VepStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or((VepStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or((VepStatus::NullPointer, format!("{what} is null")))
}

unsafe fn bytes<'a>(p: *const u8, len: usize, what: &str) -> FfiResult<&'a [u8]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(VepStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

fn domain(e: analytics::DomainError) -> (VepStatus, String) {
    (VepStatus::Domain, e.to_string())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn vep_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn vep_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vep_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---- distributions ----

/// Parses a distribution from TOML or JSON text (a `support` list of
/// `period_ms`/`probability` points).
///
/// # Safety
/// `text` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vep_dist_parse(text: *const c_char, out_dist: *mut *mut VepDistribution) -> VepStatus {
    guard(|| {
        let text = cstr(text, "text")?;
        let slot = out(out_dist, "out_dist")?;
        let d = if text.trim_start().starts_with('{') {
            PeriodDistribution::from_json_str(text)
        } else {
            PeriodDistribution::from_toml_str(text)
        }
        .map_err(|e| (VepStatus::Parse, e.to_string()))?;
        *slot = Box::into_raw(Box::new(VepDistribution(d)));
        Ok(())
    })
}

/// Builds a distribution from parallel arrays of periods and probabilities.
///
/// # Safety
/// Both arrays must hold `len` elements; `out_dist` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_dist_from_points(
    periods_ms: *const u64,
    probabilities: *const f64,
    len: usize,
    out_dist: *mut *mut VepDistribution,
) -> VepStatus {
    guard(|| {
        let slot = out(out_dist, "out_dist")?;
        if len == 0 {
            return fail(VepStatus::InvalidArgument, "empty support");
        }
        if periods_ms.is_null() || probabilities.is_null() {
            return fail(VepStatus::NullPointer, "support arrays are null");
        }
        let t = std::slice::from_raw_parts(periods_ms, len);
        let p = std::slice::from_raw_parts(probabilities, len);
        let pairs: Vec<(u64, f64)> = t.iter().copied().zip(p.iter().copied()).collect();
        let d = PeriodDistribution::new(&pairs).map_err(|e| (VepStatus::Domain, e.to_string()))?;
        *slot = Box::into_raw(Box::new(VepDistribution(d)));
        Ok(())
    })
}

/// # Safety
/// `d` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vep_dist_free(d: *mut VepDistribution) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Mean period in milliseconds.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_dist_mean(d: *const VepDistribution, out_ms: *mut f64) -> VepStatus {
    guard(|| {
        *out(out_ms, "out_ms")? = handle(d, "dist")?.0.mean();
        Ok(())
    })
}

/// Mean wait until the next emission, seen from a random instant.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_waiting_mean(d: *const VepDistribution, out_ms: *mut f64) -> VepStatus {
    guard(|| {
        *out(out_ms, "out_ms")? = analytics::waiting_time(&handle(d, "dist")?.0).mean_ms;
        Ok(())
    })
}

/// P(wait <= `w_ms`).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_waiting_cdf(d: *const VepDistribution, w_ms: f64, out_p: *mut f64) -> VepStatus {
    guard(|| {
        *out(out_p, "out_p")? = analytics::waiting_time(&handle(d, "dist")?.0).cdf_at(w_ms);
        Ok(())
    })
}

/// Expected delay of a queued extension with `j` entries ahead of it.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_queued_delay(d: *const VepDistribution, j: usize, out_ms: *mut f64) -> VepStatus {
    guard(|| {
        *out(out_ms, "out_ms")? = analytics::queued_delay(&handle(d, "dist")?.0, j);
        Ok(())
    })
}

/// Mean of the `g`-th smallest of `m` independent waits.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_order_stat_mean(
    d: *const VepDistribution,
    m: usize,
    g: usize,
    out_ms: *mut f64,
) -> VepStatus {
    guard(|| {
        let w = analytics::waiting_time(&handle(d, "dist")?.0).binned();
        *out(out_ms, "out_ms")? = analytics::order_stat(&w, m, g).map_err(domain)?.mean;
        Ok(())
    })
}

/// Expected three-stage consensus delay for `n` members.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_pbft_delay(
    d: *const VepDistribution,
    n: usize,
    viewpoint: VepViewpoint,
    out_ms: *mut f64,
) -> VepStatus {
    guard(|| {
        let vp = match viewpoint {
            VepViewpoint::AllNodes => Viewpoint::AllNodes,
            VepViewpoint::Primary => Viewpoint::Primary,
        };
        *out(out_ms, "out_ms")? = analytics::pbft_delay(&handle(d, "dist")?.0, n, vp).map_err(domain)?;
        Ok(())
    })
}

/// Expected delay until all `participants` have sent a verification.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_verification_delay(
    d: *const VepDistribution,
    participants: usize,
    out_ms: *mut f64,
) -> VepStatus {
    guard(|| {
        *out(out_ms, "out_ms")? = analytics::verification_delay(&handle(d, "dist")?.0, participants).map_err(domain)?;
        Ok(())
    })
}

// ---- closed forms ----

/// Overhead of `extension_len` bytes on `packet_len`-byte packets when
/// `extended` of `total` packets carry one. Either output may be null.
///
/// # Safety
/// Non-null output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_overhead(
    extension_len: f64,
    packet_len: f64,
    extended: f64,
    total: f64,
    out_per_packet_pct: *mut f64,
    out_expected_pct: *mut f64,
) -> VepStatus {
    guard(|| {
        let o = analytics::overhead(extension_len, packet_len, extended, total).map_err(domain)?;
        if let Some(p) = out_per_packet_pct.as_mut() {
            *p = o.per_packet_pct;
        }
        if let Some(p) = out_expected_pct.as_mut() {
            *p = o.expected_pct;
        }
        Ok(())
    })
}

/// Time on air of a `len`-byte frame, in microseconds.
#[no_mangle]
pub extern "C" fn vep_airtime_us(len: usize, bitrate_bps: f64, phy_overhead_us: f64) -> f64 {
    airtime_us(len, bitrate_bps, phy_overhead_us)
}

/// Delay after `r` retransmission timeouts of `tau_d_ms` each.
#[no_mangle]
pub extern "C" fn vep_retrans_delay(tau_p_ms: f64, r: u32, tau_d_ms: f64) -> f64 {
    analytics::retrans_delay(tau_p_ms, r, tau_d_ms)
}

// ---- frames ----

/// Decodes a frame. A damaged extension does not fail the call; it shows
/// up as `extension_present && !extension_valid`.
///
/// # Safety
/// `data` must hold `len` bytes; `out_frame` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_frame_decode(data: *const u8, len: usize, out_frame: *mut *mut VepFrame) -> VepStatus {
    guard(|| {
        let b = bytes(data, len, "data")?;
        let slot = out(out_frame, "out_frame")?;
        let decoded = codec::decode(b).map_err(|e| (VepStatus::Decode, e.to_string()))?;
        *slot = Box::into_raw(Box::new(VepFrame { decoded, len }));
        Ok(())
    })
}

/// # Safety
/// `f` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vep_frame_free(f: *mut VepFrame) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_frame_info(f: *const VepFrame, out_info: *mut VepFrameInfo) -> VepStatus {
    guard(|| {
        let f = handle(f, "frame")?;
        let m = &f.decoded.message;
        let mut info = VepFrameInfo {
            msg_type: m.msg_type.code(),
            sender: m.sender.0,
            timestamp_ms: m.timestamp_ms,
            seq: m.seq,
            frame_len: f.len,
            base_len: f.decoded.base_len,
            extension_present: f.decoded.extension_present,
            extension_valid: m.extension.is_some(),
            ..Default::default()
        };
        if let Some(e) = &m.extension {
            info.sp_id = e.sp_id.0;
            info.event_id = e.event_id;
            info.has_ledger = e.ledger.is_some();
            info.has_consensus = e.consensus.is_some();
            info.has_token = e.token.is_some();
        }
        *out(out_info, "out_info")? = info;
        Ok(())
    })
}

/// JSON description of the frame; free with [`vep_string_free`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_frame_json(f: *const VepFrame, out_json: *mut *mut c_char) -> VepStatus {
    guard(|| {
        let f = handle(f, "frame")?;
        let slot = out(out_json, "out_json")?;
        *slot = to_c_string(codec::describe(&f.decoded, f.len).to_string());
        Ok(())
    })
}

// ---- localchain ----

/// # Safety
/// `out_chain` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_localchain_new(localchain_id: u32, out_chain: *mut *mut VepLocalchain) -> VepStatus {
    guard(|| {
        *out(out_chain, "out_chain")? = Box::into_raw(Box::new(VepLocalchain(Localchain::new(localchain_id))));
        Ok(())
    })
}

/// # Safety
/// `c` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vep_localchain_free(c: *mut VepLocalchain) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Stored blocks, genesis included.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_localchain_len(c: *const VepLocalchain, out_len: *mut usize) -> VepStatus {
    guard(|| {
        *out(out_len, "out_len")? = handle(c, "chain")?.0.len();
        Ok(())
    })
}

/// Blocks with no stored child.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vep_localchain_tip_count(c: *const VepLocalchain, out_count: *mut usize) -> VepStatus {
    guard(|| {
        *out(out_count, "out_count")? = handle(c, "chain")?.0.tips().len();
        Ok(())
    })
}

/// # Safety
/// `out_hash` must point to 32 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn vep_localchain_genesis_hash(c: *const VepLocalchain, out_hash: *mut u8) -> VepStatus {
    guard(|| {
        let h = handle(c, "chain")?.0.genesis_hash();
        if out_hash.is_null() {
            return fail(VepStatus::NullPointer, "out_hash is null");
        }
        ptr::copy_nonoverlapping(h.0.as_ptr(), out_hash, 32);
        Ok(())
    })
}

/// Forges a block from `count` encoded frames, in the given order, on top
/// of `prev_hash` (32 bytes), appends it, and writes its hash to
/// `out_hash`. `info_flag` is 0 (none), 1 (success) or 2 (failure).
/// Signatures are not checked.
///
/// # Safety
/// `frames` and `lens` must hold `count` entries, each frame `lens[i]`
/// bytes; `prev_hash` and `out_hash` must point to 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn vep_localchain_forge(
    c: *mut VepLocalchain,
    prev_hash: *const u8,
    frames: *const *const u8,
    lens: *const usize,
    count: usize,
    info_flag: u8,
    out_hash: *mut u8,
) -> VepStatus {
    guard(|| {
        let chain = c
            .as_mut()
            .ok_or((VepStatus::NullPointer, "chain is null".to_string()))?;
        let prev: [u8; 32] = bytes(prev_hash, 32, "prev_hash")?.try_into().expect("32 bytes");
        if out_hash.is_null() {
            return fail(VepStatus::NullPointer, "out_hash is null");
        }
        if count > 0 && (frames.is_null() || lens.is_null()) {
            return fail(VepStatus::NullPointer, "frame arrays are null");
        }
        let flag = match info_flag {
            0 => InfoFlag::None,
            1 => InfoFlag::Success,
            2 => InfoFlag::Failure,
            x => return fail(VepStatus::InvalidArgument, format!("unknown info flag {x}")),
        };
        let mut msgs: Vec<ItsMessage> = Vec::with_capacity(count);
        for i in 0..count {
            let b = bytes(*frames.add(i), *lens.add(i), "frame")?;
            let d = codec::decode(b).map_err(|e| (VepStatus::Decode, format!("frame {i}: {e}")))?;
            msgs.push(d.message);
        }
        let slots: Vec<Option<&ItsMessage>> = msgs.iter().map(Some).collect();
        let block = forge_block(chain.0.id(), Digest(prev), &slots, flag, |_| true)
            .map_err(|e| (VepStatus::Ledger, e.to_string()))?;
        let hash = block.hash;
        chain.0.append(block).map_err(|e| (VepStatus::Ledger, e.to_string()))?;
        ptr::copy_nonoverlapping(hash.0.as_ptr(), out_hash, 32);
        Ok(())
    })
}

// ---- scenarios ----

/// Runs a scenario file. When `out_dir` is non-null the usual output
/// files are written there. A JSON summary (metrics plus report) is
/// returned through `out_json`, which may be null.
///
/// # Safety
/// `path` must be a valid C string; `out_dir` null or a valid C string.
#[no_mangle]
pub unsafe extern "C" fn vep_run_scenario(
    path: *const c_char,
    out_dir: *const c_char,
    out_json: *mut *mut c_char,
) -> VepStatus {
    guard(|| {
        let path = cstr(path, "path")?;
        let file = ScenarioFile::load(Path::new(path)).map_err(|e| (VepStatus::Parse, e.to_string()))?;
        let res = scenario::run(&file).map_err(|e| (VepStatus::InvalidArgument, e.to_string()))?;
        if !out_dir.is_null() {
            let dir = cstr(out_dir, "out_dir")?;
            vep_core::output::write_run(&res, Path::new(dir)).map_err(|e| (VepStatus::Io, e.to_string()))?;
        }
        if let Some(slot) = out_json.as_mut() {
            let v = serde_json::json!({
                "scenario": res.scenario.name,
                "metrics": res.output.metrics,
                "trace_digest": res.output.trace_digest,
                "violations": res.output.violations,
                "report": res.report,
            });
            *slot = to_c_string(v.to_string());
        }
        Ok(())
    })
}
