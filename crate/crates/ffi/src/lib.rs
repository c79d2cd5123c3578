//! C ABI over `qmc-core`.
//!
//! Conventions:
//! - Every fallible function returns a [`QmcStatus`]; results come back
//!   through out-pointers, which are written only on success.
//! - On failure [`qmc_last_error`] describes the error. The string belongs
//!   to the calling thread and stays valid until its next qmc call.
//! - Handles ([`QmcBuffer`], [`QmcContainer`]) are opaque and must be
//!   released with their `_free` function. A container handle must not be
//!   used from two threads at once; distinct handles are independent.
//! - Panics never cross the boundary; they surface as `QMC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use qmc_core::codecs::{self, Codec};
use qmc_core::container::{self, ContainerReader};
use qmc_core::entropy::{entropy_bits, Histogram};
use qmc_core::quant::{Affine, QuantMode, QuantScheme};
use qmc_core::tensorio::Tensor;
use qmc_core::Error;

/// Result codes. Values 2..=8 mirror the core error kinds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QmcStatus {
    Ok = 0,
    InvalidArgument = 1,
    Format = 2,
    Integrity = 3,
    Io = 4,
    Unsupported = 5,
    Validation = 6,
    Shape = 7,
    Capability = 8,
    Panic = 99,
}

impl From<&Error> for QmcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => QmcStatus::Io,
            Error::Format(_) => QmcStatus::Format,
            Error::Integrity(_) => QmcStatus::Integrity,
            Error::Validation(_) => QmcStatus::Validation,
            Error::Unsupported(_) => QmcStatus::Unsupported,
            Error::Shape(_) => QmcStatus::Shape,
            Error::Capability(_) => QmcStatus::Capability,
        }
    }
}

/// Integer range of a quantizer.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QmcMode {
    Symmetric = 0,
    Asymmetric = 1,
}

impl From<QmcMode> for QuantMode {
    fn from(m: QmcMode) -> Self {
        match m {
            QmcMode::Symmetric => QuantMode::Symmetric,
            QmcMode::Asymmetric => QuantMode::Asymmetric,
        }
    }
}

/// Owned byte buffer returned by the library.
pub struct QmcBuffer {
    data: Vec<u8>,
}

/// Open container with random access to its tensors.
pub struct QmcContainer {
    reader: ContainerReader<std::fs::File>,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(QmcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(QmcStatus::from(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(QmcStatus::InvalidArgument, msg.into())
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QmcStatus {
    set_last_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QmcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            QmcStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn bytes<'a>(p: *const u8, len: usize) -> Result<&'a [u8], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid("null data pointer with nonzero length"));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

fn out<T>(p: *mut T, what: &str) -> Result<*mut T, Fail> {
    if p.is_null() {
        Err(invalid(format!("{what} out-pointer is null")))
    } else {
        Ok(p)
    }
}

fn give_buffer(dst: *mut *mut QmcBuffer, data: Vec<u8>) {
    // SAFETY: callers check `dst` with `out` first.
    unsafe { *dst = Box::into_raw(Box::new(QmcBuffer { data })) };
}

/// Message for the most recent failure on this thread; empty after success.
#[no_mangle]
pub extern "C" fn qmc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qmc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Pointer to the buffer contents; `*len` receives the size.
///
/// # Safety
/// `buf` must be a live buffer from this library; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn qmc_buffer_data(buf: *const QmcBuffer, len: *mut usize) -> *const u8 {
    if buf.is_null() {
        if !len.is_null() {
            *len = 0;
        }
        return ptr::null();
    }
    let b = &*buf;
    if !len.is_null() {
        *len = b.data.len();
    }
    b.data.as_ptr()
}

/// # Safety
/// `buf` must be null or a buffer from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qmc_buffer_free(buf: *mut QmcBuffer) {
    if !buf.is_null() {
        drop(Box::from_raw(buf));
    }
}

/// Compress `len` bytes into a blob. `codec` is `store`, `huffman`,
/// `tans[:table_log]` or `zstd[:level]`.
///
/// # Safety
/// `data` valid for `len` reads, `codec` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qmc_compress(
    data: *const u8,
    len: usize,
    codec: *const c_char,
    out_blob: *mut *mut QmcBuffer,
) -> QmcStatus {
    guard(|| {
        let dst = out(out_blob, "blob")?;
        let codec: Codec = string(codec, "codec")?.parse()?;
        let blob = codecs::compress(codec, bytes(data, len)?)?;
        give_buffer(dst, blob.to_bytes());
        Ok(())
    })
}

/// Decode and verify a blob produced by [`qmc_compress`].
///
/// # Safety
/// `blob` valid for `len` reads, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qmc_decompress(
    blob: *const u8,
    len: usize,
    out_data: *mut *mut QmcBuffer,
) -> QmcStatus {
    guard(|| {
        let dst = out(out_data, "data")?;
        let data = codecs::decompress(bytes(blob, len)?)?;
        give_buffer(dst, data);
        Ok(())
    })
}

/// Order-0 Shannon entropy in bits per byte.
///
/// # Safety
/// `data` valid for `len` reads, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qmc_entropy_bits(data: *const u8, len: usize, out_bits: *mut f64) -> QmcStatus {
    guard(|| {
        let dst = out(out_bits, "bits")?;
        let h = Histogram::from_bytes(bytes(data, len)?)?;
        *dst = entropy_bits(&h);
        Ok(())
    })
}

/// Tensor-wise int8 quantization of `n` floats into `out_q` (room for `n`),
/// returning the scale and zero point.
///
/// # Safety
/// `data` valid for `n` reads, `out_q` for `n` writes, scalars writable.
#[no_mangle]
pub unsafe extern "C" fn qmc_quantize_tensor_wise(
    data: *const f32,
    n: usize,
    mode: QmcMode,
    out_q: *mut i8,
    out_scale: *mut f32,
    out_zero_point: *mut i8,
) -> QmcStatus {
    guard(|| {
        if data.is_null() || n == 0 {
            return Err(invalid("need a non-null, non-empty input"));
        }
        let (q_dst, s_dst, z_dst) = (out(out_q, "q")?, out(out_scale, "scale")?, out(out_zero_point, "zero point")?);
        let t = Tensor::from_f32("ffi", vec![n], slice::from_raw_parts(data, n).to_vec())?;
        let q = qmc_core::quant::quantize_tensor_wise(&t, mode.into())?;
        let Affine { scale, zero_point } = match q.scheme {
            QuantScheme::TensorWise(a) => a,
            _ => unreachable!("tensor-wise quantizer yields a tensor-wise scheme"),
        };
        ptr::copy_nonoverlapping(q.data.as_ptr(), q_dst, n);
        *s_dst = scale;
        *z_dst = zero_point;
        Ok(())
    })
}

/// Open a container; reads only its header and manifest.
///
/// # Safety
/// `path` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qmc_container_open(path: *const c_char, out_handle: *mut *mut QmcContainer) -> QmcStatus {
    guard(|| {
        let dst = out(out_handle, "container")?;
        let reader = ContainerReader::open(string(path, "path")?)?;
        let names = reader
            .manifest()
            .tensors
            .iter()
            .map(|e| CString::new(e.name.as_str()).map_err(|_| invalid("tensor name contains NUL")))
            .collect::<Result<_, _>>()?;
        *dst = Box::into_raw(Box::new(QmcContainer { reader, names }));
        Ok(())
    })
}

/// Number of tensors; 0 for a null handle.
///
/// # Safety
/// `c` must be null or a live container handle.
#[no_mangle]
pub unsafe extern "C" fn qmc_container_tensor_count(c: *const QmcContainer) -> usize {
    c.as_ref().map_or(0, |c| c.names.len())
}

/// Name of tensor `index`, owned by the handle; null if out of range.
///
/// # Safety
/// `c` must be null or a live container handle.
#[no_mangle]
pub unsafe extern "C" fn qmc_container_tensor_name(c: *const QmcContainer, index: usize) -> *const c_char {
    c.as_ref()
        .and_then(|c| c.names.get(index))
        .map_or(ptr::null(), |n| n.as_ptr())
}

/// Read, verify and decode one tensor's int8 payload (as bytes).
///
/// # Safety
/// `c` a live handle, `name` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qmc_container_read_tensor(
    c: *mut QmcContainer,
    name: *const c_char,
    out_payload: *mut *mut QmcBuffer,
) -> QmcStatus {
    guard(|| {
        let dst = out(out_payload, "payload")?;
        let c = c.as_mut().ok_or_else(|| invalid("container handle is null"))?;
        let q = c.reader.read_tensor(string(name, "name")?)?;
        give_buffer(dst, q.bytes());
        Ok(())
    })
}

/// # Safety
/// `c` must be null or a handle from [`qmc_container_open`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qmc_container_free(c: *mut QmcContainer) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Verify a container file. Returns `QMC_STATUS_OK` when the file could be
/// examined; `*out_failures` receives the number of failing checks.
///
/// # Safety
/// `path` NUL-terminated, `out_failures` writable.
#[no_mangle]
pub unsafe extern "C" fn qmc_verify(path: *const c_char, out_failures: *mut usize) -> QmcStatus {
    guard(|| {
        let dst = out(out_failures, "failures")?;
        let report = container::verify(string(path, "path")?)?;
        if let Some(f) = report.failures.first() {
            set_last_error(&format!("{}: {}", f.subject, f.reason));
        }
        *dst = report.failures.len();
        Ok(())
    })
}
