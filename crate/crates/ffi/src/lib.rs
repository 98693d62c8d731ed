//! C ABI over `ugac-core`.
//!
//! Every function returns a [`UgacStatus`] and writes results through out
//! pointers. On failure `ugac_last_error()` describes what went wrong on the
//! calling thread. Images are row-major `double` buffers of `width * height`
//! grayscale pixels in [0, 1]. Panics never cross the boundary; they surface
//! as `UGAC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ugac_core::data::{from_batch, to_batch, Image};
use ugac_core::nets::{Checkpoint, Generator};
use ugac_core::tensor::{no_grad, Tensor};
use ugac_core::{ggd, metrics, specfn, train, uncertainty, Error};

/// Result of every call. The nonzero core codes match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UgacStatus {
    Ok = 0,
    /// Bad argument value, configuration, or checkpoint metadata.
    InvalidArgument = 2,
    /// Unreadable or malformed file, or mismatched sizes.
    DataError = 3,
    /// Out-of-domain input or a non-finite result.
    NumericalError = 4,
    /// A required pointer was NULL.
    NullPointer = 5,
    /// Internal panic caught at the boundary.
    Panic = 6,
}

/// A trained A-to-B generator loaded from a checkpoint.
pub struct UgacGenerator {
    inner: Generator,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

fn status_of(e: &Error) -> UgacStatus {
    match e.exit_code() {
        2 => UgacStatus::InvalidArgument,
        3 => UgacStatus::DataError,
        _ => UgacStatus::NumericalError,
    }
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> UgacStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            UgacStatus::Ok
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("{what} is NULL"));
            UgacStatus::NullPointer
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| p.downcast_ref::<&str>().copied())
                .unwrap_or("unknown panic");
            set_last_error(&format!("internal panic: {msg}"));
            UgacStatus::Panic
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Core(Error::InvalidArgument(msg.into()))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &'static str) -> FfiResult<&'a [f64]> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn image(p: *const f64, width: usize, height: usize, what: &'static str) -> FfiResult<Image> {
    let n = width.checked_mul(height).filter(|&n| n > 0).ok_or_else(|| invalid("image size must be nonzero"))?;
    Ok(Image::new(width, height, input(p, n, what)?.to_vec())?)
}

fn store(out: *mut f64, t: &Tensor) {
    if !out.is_null() {
        let d = t.data();
        // SAFETY: the caller promised `width * height` writable doubles.
        unsafe { ptr::copy_nonoverlapping(d.as_ptr(), out, d.len()) };
    }
}

/// Message for the most recent failure on this thread, or an empty string.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ugac_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ugac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `ln Γ(x)` for `x > 0`.
///
/// # Safety
/// `out` must be NULL or point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn ugac_lgamma(x: f64, out: *mut f64) -> UgacStatus {
    guard(|| {
        *output(out, "out")? = specfn::lgamma(x)?;
        Ok(())
    })
}

/// `ψ(x)` for `x > 0`.
///
/// # Safety
/// `out` must be NULL or point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn ugac_digamma(x: f64, out: *mut f64) -> UgacStatus {
    guard(|| {
        *output(out, "out")? = specfn::digamma(x)?;
        Ok(())
    })
}

/// Log-density of the generalized Gaussian with location `mu`.
///
/// # Safety
/// `out` must be NULL or point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn ugac_ggd_logpdf(x: f64, mu: f64, alpha: f64, beta: f64, out: *mut f64) -> UgacStatus {
    guard(|| {
        *output(out, "out")? = ggd::ggd_logpdf(x, mu, alpha, beta)?;
        Ok(())
    })
}

/// Closed-form variance `α² Γ(3/β) / Γ(1/β)`.
///
/// # Safety
/// `out` must be NULL or point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn ugac_ggd_variance(alpha: f64, beta: f64, out: *mut f64) -> UgacStatus {
    guard(|| {
        *output(out, "out")? = ggd::ggd_variance(alpha, beta)?;
        Ok(())
    })
}

/// Mean adaptive cycle loss over `n` pixels. When `grad_recon`,
/// `grad_alpha`, or `grad_beta` is non-NULL it receives `n` partials.
///
/// # Safety
/// The four inputs must hold `n` doubles; non-NULL gradients must have room for `n`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ugac_l_alpha_beta(
    recon: *const f64,
    alpha: *const f64,
    beta: *const f64,
    target: *const f64,
    n: usize,
    out: *mut f64,
    grad_recon: *mut f64,
    grad_alpha: *mut f64,
    grad_beta: *mut f64,
) -> UgacStatus {
    guard(|| {
        if n == 0 {
            return Err(invalid("n must be positive"));
        }
        let t = |p, what| -> FfiResult<Tensor> { Ok(Tensor::new(input(p, n, what)?.to_vec(), &[n])?) };
        let out = output(out, "out")?;
        let (r, a, b) = (t(recon, "recon")?.requiring_grad(), t(alpha, "alpha")?.requiring_grad(), t(beta, "beta")?.requiring_grad());
        let loss = ggd::l_alpha_beta(&r, &a, &b, &t(target, "target")?)?;
        let want_grad = !(grad_recon.is_null() && grad_alpha.is_null() && grad_beta.is_null());
        if want_grad {
            loss.backward()?;
            for (leaf, dst) in [(&r, grad_recon), (&a, grad_alpha), (&b, grad_beta)] {
                if !dst.is_null() {
                    let g = leaf.grad().unwrap_or_else(|| vec![0.0; n]);
                    ptr::copy_nonoverlapping(g.as_ptr(), dst, n);
                }
            }
        }
        *out = loss.item();
        Ok(())
    })
}

/// PSNR in dB with peak value `max_i`; identical images give +infinity.
///
/// # Safety
/// `x` and `y` must hold `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn ugac_psnr(x: *const f64, y: *const f64, width: usize, height: usize, max_i: f64, out: *mut f64) -> UgacStatus {
    guard(|| {
        *output(out, "out")? = metrics::psnr(&image(x, width, height, "x")?, &image(y, width, height, "y")?, max_i)?;
        Ok(())
    })
}

/// Mean SSIM (11x11 Gaussian window, σ = 1.5, dynamic range 1).
///
/// # Safety
/// `x` and `y` must hold `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn ugac_ssim(x: *const f64, y: *const f64, width: usize, height: usize, out: *mut f64) -> UgacStatus {
    guard(|| {
        *output(out, "out")? = metrics::ssim(&image(x, width, height, "x")?, &image(y, width, height, "y")?)?;
        Ok(())
    })
}

/// Loads the A-to-B generator of a training checkpoint. Release it with
/// `ugac_generator_free`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn ugac_generator_load(path: *const c_char, out: *mut *mut UgacGenerator) -> UgacStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let out = output(out, "out")?;
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let ck = Checkpoint::read(Path::new(path))?;
        let g = train::load_generator(&ck, "g_a")?;
        *out = Box::into_raw(Box::new(UgacGenerator { inner: g }));
        Ok(())
    })
}

/// Image sides must be multiples of this value.
///
/// # Safety
/// `g` must come from `ugac_generator_load`.
#[no_mangle]
pub unsafe extern "C" fn ugac_generator_size_multiple(g: *const UgacGenerator, out: *mut usize) -> UgacStatus {
    guard(|| {
        let g = g.as_ref().ok_or(Failure::Null("generator"))?;
        *output(out, "out")? = 1usize << g.inner.config().depth;
        Ok(())
    })
}

fn batch(g: &Generator, px: Image) -> FfiResult<Tensor> {
    let m = 1usize << g.config().depth;
    if !px.width.is_multiple_of(m) || !px.height.is_multiple_of(m) {
        return Err(Failure::Core(Error::Data(format!(
            "{}x{} image: sides must be multiples of {m}",
            px.width, px.height
        ))));
    }
    Ok(to_batch(&[&px])?)
}

/// Deterministic translation (dropout off) of one image into `output`.
///
/// # Safety
/// `g` must come from `ugac_generator_load`; `input` and `output` must hold
/// `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn ugac_generator_translate(
    g: *const UgacGenerator,
    input: *const f64,
    width: usize,
    height: usize,
    output_image: *mut f64,
) -> UgacStatus {
    guard(|| {
        let g = &g.as_ref().ok_or(Failure::Null("generator"))?.inner;
        if output_image.is_null() {
            return Err(Failure::Null("output"));
        }
        let x = batch(g, image(input, width, height, "input")?)?;
        let y = no_grad(|| g.forward(&x, false, &mut ChaCha8Rng::seed_from_u64(0)))?;
        let img = from_batch(&y.image)?.remove(0);
        ptr::copy_nonoverlapping(img.pixels.as_ptr(), output_image, img.pixels.len());
        Ok(())
    })
}

/// Per-pixel maps from `ugac_generator_uncertainty`. Each non-NULL pointer
/// must have room for `width * height` doubles; NULL fields are skipped.
#[repr(C)]
pub struct UgacUncertaintyMaps {
    pub mean_prediction: *mut f64,
    pub alpha: *mut f64,
    pub beta: *mut f64,
    pub sigma_aleatoric: *mut f64,
    pub sigma_epistemic: *mut f64,
    pub sigma_total: *mut f64,
}

/// Monte Carlo dropout with `passes >= 2` stochastic forward passes seeded
/// by `seed`.
///
/// # Safety
/// `g` must come from `ugac_generator_load`; `input` must hold
/// `width * height` doubles; see `UgacUncertaintyMaps` for the outputs.
#[no_mangle]
pub unsafe extern "C" fn ugac_generator_uncertainty(
    g: *const UgacGenerator,
    input: *const f64,
    width: usize,
    height: usize,
    passes: usize,
    seed: u64,
    maps: *const UgacUncertaintyMaps,
) -> UgacStatus {
    guard(|| {
        let g = &g.as_ref().ok_or(Failure::Null("generator"))?.inner;
        let maps = maps.as_ref().ok_or(Failure::Null("maps"))?;
        if passes < 2 {
            return Err(invalid(format!("passes = {passes}: need at least 2")));
        }
        let x = batch(g, image(input, width, height, "input")?)?;
        let u = uncertainty::total_uncertainty(g, &x, passes, &mut ChaCha8Rng::seed_from_u64(seed))?;
        store(maps.mean_prediction, &u.mean_prediction);
        store(maps.alpha, &u.mean_alpha);
        store(maps.beta, &u.mean_beta);
        store(maps.sigma_aleatoric, &u.sigma_aleatoric);
        store(maps.sigma_epistemic, &u.sigma_epistemic);
        store(maps.sigma_total, &u.sigma_total);
        Ok(())
    })
}

/// Releases a generator. NULL is a no-op.
///
/// # Safety
/// `g` must come from `ugac_generator_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ugac_generator_free(g: *mut UgacGenerator) {
    if !g.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(g))));
    }
}
