//! Neural components: spectrum translation GAN, identification backbone and
//! verification heads, on libtorch via `tch`.

pub mod archive;
pub mod convert;
pub mod error;
pub mod identifier;
pub mod translator;
pub mod verifier;

pub use error::{NetError, Result};

/// Environment variable that forces single-threaded, repeatable math.
pub const DETERMINISTIC_ENV: &str = "OCULAR_DETERMINISTIC";

/// Applies the deterministic-math setting from [`DETERMINISTIC_ENV`]; returns
/// whether it is on. Any value other than empty or `0` enables it.
pub fn apply_determinism() -> bool {
    let on = std::env::var(DETERMINISTIC_ENV).map(|v| !v.is_empty() && v != "0").unwrap_or(false);
    if on {
        tch::set_num_threads(1);
        tch::set_num_interop_threads(1);
    }
    on
}
