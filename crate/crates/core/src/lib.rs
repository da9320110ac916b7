//! Sampling densities adapted to prior support information for
//! compressed sensing with structured (Fourier, Walsh-Hadamard) measurements
//! and wavelet sparsity, with a reconstruction and experiment harness.

pub mod density;
pub mod harness;
pub mod io;
pub mod mask;
pub mod partition;
pub mod recon;
pub mod seed;
pub mod support;
pub mod transforms;

pub use num_complex::Complex64;

/// Serde through `Display` / `FromStr`.
pub(crate) mod serde_str {
    use serde::{de, Deserialize, Deserializer, Serializer};
    use std::fmt::Display;
    use std::str::FromStr;

    pub fn serialize<T: Display, S: Serializer>(value: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(value)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}
