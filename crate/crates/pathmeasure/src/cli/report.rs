//! Deterministic report rendering: identical input and flags must produce
//! byte-identical output across runs and platforms.

use std::collections::BTreeMap;

use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::entropy::EntropyValue;
use crate::extnn::ExtNonNeg;

/// Report schema version; bumped on any change to the output layout.
pub const REPORT_VERSION: &str = "1";

/// A float rendered as a JSON number via shortest-roundtrip formatting
/// (deterministic in the bit pattern and exact on reparse). Infinities
/// become the strings `"inf"` / `"-inf"` since JSON has no literal for
/// them, and the default serialization would silently turn them into
/// `null`.
#[derive(Clone, Copy, Debug)]
pub struct Num(pub f64);

impl From<f64> for Num {
    fn from(v: f64) -> Num {
        Num(v)
    }
}

impl From<ExtNonNeg> for Num {
    fn from(v: ExtNonNeg) -> Num {
        Num(v.value())
    }
}

impl From<EntropyValue> for Num {
    fn from(v: EntropyValue) -> Num {
        Num(v.value())
    }
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0.is_nan() {
            return Err(serde::ser::Error::custom("cannot serialize NaN"));
        }
        if self.0 == f64::INFINITY {
            return serializer.serialize_str("inf");
        }
        if self.0 == f64::NEG_INFINITY {
            return serializer.serialize_str("-inf");
        }
        serializer.serialize_f64(self.0)
    }
}

/// Envelope common to every subcommand.
#[derive(Serialize)]
pub struct Report<R: Serialize> {
    pub spec_version: &'static str,
    pub command: &'static str,
    /// SHA-256 of the input file bytes (or of `check:<seed>` for the
    /// self-check, which reads no file).
    pub input_digest: String,
    /// Resolved option values, including defaults.
    pub options: BTreeMap<String, String>,
    pub results: R,
}

impl<R: Serialize> Report<R> {
    pub fn new(
        command: &'static str,
        input_digest: String,
        options: BTreeMap<String, String>,
        results: R,
    ) -> Report<R> {
        Report {
            spec_version: REPORT_VERSION,
            command,
            input_digest,
            options,
            results,
        }
    }

    pub fn render(&self) -> String {
        let mut out =
            serde_json::to_string_pretty(self).expect("report structures always serialize");
        out.push('\n');
        out
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        write!(hex, "{byte:02x}").expect("writing to a string");
    }
    hex
}
