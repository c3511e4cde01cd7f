//! JSON helpers with fixed float formatting.
//!
//! All file formats in this crate write floating-point numbers with 17
//! significant digits (`{:.16e}`), which round-trips every finite `f64`
//! bit-exactly through a standard correctly-rounded parser.

use std::io;

use serde::Serialize;

/// `serde_json` formatter that renders every `f64` with 17 significant digits.
struct SigFig17;

impl serde_json::ser::Formatter for SigFig17 {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{:.16e}", value)
    }
}

/// Serialize `value` to a JSON string with 17-significant-digit floats.
pub fn to_string_precise<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigFig17);
    value.serialize(&mut ser)?;
    // The formatter only ever writes valid UTF-8.
    Ok(String::from_utf8(out).expect("serializer produced invalid utf-8"))
}
