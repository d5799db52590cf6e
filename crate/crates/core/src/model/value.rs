use std::fmt::Write as _;

/// A leaf field value. Arrays are homogeneous and never nested.
///
/// Equality is bit-exact: floats compare by their raw bit pattern, so
/// `NaN == NaN` (same payload) and `0.0 != -0.0`.
#[derive(Clone, Debug)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    Bytes(Vec<u8>),
    IntArray(Vec<i64>),
    FloatArray(Vec<f64>),
    StrArray(Vec<String>),
    BytesArray(Vec<Vec<u8>>),
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        use Value::*;
        match (self, other) {
            (Int(a), Int(b)) => a == b,
            (Float(a), Float(b)) => a.to_bits() == b.to_bits(),
            (Str(a), Str(b)) => a == b,
            (Bytes(a), Bytes(b)) => a == b,
            (IntArray(a), IntArray(b)) => a == b,
            (FloatArray(a), FloatArray(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (StrArray(a), StrArray(b)) => a == b,
            (BytesArray(a), BytesArray(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Value {
    /// Appends the `<t>:<value>` or `<t>[...]` form.
    pub(crate) fn encode_into(&self, out: &mut String) {
        match self {
            Value::Int(v) => {
                let _ = write!(out, "i:{v}");
            }
            Value::Float(v) => {
                out.push_str("f:");
                out.push_str(&format_hex_float(*v));
            }
            Value::Str(v) => {
                out.push_str("s:");
                encode_str(v, out);
            }
            Value::Bytes(v) => {
                out.push_str("x:");
                encode_hex(v, out);
            }
            Value::IntArray(vs) => encode_array(out, 'i', vs, |v, o| {
                let _ = write!(o, "{v}");
            }),
            Value::FloatArray(vs) => encode_array(out, 'f', vs, |v, o| o.push_str(&format_hex_float(*v))),
            Value::StrArray(vs) => encode_array(out, 's', vs, |v, o| encode_str(v, o)),
            Value::BytesArray(vs) => encode_array(out, 'x', vs, |v, o| {
                o.push_str("x:");
                encode_hex(v, o);
            }),
        }
    }

    pub fn encode(&self) -> String {
        let mut s = String::new();
        self.encode_into(&mut s);
        s
    }

    /// Parses the exact form produced by [`Value::encode`]. Non-canonical
    /// spellings (`i:+1`, `\x41`, untrimmed hex floats) are rejected.
    pub fn decode(text: &str) -> Result<Value, String> {
        let value = Parser {
            s: text.as_bytes(),
            pos: 0,
        }
        .value()?;
        if value.encode() != text {
            return Err(format!("non-canonical value {text:?}"));
        }
        Ok(value)
    }
}

fn encode_array<T>(out: &mut String, tag: char, items: &[T], mut each: impl FnMut(&T, &mut String)) {
    out.push(tag);
    out.push('[');
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        each(item, out);
    }
    out.push(']');
}

fn encode_str(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\x{:02x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

fn encode_hex(bytes: &[u8], out: &mut String) {
    for b in bytes {
        let _ = write!(out, "{b:02x}");
    }
}

/// Shortest lowercase hex-float: `0x1.c2p+10`, `0x1p+0`, `-0x0p+0`,
/// subnormals as `0x0.<digits>p-1022`, `inf`/`-inf`, and NaN as `nan:` plus
/// the 16 hex digits of the raw bit pattern.
pub fn format_hex_float(v: f64) -> String {
    let bits = v.to_bits();
    let negative = bits >> 63 == 1;
    let biased = ((bits >> 52) & 0x7ff) as i32;
    let mantissa = bits & ((1u64 << 52) - 1);
    if biased == 0x7ff {
        return if mantissa != 0 {
            format!("nan:{bits:016x}")
        } else if negative {
            "-inf".to_string()
        } else {
            "inf".to_string()
        };
    }
    let sign = if negative { "-" } else { "" };
    if biased == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if biased == 0 { (0, -1022) } else { (1, biased - 1023) };
    let digits = format!("{mantissa:013x}");
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{exp:+}")
    }
}

/// Inverse of [`format_hex_float`] on its image.
pub fn parse_hex_float(text: &str) -> Result<f64, String> {
    let bad = || format!("bad float {text:?}");
    match text {
        "inf" => return Ok(f64::INFINITY),
        "-inf" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    if let Some(hex) = text.strip_prefix("nan:") {
        if hex.len() != 16 || !hex.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(bad());
        }
        let bits = u64::from_str_radix(hex, 16).map_err(|_| bad())?;
        let v = f64::from_bits(bits);
        return if v.is_nan() { Ok(v) } else { Err(bad()) };
    }
    let (negative, rest) = match text.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, text),
    };
    let rest = rest.strip_prefix("0x").ok_or_else(bad)?;
    let (mant, exp) = rest.split_once('p').ok_or_else(bad)?;
    let (lead, frac) = match mant.split_once('.') {
        Some((l, f)) => (l, f),
        None => (mant, ""),
    };
    if frac.len() > 13 || !frac.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return Err(bad());
    }
    if !(exp.starts_with('+') || exp.starts_with('-')) {
        return Err(bad());
    }
    let exp: i32 = exp.parse().map_err(|_| bad())?;
    let mut mantissa = 0u64;
    if !frac.is_empty() {
        mantissa = u64::from_str_radix(frac, 16).map_err(|_| bad())? << (4 * (13 - frac.len()));
    }
    let biased: u64 = match lead {
        "1" if (-1022..=1023).contains(&exp) => (exp + 1023) as u64,
        "0" if mantissa == 0 && exp == 0 => 0,
        "0" if mantissa != 0 && exp == -1022 => 0,
        _ => return Err(bad()),
    };
    let bits = ((negative as u64) << 63) | (biased << 52) | mantissa;
    Ok(f64::from_bits(bits))
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn value(mut self) -> Result<Value, String> {
        let tag = *self.s.first().ok_or("empty value")?;
        let array = match self.s.get(1) {
            Some(b':') => false,
            Some(b'[') => true,
            _ => return Err("missing type tag separator".into()),
        };
        self.pos = 2;
        let value = if array {
            let value = match tag {
                b'i' => Value::IntArray(self.list(|p| p.int())?),
                b'f' => Value::FloatArray(self.list(|p| p.float())?),
                b's' => Value::StrArray(self.list(|p| p.string())?),
                b'x' => Value::BytesArray(self.list(|p| {
                    p.expect(b"x:")?;
                    p.bytes()
                })?),
                other => return Err(format!("unknown type tag {:?}", other as char)),
            };
            self.expect(b"]")?;
            value
        } else {
            match tag {
                b'i' => Value::Int(self.int()?),
                b'f' => Value::Float(self.float()?),
                b's' => Value::Str(self.string()?),
                b'x' => Value::Bytes(self.bytes()?),
                other => return Err(format!("unknown type tag {:?}", other as char)),
            }
        };
        if self.pos != self.s.len() {
            return Err("trailing characters after value".into());
        }
        Ok(value)
    }

    fn expect(&mut self, lit: &[u8]) -> Result<(), String> {
        if self.s[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(format!("expected {:?}", String::from_utf8_lossy(lit)))
        }
    }

    fn list<T>(&mut self, mut item: impl FnMut(&mut Self) -> Result<T, String>) -> Result<Vec<T>, String> {
        let mut out = Vec::new();
        if self.s.get(self.pos) == Some(&b']') {
            return Ok(out);
        }
        loop {
            out.push(item(self)?);
            match self.s.get(self.pos) {
                Some(b',') => self.pos += 1,
                Some(b']') => return Ok(out),
                _ => return Err("unterminated array".into()),
            }
        }
    }

    /// Scalar token up to the next `,` or `]` (or end).
    fn token(&mut self) -> &str {
        let start = self.pos;
        while self.pos < self.s.len() && !matches!(self.s[self.pos], b',' | b']') {
            self.pos += 1;
        }
        std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("")
    }

    fn int(&mut self) -> Result<i64, String> {
        let t = self.token();
        t.parse().map_err(|_| format!("bad int {t:?}"))
    }

    fn float(&mut self) -> Result<f64, String> {
        let t = self.token();
        parse_hex_float(t)
    }

    fn bytes(&mut self) -> Result<Vec<u8>, String> {
        let t = self.token();
        if !t.len().is_multiple_of(2) {
            return Err(format!("odd-length hex {t:?}"));
        }
        (0..t.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&t[i..i + 2], 16).map_err(|_| format!("bad hex {t:?}")))
            .collect()
    }

    fn string(&mut self) -> Result<String, String> {
        self.expect(b"\"")?;
        let mut out = Vec::new();
        loop {
            let b = *self.s.get(self.pos).ok_or("unterminated string")?;
            self.pos += 1;
            match b {
                b'"' => break,
                b'\\' => {
                    let e = *self.s.get(self.pos).ok_or("dangling escape")?;
                    self.pos += 1;
                    match e {
                        b'"' | b'\\' => out.push(e),
                        b'x' => {
                            let hex = self.s.get(self.pos..self.pos + 2).ok_or("short \\x escape")?;
                            let hex = std::str::from_utf8(hex).map_err(|_| "bad \\x escape")?;
                            out.push(u8::from_str_radix(hex, 16).map_err(|_| "bad \\x escape")?);
                            self.pos += 2;
                        }
                        _ => return Err("unknown escape".into()),
                    }
                }
                b => out.push(b),
            }
        }
        String::from_utf8(out).map_err(|_| "string is not UTF-8".into())
    }
}
