//! CDL-like text rendering of a classic file, for inspection and golden
//! tests. Output is deterministic: doubles print with 17 significant
//! digits, floats with 9.

use std::fmt::Write as _;
use std::path::Path;

use crate::codec::{get_scalar, AttrValues, Scalar};
use crate::error::{Error, Result};
use crate::format::{decode_header_prefix, Attribute, ExternalType, Schema, Variable};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DumpOptions {
    /// Print only the header.
    pub header_only: bool,
    /// Print data of this variable only.
    pub var: Option<String>,
}

/// Formats like C's `%.{precision}g`.
pub fn format_g(value: f64, precision: usize) -> String {
    if value.is_nan() {
        return "NaN".into();
    }
    if value.is_infinite() {
        return if value > 0.0 { "Infinity".into() } else { "-Infinity".into() };
    }
    let precision = precision.max(1);
    if value == 0.0 {
        return if value.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", precision - 1, value);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= precision as i32 {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (precision as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{value:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn format_scalar(etype: ExternalType, value: Scalar) -> String {
    match (etype, value) {
        (ExternalType::Float, Scalar::Float(v)) => format_g(v, 9),
        (_, Scalar::Float(v)) => format_g(v, 17),
        (_, Scalar::Int(v)) => v.to_string(),
        (_, Scalar::Text(c)) => format!("\"{}\"", escape(&[c])),
    }
}

fn escape(bytes: &[u8]) -> String {
    let mut out = String::new();
    for &b in bytes {
        match b {
            b'"' => out.push_str("\\\""),
            b'\\' => out.push_str("\\\\"),
            b'\n' => out.push_str("\\n"),
            b'\t' => out.push_str("\\t"),
            0 => out.push_str("\\0"),
            0x20..=0x7e => out.push(b as char),
            _ => {
                let _ = write!(out, "\\{b:03o}");
            }
        }
    }
    out
}

fn attr_values(values: &AttrValues) -> String {
    let suffix = match values.etype() {
        ExternalType::Byte => "b",
        ExternalType::Short => "s",
        ExternalType::Float => "f",
        _ => "",
    };
    match values {
        AttrValues::Char(c) => format!("\"{}\"", escape(c)),
        _ => {
            let etype = values.etype();
            let bytes = values.encode();
            bytes
                .chunks_exact(etype.element_size())
                .map(|c| format!("{}{suffix}", format_scalar(etype, get_scalar(etype, c))))
                .collect::<Vec<_>>()
                .join(", ")
        }
    }
}

fn write_attrs(out: &mut String, owner: &str, attrs: &[Attribute]) {
    for a in attrs {
        let _ = writeln!(out, "\t\t{owner}:{} = {} ;", a.name, attr_values(&a.values));
    }
}

fn write_header(out: &mut String, name: &str, s: &Schema) {
    let _ = writeln!(out, "netcdf {name} {{");
    if !s.dimensions.is_empty() {
        out.push_str("dimensions:\n");
        for d in &s.dimensions {
            if d.unlimited {
                let _ = writeln!(out, "\t{} = UNLIMITED ; // ({} currently)", d.name, s.numrecs);
            } else {
                let _ = writeln!(out, "\t{} = {} ;", d.name, d.length);
            }
        }
    }
    if !s.variables.is_empty() {
        out.push_str("variables:\n");
        for v in &s.variables {
            let _ = write!(out, "\t{} {}", v.etype.cdl_name(), v.name);
            if !v.dim_ids.is_empty() {
                let dims: Vec<&str> = v.dim_ids.iter().map(|&d| s.dimensions[d].name.as_str()).collect();
                let _ = write!(out, "({})", dims.join(", "));
            }
            out.push_str(" ;\n");
            write_attrs(out, &v.name, &v.attributes);
        }
    }
    if !s.global_attributes.is_empty() {
        out.push_str("\n// global attributes:\n");
        write_attrs(out, "", &s.global_attributes);
    }
}

/// Byte offset of element `index` (row-major over the current shape).
fn element_offset(s: &Schema, v: &Variable, shape: &[u64], index: u64) -> u64 {
    let esize = v.etype.element_size() as u64;
    let record = s.is_record_var(v);
    let inner: u64 = shape.iter().skip(usize::from(record)).product();
    if record {
        let (r, k) = (index / inner.max(1), index % inner.max(1));
        v.begin + r * s.recsize + k * esize
    } else {
        v.begin + index * esize
    }
}

fn write_data(out: &mut String, bytes: &[u8], s: &Schema, v: &Variable) -> Result<()> {
    let shape = s.var_shape(v);
    let total: u64 = shape.iter().product();
    let esize = v.etype.element_size();
    let row = shape.last().copied().unwrap_or(1).max(1);
    let mut rows: Vec<String> = Vec::new();
    let mut current: Vec<u8> = Vec::new();
    let mut items: Vec<String> = Vec::new();
    for i in 0..total {
        let at = element_offset(s, v, &shape, i);
        let end = at + esize as u64;
        if end > bytes.len() as u64 {
            return Err(Error::Io {
                kind: "UnexpectedEof".into(),
                message: format!("data of {} truncated at byte offset {}", v.name, bytes.len()),
            });
        }
        let raw = &bytes[at as usize..end as usize];
        if v.etype == ExternalType::Char {
            current.push(raw[0]);
        } else {
            items.push(format_scalar(v.etype, get_scalar(v.etype, raw)));
        }
        if (i + 1) % row == 0 {
            if v.etype == ExternalType::Char {
                rows.push(format!("\"{}\"", escape(&std::mem::take(&mut current))));
            } else {
                rows.push(std::mem::take(&mut items).join(", "));
            }
        }
    }
    if rows.is_empty() {
        let _ = writeln!(out, "\n {} = _ ;", v.name);
    } else if shape.len() <= 1 {
        let _ = writeln!(out, "\n {} = {} ;", v.name, rows.join(", "));
    } else {
        let _ = writeln!(out, "\n {} =\n  {} ;", v.name, rows.join(",\n  "));
    }
    Ok(())
}

/// Renders a whole file image.
pub fn dump_bytes(bytes: &[u8], name: &str, options: &DumpOptions) -> Result<String> {
    let (schema, _) = decode_header_prefix(bytes)?;
    let mut out = String::new();
    write_header(&mut out, name, &schema);
    if !options.header_only {
        let selected: Vec<&Variable> = match &options.var {
            Some(n) => vec![schema.variables.iter().find(|v| &v.name == n).ok_or_else(|| Error::NotVariable(n.clone()))?],
            None => schema.variables.iter().collect(),
        };
        if !selected.is_empty() {
            out.push_str("data:\n");
        }
        for v in selected {
            write_data(&mut out, bytes, &schema, v)?;
        }
    }
    out.push_str("}\n");
    Ok(out)
}

/// Reads and renders a file; the dataset name is the file stem.
pub fn dump_file(path: impl AsRef<Path>, options: &DumpOptions) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("unnamed");
    dump_bytes(&bytes, name, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{compute_layout, encode_header, Dimension};

    #[test]
    fn g_formatting_matches_c() {
        // Expected strings from C printf.
        let cases: &[(f64, usize, &str)] = &[
            (0.1, 17, "0.10000000000000001"),
            (1.0, 17, "1"),
            (-2.5, 17, "-2.5"),
            (1e20, 17, "1e+20"),
            (123456789.0, 9, "123456789"),
            (1234567890.0, 9, "1.23456789e+09"),
            (0.0001, 9, "0.0001"),
            (0.00001, 9, "1e-05"),
            (9.969209968386869e36, 17, "9.969209968386869e+36"),
            (0.1f32 as f64, 9, "0.100000001"),
            (100.0, 3, "100"),
            (1000.0, 3, "1e+03"),
        ];
        for &(v, p, want) in cases {
            assert_eq!(format_g(v, p), want, "{v} at {p}");
        }
    }

    #[test]
    fn empty_schema() {
        let bytes = encode_header(&compute_layout(&Schema::new(), 0).unwrap()).unwrap();
        assert_eq!(dump_bytes(&bytes, "empty", &DumpOptions::default()).unwrap(), "netcdf empty {\n}\n");
    }

    #[test]
    fn truncated_reports_offset() {
        let err = dump_bytes(b"CDF\x01\0\0", "t", &DumpOptions::default()).unwrap_err();
        assert_eq!(err, Error::TruncatedHeader { offset: 4 });
        assert!(err.to_string().contains("offset 4"));
    }

    #[test]
    fn header_and_data() {
        let mut s = Schema::new();
        s.dimensions = vec![Dimension::unlimited("t"), Dimension::fixed("x", 2)];
        let mut v = Variable::new("v", ExternalType::Float, vec![0, 1]);
        v.attributes.push(Attribute::new("units", "m/s"));
        s.variables.push(v);
        s.variables.push(Variable::new("c", ExternalType::Char, vec![1]));
        s.global_attributes.push(Attribute::new("n", vec![1i16, -2]));
        let mut s = compute_layout(&s, 0).unwrap();
        s.numrecs = 1;
        let mut bytes = encode_header(&s).unwrap();
        bytes.extend_from_slice(b"ok\0\0");
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        bytes.extend_from_slice(&0.1f32.to_be_bytes());
        let text = dump_bytes(&bytes, "f", &DumpOptions::default()).unwrap();
        let want = "netcdf f {\ndimensions:\n\tt = UNLIMITED ; // (1 currently)\n\tx = 2 ;\nvariables:\n\
                    \tfloat v(t, x) ;\n\t\tv:units = \"m/s\" ;\n\tchar c(x) ;\n\n// global attributes:\n\
                    \t\t:n = 1s, -2s ;\ndata:\n\n v =\n  1.5, 0.100000001 ;\n\n c = \"ok\" ;\n}\n";
        assert_eq!(text, want);
        let only = DumpOptions { header_only: false, var: Some("c".into()) };
        assert!(dump_bytes(&bytes, "f", &only).unwrap().ends_with("data:\n\n c = \"ok\" ;\n}\n"));
        let missing = DumpOptions { header_only: false, var: Some("zz".into()) };
        assert!(matches!(dump_bytes(&bytes, "f", &missing), Err(Error::NotVariable(_))));
        assert!(matches!(
            dump_bytes(&bytes[..bytes.len() - 2], "f", &DumpOptions::default()),
            Err(Error::Io { .. })
        ));
    }
}
