use super::layout::{check_offsets, padded, record_size};
use super::{check_name, Attribute, Dimension, ExternalType, Schema, Variable, FORMAT_VERSION};
use crate::codec::AttrValues;
use crate::error::{Error, Result};

pub const HEADER_MAGIC: [u8; 4] = [b'C', b'D', b'F', FORMAT_VERSION];

const NC_DIMENSION: u32 = 10;
const NC_VARIABLE: u32 = 11;
const NC_ATTRIBUTE: u32 = 12;

/// Largest `numrecs` value; `0xFFFF_FFFF` is the streaming sentinel.
const MAX_NUMRECS: u64 = u32::MAX as u64 - 1;

/// Encodes the header of a laid-out schema, zero filled up to `data_begin`.
pub fn encode_header(schema: &Schema) -> Result<Vec<u8>> {
    schema.validate()?;
    if schema.numrecs > MAX_NUMRECS {
        return Err(Error::Overflow(format!("numrecs {}", schema.numrecs)));
    }
    for var in &schema.variables {
        if var.vsize > u32::MAX as u64 || var.begin > super::MAX_OFFSET {
            return Err(Error::Overflow(format!("variable {}", var.name)));
        }
    }
    let mut out = encode_raw(schema);
    let needed = out.len() as u64;
    check_offsets(schema, needed).map_err(|e| match e {
        Error::InconsistentOffsets(msg) => Error::InvalidSchema(msg),
        other => other,
    })?;
    if needed > schema.data_begin {
        return Err(Error::HeaderOverflow { needed, available: schema.data_begin });
    }
    out.resize(schema.data_begin as usize, 0);
    Ok(out)
}

/// Header bytes without validation or trailing fill. Offsets are written
/// truncated to 32 bits.
pub(crate) fn encode_raw(schema: &Schema) -> Vec<u8> {
    let mut w = Writer::default();
    w.out.extend_from_slice(&HEADER_MAGIC);
    w.u32(schema.numrecs as u32);

    if schema.dimensions.is_empty() {
        w.absent();
    } else {
        w.u32(NC_DIMENSION);
        w.u32(schema.dimensions.len() as u32);
        for dim in &schema.dimensions {
            w.name(&dim.name);
            w.u32(if dim.unlimited { 0 } else { dim.length as u32 });
        }
    }

    w.attributes(&schema.global_attributes);

    if schema.variables.is_empty() {
        w.absent();
    } else {
        w.u32(NC_VARIABLE);
        w.u32(schema.variables.len() as u32);
        for var in &schema.variables {
            w.name(&var.name);
            w.u32(var.dim_ids.len() as u32);
            for &d in &var.dim_ids {
                w.u32(d as u32);
            }
            w.attributes(&var.attributes);
            w.u32(var.etype.code());
            w.u32(var.vsize as u32);
            w.u32(var.begin as u32);
        }
    }
    w.out
}

#[derive(Default)]
struct Writer {
    out: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.out.extend_from_slice(&v.to_be_bytes());
    }

    fn absent(&mut self) {
        self.u32(0);
        self.u32(0);
    }

    fn padded_bytes(&mut self, bytes: &[u8]) {
        self.out.extend_from_slice(bytes);
        let pad = padded(bytes.len() as u64) as usize - bytes.len();
        self.out.extend(std::iter::repeat_n(0, pad));
    }

    fn name(&mut self, name: &str) {
        self.u32(name.len() as u32);
        self.padded_bytes(name.as_bytes());
    }

    fn attributes(&mut self, attrs: &[Attribute]) {
        if attrs.is_empty() {
            self.absent();
            return;
        }
        self.u32(NC_ATTRIBUTE);
        self.u32(attrs.len() as u32);
        for att in attrs {
            self.name(&att.name);
            self.u32(att.etype().code());
            self.u32(att.values.len() as u32);
            self.padded_bytes(&att.values.encode());
        }
    }
}

/// Decodes a header from the start of `bytes`, which may extend past it.
pub fn decode_header(bytes: &[u8]) -> Result<Schema> {
    decode_header_prefix(bytes).map(|(schema, _)| schema)
}

/// Like [`decode_header`] and also returns the encoded header length.
pub fn decode_header_prefix(bytes: &[u8]) -> Result<(Schema, u64)> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic()?;
    let numrecs = r.u32()? as u64;
    if numrecs == u32::MAX as u64 {
        return Err(r.malformed("streaming numrecs sentinel is not supported"));
    }

    let mut dimensions = Vec::new();
    let ndims = r.list_header(NC_DIMENSION)?;
    for _ in 0..ndims {
        let name = r.name()?;
        let length = r.u32()? as u64;
        dimensions.push(if length == 0 {
            Dimension::unlimited(name)
        } else {
            Dimension::fixed(name, length)
        });
    }

    let global_attributes = r.attributes()?;

    let mut variables = Vec::new();
    let nvars = r.list_header(NC_VARIABLE)?;
    for _ in 0..nvars {
        let name = r.name()?;
        let rank = r.u32()? as usize;
        let mut dim_ids = Vec::new();
        for _ in 0..rank {
            let at = r.pos;
            let d = r.u32()? as usize;
            if d >= dimensions.len() {
                return Err(Error::MalformedHeader {
                    offset: at as u64,
                    reason: format!("variable {name} references dimension id {d}"),
                });
            }
            dim_ids.push(d);
        }
        let attributes = r.attributes()?;
        let etype = r.etype()?;
        let vsize = r.u32()? as u64;
        let begin = r.u32()? as u64;
        variables.push(Variable { name, etype, dim_ids, attributes, vsize, begin });
    }

    let header_len = r.pos as u64;
    let mut schema = Schema {
        dimensions,
        global_attributes,
        variables,
        numrecs,
        data_begin: 0,
        recsize: 0,
    };
    schema.validate()?;
    schema.recsize = record_size(&schema);
    schema.data_begin = schema
        .fixed_vars()
        .map(|(_, v)| v.begin)
        .min()
        .or_else(|| schema.record_begin())
        .unwrap_or(header_len);
    check_offsets(&schema, header_len)?;
    Ok((schema, header_len))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn truncated(&self) -> Error {
        Error::TruncatedHeader { offset: self.pos as u64 }
    }

    fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::MalformedHeader { offset: self.pos as u64, reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(self.truncated()),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self) -> Result<()> {
        let n = self.bytes.len().min(3);
        if self.bytes[..n] != HEADER_MAGIC[..n] {
            return Err(Error::BadMagic);
        }
        let magic = self.take(4)?;
        if magic[3] != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(magic[3]));
        }
        Ok(())
    }

    /// Reads a list tag and element count; an absent list yields 0.
    fn list_header(&mut self, expected: u32) -> Result<u32> {
        let at = self.pos;
        let tag = self.u32()?;
        let count = self.u32()?;
        match tag {
            0 if count == 0 => Ok(0),
            0 => Err(Error::MalformedHeader {
                offset: at as u64,
                reason: format!("absent list with nonzero count {count}"),
            }),
            t if t == expected => Ok(count),
            t => Err(Error::MalformedHeader {
                offset: at as u64,
                reason: format!("expected list tag {expected}, found {t}"),
            }),
        }
    }

    fn padded(&mut self, len: usize) -> Result<&[u8]> {
        let start = self.pos;
        let total = padded(len as u64) as usize;
        self.take(total)?;
        Ok(&self.bytes[start..start + len])
    }

    fn name(&mut self) -> Result<String> {
        let at = self.pos as u64;
        let len = self.u32()? as usize;
        let raw = self.padded(len)?;
        let name = std::str::from_utf8(raw).map_err(|_| Error::MalformedName { offset: at })?;
        check_name(name, "").map_err(|_| Error::MalformedName { offset: at })?;
        Ok(name.to_string())
    }

    fn etype(&mut self) -> Result<ExternalType> {
        let at = self.pos as u64;
        let code = self.u32()?;
        ExternalType::from_code(code).ok_or_else(|| Error::MalformedHeader {
            offset: at,
            reason: format!("unknown type code {code}"),
        })
    }

    fn attributes(&mut self) -> Result<Vec<Attribute>> {
        let count = self.list_header(NC_ATTRIBUTE)?;
        let mut attrs = Vec::new();
        for _ in 0..count {
            let name = self.name()?;
            let etype = self.etype()?;
            let nelems = self.u32()? as usize;
            let len = nelems
                .checked_mul(etype.element_size())
                .ok_or_else(|| self.truncated())?;
            let payload = self.padded(len)?;
            let values = AttrValues::decode(etype, payload)?;
            attrs.push(Attribute { name, values });
        }
        Ok(attrs)
    }
}
