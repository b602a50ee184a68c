//! Conversion between in-memory element types and the big-endian external
//! representation used in the file.
//!
//! Widening conversions always succeed. Narrowing conversions are range
//! checked and fail with [`Error::RangeError`]; floating point values are
//! truncated toward zero before being stored into integer types. Text
//! (`u8` in memory, `CHAR` in the file) never converts to or from numbers.

use std::fmt::Debug;

use crate::error::{Error, Result};
use crate::format::ExternalType;

/// In-memory element kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemoryType {
    Byte,
    Text,
    Short,
    Int,
    Long,
    Float,
    Double,
}

impl MemoryType {
    pub fn element_size(self) -> usize {
        match self {
            MemoryType::Byte | MemoryType::Text => 1,
            MemoryType::Short => 2,
            MemoryType::Int | MemoryType::Float => 4,
            MemoryType::Long | MemoryType::Double => 8,
        }
    }

    /// The memory type that converts to `etype` without loss.
    pub fn identity_for(etype: ExternalType) -> MemoryType {
        match etype {
            ExternalType::Byte => MemoryType::Byte,
            ExternalType::Char => MemoryType::Text,
            ExternalType::Short => MemoryType::Short,
            ExternalType::Int => MemoryType::Int,
            ExternalType::Float => MemoryType::Float,
            ExternalType::Double => MemoryType::Double,
        }
    }
}

/// A single value in transit between a memory type and an external type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    Text(u8),
    Int(i64),
    Float(f64),
}

/// Rust element types usable as user buffers.
///
/// `u8` is text and pairs with `CHAR`; `i8` is the signed `BYTE` type.
pub trait MemValue: Copy + Default + PartialEq + Debug + Send + Sync + 'static {
    const MEMORY_TYPE: MemoryType;

    fn to_scalar(self) -> Scalar;

    fn from_scalar(value: Scalar) -> Result<Self>;
}

fn float_to_int(value: f64, min: i64, max: i64) -> Result<i64> {
    if value.is_nan() {
        return Err(Error::RangeError);
    }
    let t = value.trunc();
    // i64::MAX is not representable as f64; 2^63 is the exclusive bound.
    let upper_ok = if max == i64::MAX {
        t < 9_223_372_036_854_775_808.0
    } else {
        t <= max as f64
    };
    if t >= min as f64 && upper_ok {
        Ok(t as i64)
    } else {
        Err(Error::RangeError)
    }
}

fn scalar_to_int(value: Scalar, min: i64, max: i64) -> Result<i64> {
    match value {
        Scalar::Text(_) => Err(Error::TypeMismatch),
        Scalar::Int(i) if (min..=max).contains(&i) => Ok(i),
        Scalar::Int(_) => Err(Error::RangeError),
        Scalar::Float(f) => float_to_int(f, min, max),
    }
}

fn scalar_to_f32(value: Scalar) -> Result<f32> {
    match value {
        Scalar::Text(_) => Err(Error::TypeMismatch),
        Scalar::Int(i) => Ok(i as f32),
        Scalar::Float(f) if f.is_finite() && f.abs() > f32::MAX as f64 => Err(Error::RangeError),
        Scalar::Float(f) => Ok(f as f32),
    }
}

fn scalar_to_f64(value: Scalar) -> Result<f64> {
    match value {
        Scalar::Text(_) => Err(Error::TypeMismatch),
        Scalar::Int(i) => Ok(i as f64),
        Scalar::Float(f) => Ok(f),
    }
}

macro_rules! int_mem_value {
    ($t:ty, $mt:expr) => {
        impl MemValue for $t {
            const MEMORY_TYPE: MemoryType = $mt;

            fn to_scalar(self) -> Scalar {
                Scalar::Int(self as i64)
            }

            fn from_scalar(value: Scalar) -> Result<Self> {
                scalar_to_int(value, <$t>::MIN as i64, <$t>::MAX as i64).map(|i| i as $t)
            }
        }
    };
}

int_mem_value!(i8, MemoryType::Byte);
int_mem_value!(i16, MemoryType::Short);
int_mem_value!(i32, MemoryType::Int);
int_mem_value!(i64, MemoryType::Long);

impl MemValue for u8 {
    const MEMORY_TYPE: MemoryType = MemoryType::Text;

    fn to_scalar(self) -> Scalar {
        Scalar::Text(self)
    }

    fn from_scalar(value: Scalar) -> Result<Self> {
        match value {
            Scalar::Text(b) => Ok(b),
            _ => Err(Error::TypeMismatch),
        }
    }
}

impl MemValue for f32 {
    const MEMORY_TYPE: MemoryType = MemoryType::Float;

    fn to_scalar(self) -> Scalar {
        Scalar::Float(self as f64)
    }

    fn from_scalar(value: Scalar) -> Result<Self> {
        scalar_to_f32(value)
    }
}

impl MemValue for f64 {
    const MEMORY_TYPE: MemoryType = MemoryType::Double;

    fn to_scalar(self) -> Scalar {
        Scalar::Float(self)
    }

    fn from_scalar(value: Scalar) -> Result<Self> {
        scalar_to_f64(value)
    }
}

/// Appends the external encoding of one value.
pub fn put_scalar(etype: ExternalType, value: Scalar, out: &mut Vec<u8>) -> Result<()> {
    match etype {
        ExternalType::Char => match value {
            Scalar::Text(b) => out.push(b),
            _ => return Err(Error::TypeMismatch),
        },
        ExternalType::Byte => out.push(scalar_to_int(value, i8::MIN.into(), i8::MAX.into())? as i8 as u8),
        ExternalType::Short => {
            let v = scalar_to_int(value, i16::MIN.into(), i16::MAX.into())? as i16;
            out.extend_from_slice(&v.to_be_bytes());
        }
        ExternalType::Int => {
            let v = scalar_to_int(value, i32::MIN.into(), i32::MAX.into())? as i32;
            out.extend_from_slice(&v.to_be_bytes());
        }
        ExternalType::Float => out.extend_from_slice(&scalar_to_f32(value)?.to_be_bytes()),
        ExternalType::Double => out.extend_from_slice(&scalar_to_f64(value)?.to_be_bytes()),
    }
    Ok(())
}

/// Decodes one value; `bytes` must hold exactly `etype.element_size()` bytes.
pub fn get_scalar(etype: ExternalType, bytes: &[u8]) -> Scalar {
    match etype {
        ExternalType::Char => Scalar::Text(bytes[0]),
        ExternalType::Byte => Scalar::Int(bytes[0] as i8 as i64),
        ExternalType::Short => Scalar::Int(i16::from_be_bytes([bytes[0], bytes[1]]) as i64),
        ExternalType::Int => Scalar::Int(i32::from_be_bytes(bytes[..4].try_into().unwrap()) as i64),
        ExternalType::Float => Scalar::Float(f32::from_be_bytes(bytes[..4].try_into().unwrap()) as f64),
        ExternalType::Double => Scalar::Float(f64::from_be_bytes(bytes[..8].try_into().unwrap())),
    }
}

/// Encodes `values` as densely packed big-endian `etype` elements.
pub fn encode_values<T: MemValue>(etype: ExternalType, values: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(values.len() * etype.element_size());
    encode_values_into(etype, values.iter().copied(), &mut out)?;
    Ok(out)
}

pub fn encode_values_into<T: MemValue>(
    etype: ExternalType,
    values: impl IntoIterator<Item = T>,
    out: &mut Vec<u8>,
) -> Result<()> {
    for v in values {
        put_scalar(etype, v.to_scalar(), out)?;
    }
    Ok(())
}

/// Decodes big-endian `etype` elements into memory values of type `T`.
pub fn decode_values<T: MemValue>(etype: ExternalType, bytes: &[u8]) -> Result<Vec<T>> {
    let size = etype.element_size();
    if !bytes.len().is_multiple_of(size) {
        return Err(Error::LayoutMismatch(format!(
            "{} bytes is not a multiple of the element size {size}",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(size)
        .map(|chunk| T::from_scalar(get_scalar(etype, chunk)))
        .collect()
}

/// Default fill value of each external type, as a scalar.
pub fn fill_value(etype: ExternalType) -> Scalar {
    match etype {
        ExternalType::Byte => Scalar::Int(-127),
        ExternalType::Char => Scalar::Text(0),
        ExternalType::Short => Scalar::Int(-32767),
        ExternalType::Int => Scalar::Int(-2_147_483_647),
        ExternalType::Float | ExternalType::Double => Scalar::Float(9.969_209_968_386_869e36),
    }
}

/// External encoding of the default fill value.
pub fn fill_value_bytes(etype: ExternalType) -> Vec<u8> {
    let mut out = Vec::with_capacity(8);
    put_scalar(etype, fill_value(etype), &mut out).expect("fill values fit their own type");
    out
}

/// A homogeneous list of values of one external type, as stored in
/// attributes.
#[derive(Debug, Clone, PartialEq)]
pub enum AttrValues {
    Byte(Vec<i8>),
    Char(Vec<u8>),
    Short(Vec<i16>),
    Int(Vec<i32>),
    Float(Vec<f32>),
    Double(Vec<f64>),
}

impl AttrValues {
    pub fn etype(&self) -> ExternalType {
        match self {
            AttrValues::Byte(_) => ExternalType::Byte,
            AttrValues::Char(_) => ExternalType::Char,
            AttrValues::Short(_) => ExternalType::Short,
            AttrValues::Int(_) => ExternalType::Int,
            AttrValues::Float(_) => ExternalType::Float,
            AttrValues::Double(_) => ExternalType::Double,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            AttrValues::Byte(v) => v.len(),
            AttrValues::Char(v) => v.len(),
            AttrValues::Short(v) => v.len(),
            AttrValues::Int(v) => v.len(),
            AttrValues::Float(v) => v.len(),
            AttrValues::Double(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unpadded big-endian payload.
    pub fn encode(&self) -> Vec<u8> {
        let encoded = match self {
            AttrValues::Byte(v) => encode_values(ExternalType::Byte, v),
            AttrValues::Char(v) => encode_values(ExternalType::Char, v),
            AttrValues::Short(v) => encode_values(ExternalType::Short, v),
            AttrValues::Int(v) => encode_values(ExternalType::Int, v),
            AttrValues::Float(v) => encode_values(ExternalType::Float, v),
            AttrValues::Double(v) => encode_values(ExternalType::Double, v),
        };
        encoded.expect("identity conversions cannot fail")
    }

    pub fn decode(etype: ExternalType, bytes: &[u8]) -> Result<AttrValues> {
        Ok(match etype {
            ExternalType::Byte => AttrValues::Byte(decode_values(etype, bytes)?),
            ExternalType::Char => AttrValues::Char(decode_values(etype, bytes)?),
            ExternalType::Short => AttrValues::Short(decode_values(etype, bytes)?),
            ExternalType::Int => AttrValues::Int(decode_values(etype, bytes)?),
            ExternalType::Float => AttrValues::Float(decode_values(etype, bytes)?),
            ExternalType::Double => AttrValues::Double(decode_values(etype, bytes)?),
        })
    }

    /// Text content of a `CHAR` attribute, lossily decoded.
    pub fn as_text(&self) -> Option<String> {
        match self {
            AttrValues::Char(v) => Some(String::from_utf8_lossy(v).into_owned()),
            _ => None,
        }
    }

    /// Converts every value to memory type `T`.
    pub fn to_vec<T: MemValue>(&self) -> Result<Vec<T>> {
        decode_values(self.etype(), &self.encode())
    }
}

impl From<&str> for AttrValues {
    fn from(s: &str) -> Self {
        AttrValues::Char(s.as_bytes().to_vec())
    }
}

impl From<Vec<f64>> for AttrValues {
    fn from(v: Vec<f64>) -> Self {
        AttrValues::Double(v)
    }
}

impl From<Vec<f32>> for AttrValues {
    fn from(v: Vec<f32>) -> Self {
        AttrValues::Float(v)
    }
}

impl From<Vec<i32>> for AttrValues {
    fn from(v: Vec<i32>) -> Self {
        AttrValues::Int(v)
    }
}

impl From<Vec<i16>> for AttrValues {
    fn from(v: Vec<i16>) -> Self {
        AttrValues::Short(v)
    }
}

impl From<Vec<i8>> for AttrValues {
    fn from(v: Vec<i8>) -> Self {
        AttrValues::Byte(v)
    }
}
