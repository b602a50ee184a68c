//! Schema data model of the classic (CDF-1) container and its binary header
//! grammar.

mod header;
mod layout;

pub use header::{decode_header, decode_header_prefix, encode_header, HEADER_MAGIC};
pub use layout::{compute_layout, padded, MAX_OFFSET};
pub(crate) use layout::layout_with;

use sha2::{Digest, Sha256};

use crate::codec::AttrValues;
use crate::error::{Error, Result};

/// The six external element types of the classic format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExternalType {
    Byte,
    Char,
    Short,
    Int,
    Float,
    Double,
}

impl ExternalType {
    pub const ALL: [ExternalType; 6] = [
        ExternalType::Byte,
        ExternalType::Char,
        ExternalType::Short,
        ExternalType::Int,
        ExternalType::Float,
        ExternalType::Double,
    ];

    pub fn element_size(self) -> usize {
        match self {
            ExternalType::Byte | ExternalType::Char => 1,
            ExternalType::Short => 2,
            ExternalType::Int | ExternalType::Float => 4,
            ExternalType::Double => 8,
        }
    }

    /// The `nc_type` tag written in the header.
    pub fn code(self) -> u32 {
        match self {
            ExternalType::Byte => 1,
            ExternalType::Char => 2,
            ExternalType::Short => 3,
            ExternalType::Int => 4,
            ExternalType::Float => 5,
            ExternalType::Double => 6,
        }
    }

    pub fn from_code(code: u32) -> Option<ExternalType> {
        Some(match code {
            1 => ExternalType::Byte,
            2 => ExternalType::Char,
            3 => ExternalType::Short,
            4 => ExternalType::Int,
            5 => ExternalType::Float,
            6 => ExternalType::Double,
            _ => return None,
        })
    }

    /// Lowercase CDL keyword.
    pub fn cdl_name(self) -> &'static str {
        match self {
            ExternalType::Byte => "byte",
            ExternalType::Char => "char",
            ExternalType::Short => "short",
            ExternalType::Int => "int",
            ExternalType::Float => "float",
            ExternalType::Double => "double",
        }
    }

    pub fn from_cdl_name(name: &str) -> Option<ExternalType> {
        ExternalType::ALL
            .into_iter()
            .find(|t| t.cdl_name().eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dimension {
    pub name: String,
    /// Declared length; always 0 for the unlimited dimension.
    pub length: u64,
    pub unlimited: bool,
}

impl Dimension {
    pub fn fixed(name: impl Into<String>, length: u64) -> Self {
        Dimension { name: name.into(), length, unlimited: false }
    }

    pub fn unlimited(name: impl Into<String>) -> Self {
        Dimension { name: name.into(), length: 0, unlimited: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    pub name: String,
    pub values: AttrValues,
}

impl Attribute {
    pub fn new(name: impl Into<String>, values: impl Into<AttrValues>) -> Self {
        Attribute { name: name.into(), values: values.into() }
    }

    pub fn etype(&self) -> ExternalType {
        self.values.etype()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub etype: ExternalType,
    /// Dimension ids, most significant first.
    pub dim_ids: Vec<usize>,
    pub attributes: Vec<Attribute>,
    /// Bytes per variable (fixed-size) or per record (record variable).
    pub vsize: u64,
    /// File offset of the first byte of data.
    pub begin: u64,
}

impl Variable {
    pub fn new(name: impl Into<String>, etype: ExternalType, dim_ids: Vec<usize>) -> Self {
        Variable {
            name: name.into(),
            etype,
            dim_ids,
            attributes: Vec::new(),
            vsize: 0,
            begin: 0,
        }
    }

    pub fn rank(&self) -> usize {
        self.dim_ids.len()
    }
}

/// In-memory image of a file header together with its computed layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schema {
    pub dimensions: Vec<Dimension>,
    pub global_attributes: Vec<Attribute>,
    pub variables: Vec<Variable>,
    pub numrecs: u64,
    /// Offset of the first variable's data; the header (plus fill) ends here.
    pub data_begin: u64,
    /// Bytes between consecutive records of any record variable.
    pub recsize: u64,
}

/// Version byte of the only supported container variant.
pub const FORMAT_VERSION: u8 = 1;

impl Schema {
    pub fn new() -> Self {
        Schema::default()
    }

    pub fn unlimited_dim(&self) -> Option<usize> {
        self.dimensions.iter().position(|d| d.unlimited)
    }

    pub fn is_record_var(&self, var: &Variable) -> bool {
        var.dim_ids
            .first()
            .and_then(|&d| self.dimensions.get(d))
            .is_some_and(|d| d.unlimited)
    }

    pub fn record_vars(&self) -> impl Iterator<Item = (usize, &Variable)> {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| self.is_record_var(v))
    }

    pub fn fixed_vars(&self) -> impl Iterator<Item = (usize, &Variable)> {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| !self.is_record_var(v))
    }

    pub fn var(&self, var_id: usize) -> Result<&Variable> {
        self.variables
            .get(var_id)
            .ok_or_else(|| Error::NotVariable(format!("id {var_id}")))
    }

    pub fn var_id(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn dim_id(&self, name: &str) -> Option<usize> {
        self.dimensions.iter().position(|d| d.name == name)
    }

    /// Current shape of a variable; the record dimension reports `numrecs`.
    pub fn var_shape(&self, var: &Variable) -> Vec<u64> {
        var.dim_ids
            .iter()
            .map(|&d| {
                let dim = &self.dimensions[d];
                if dim.unlimited {
                    self.numrecs
                } else {
                    dim.length
                }
            })
            .collect()
    }

    /// Element count of one record (record variables) or of the whole
    /// variable (fixed-size variables).
    pub fn slab_elements(&self, var: &Variable) -> u64 {
        let skip = usize::from(self.is_record_var(var));
        var.dim_ids[skip..]
            .iter()
            .map(|&d| self.dimensions[d].length)
            .product()
    }

    /// Bytes of actual data in one record or in the whole fixed variable.
    pub fn slab_bytes(&self, var: &Variable) -> u64 {
        self.slab_elements(var) * var.etype.element_size() as u64
    }

    /// Offset of the first record variable, if any.
    pub fn record_begin(&self) -> Option<u64> {
        self.record_vars().map(|(_, v)| v.begin).min()
    }

    /// File size implied by the layout and `numrecs`.
    pub fn expected_file_size(&self) -> u64 {
        let fixed_end = self
            .fixed_vars()
            .map(|(_, v)| v.begin + v.vsize)
            .max()
            .unwrap_or(self.data_begin)
            .max(self.data_begin);
        match self.record_begin() {
            Some(rb) => (rb + self.numrecs * self.recsize).max(fixed_end),
            None => fixed_end,
        }
    }

    /// Checks the structural invariants that do not depend on layout.
    pub fn validate(&self) -> Result<()> {
        check_names(self.dimensions.iter().map(|d| d.name.as_str()), "dimension")?;
        check_names(self.global_attributes.iter().map(|a| a.name.as_str()), "attribute")?;
        check_names(self.variables.iter().map(|v| v.name.as_str()), "variable")?;
        let unlimited = self.dimensions.iter().filter(|d| d.unlimited).count();
        if unlimited > 1 {
            return Err(Error::InvalidSchema("more than one unlimited dimension".into()));
        }
        for dim in &self.dimensions {
            if dim.unlimited && dim.length != 0 {
                return Err(Error::InvalidSchema(format!("unlimited dimension {} has nonzero length", dim.name)));
            }
            if !dim.unlimited && dim.length == 0 {
                return Err(Error::InvalidSchema(format!("dimension {} has zero length", dim.name)));
            }
        }
        for var in &self.variables {
            check_names(var.attributes.iter().map(|a| a.name.as_str()), "attribute")?;
            for (pos, &d) in var.dim_ids.iter().enumerate() {
                let dim = self.dimensions.get(d).ok_or_else(|| {
                    Error::InvalidSchema(format!("variable {} uses unknown dimension id {d}", var.name))
                })?;
                if dim.unlimited && pos != 0 {
                    return Err(Error::InvalidSchema(format!(
                        "variable {} uses the unlimited dimension at position {pos}",
                        var.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Digest of everything that must agree across participants: the full
    /// header content except `numrecs`.
    pub fn digest(&self) -> [u8; 32] {
        let mut canonical = self.clone();
        canonical.numrecs = 0;
        let bytes = header::encode_raw(&canonical);
        Sha256::digest(&bytes).into()
    }

    /// Raw header length (no trailing fill) of the current content.
    pub fn header_len(&self) -> u64 {
        header::encode_raw(self).len() as u64
    }
}

pub(crate) fn check_name(name: &str, what: &str) -> Result<()> {
    if name.is_empty() {
        return Err(Error::InvalidSchema(format!("empty {what} name")));
    }
    if name.contains('\0') {
        return Err(Error::InvalidSchema(format!("{what} name {name:?} contains NUL")));
    }
    Ok(())
}

fn check_names<'a>(names: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for name in names {
        check_name(name, what)?;
        if !seen.insert(name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
    }
    Ok(())
}
