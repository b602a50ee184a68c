use super::{header, Schema};
use crate::error::{Error, Result};

/// Largest file offset representable in a CDF-1 header.
pub const MAX_OFFSET: u64 = i32::MAX as u64;

/// Rounds up to the next multiple of 4.
pub fn padded(n: u64) -> u64 {
    n.div_ceil(4) * 4
}

/// Assigns `vsize`, `begin`, `data_begin` and `recsize` for every variable.
///
/// Fixed-size variables are laid out contiguously in definition order
/// starting at `data_begin`; record variables follow, forming the record
/// template repeated every `recsize` bytes.
pub fn compute_layout(schema: &Schema, header_pad: u64) -> Result<Schema> {
    layout_with(schema, |header_len| padded(header_len + header_pad))
}

/// Like [`compute_layout`], with `data_begin` chosen from the encoded
/// header length by `choose_data_begin` (rounded up to a multiple of 4).
pub(crate) fn layout_with(schema: &Schema, choose_data_begin: impl FnOnce(u64) -> u64) -> Result<Schema> {
    schema.validate()?;
    let mut out = schema.clone();
    let single_record_var = out.record_vars().count() == 1;
    for i in 0..out.variables.len() {
        let var = &out.variables[i];
        let raw = out
            .slab_elements(var)
            .checked_mul(var.etype.element_size() as u64)
            .filter(|&n| n <= u32::MAX as u64 - 3)
            .ok_or_else(|| Error::Overflow(format!("variable {} is too large", var.name)))?;
        let vsize = if single_record_var && out.is_record_var(var) { raw } else { padded(raw) };
        out.variables[i].vsize = vsize;
    }

    let header_len = header::encode_raw(&out).len() as u64;
    out.data_begin = padded(choose_data_begin(header_len).max(header_len));

    let mut cursor = out.data_begin;
    let fixed: Vec<usize> = out.fixed_vars().map(|(i, _)| i).collect();
    let record: Vec<usize> = out.record_vars().map(|(i, _)| i).collect();
    for i in fixed.into_iter().chain(record.iter().copied()) {
        if cursor > MAX_OFFSET {
            return Err(Error::Overflow(format!(
                "variable {} would begin at {cursor}",
                out.variables[i].name
            )));
        }
        out.variables[i].begin = cursor;
        cursor += out.variables[i].vsize;
    }
    out.recsize = record_size(&out);
    Ok(out)
}

/// Bytes per record: the sum of record-variable vsizes, except that a sole
/// record variable packs its records without padding.
pub(crate) fn record_size(schema: &Schema) -> u64 {
    let record: Vec<_> = schema.record_vars().map(|(_, v)| v).collect();
    match record.as_slice() {
        [] => 0,
        [only] => schema.slab_bytes(only),
        many => many.iter().map(|v| v.vsize).sum(),
    }
}

/// Verifies that variable data regions follow the header, do not overlap,
/// and that record variables form a contiguous record template.
pub(crate) fn check_offsets(schema: &Schema, header_len: u64) -> Result<()> {
    let single_record_var = schema.record_vars().count() == 1;
    for var in &schema.variables {
        let raw = schema.slab_bytes(var);
        let ok = var.vsize == padded(raw) || (single_record_var && schema.is_record_var(var) && var.vsize == raw);
        if !ok {
            return Err(Error::InconsistentOffsets(format!(
                "variable {} has vsize {} but its shape needs {raw} bytes",
                var.name, var.vsize
            )));
        }
    }

    let mut end = header_len;
    for (_, var) in schema.fixed_vars() {
        if var.begin < end {
            return Err(Error::InconsistentOffsets(format!(
                "variable {} begins at {} before offset {end}",
                var.name, var.begin
            )));
        }
        end = var.begin + var.vsize;
    }
    let mut expected: Option<u64> = None;
    for (_, var) in schema.record_vars() {
        match expected {
            None if var.begin < end => {
                return Err(Error::InconsistentOffsets(format!(
                    "record variable {} begins at {} inside fixed-size data ending at {end}",
                    var.name, var.begin
                )))
            }
            Some(at) if var.begin != at => {
                return Err(Error::InconsistentOffsets(format!(
                    "record variable {} begins at {}, expected {at}",
                    var.name, var.begin
                )))
            }
            _ => {}
        }
        expected = Some(var.begin + var.vsize);
    }
    Ok(())
}
