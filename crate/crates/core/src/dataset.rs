//! The parallel dataset API.
//!
//! Every participant of a group holds its own [`Dataset`] view of one shared
//! file. Lifecycle and definition calls are collective and must be made by
//! all participants with matching arguments; inquiry calls read the local
//! schema copy only. Data access comes in independent variants and
//! collective `_all` variants, the latter executed by two-phase I/O.
//!
//! A dataset is in define mode after [`Dataset::create`] and
//! [`Dataset::redef`], and in data mode after [`Dataset::open`] and
//! [`Dataset::enddef`].

use std::path::{Path, PathBuf};

use crate::access::{flatten_file, flatten_memory, AccessRequest, Extent, MemoryLayout};
use crate::codec::{encode_values_into, fill_value_bytes, get_scalar, AttrValues, MemValue};
use crate::engine::{
    agree, collective_read, collective_write, independent_read, independent_write, plan_two_phase, Comm, Direction,
    HintSet, SharedFile,
};
use crate::error::{Error, Result};
use crate::format::{
    check_name, compute_layout, decode_header_prefix, encode_header, layout_with, padded, Attribute, Dimension,
    ExternalType, Schema, Variable,
};

/// Length argument of [`Dataset::def_dim`] that defines the record dimension.
pub const UNLIMITED: u64 = 0;

/// Attribute owner denoting the dataset itself rather than a variable.
pub const GLOBAL: Option<usize> = None;

const HEADER_PROBE: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Define,
    Data,
}

/// Summary of one variable, as returned by [`Dataset::inq_var`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarInfo {
    pub name: String,
    pub etype: ExternalType,
    pub ndims: usize,
    pub dim_ids: Vec<usize>,
    pub natts: usize,
}

#[derive(Clone, Copy)]
enum Op {
    Put = 1,
    Get = 2,
}

/// One participant's handle on a shared classic file.
#[derive(Debug)]
pub struct Dataset {
    comm: Comm,
    path: PathBuf,
    file: SharedFile,
    schema: Schema,
    /// Schema as last written to disk; `None` until the first enddef.
    committed: Option<Schema>,
    mode: Mode,
    hints: HintSet,
    numrecs_local: u64,
    fill: bool,
    check_args: bool,
    header_pad: u64,
    buffer_size: u64,
}

/// Status of each participant plus one value, gathered collectively.
fn agree_value(comm: &Comm, tag: &'static str, local: Result<u64>) -> Result<Vec<u64>> {
    let payload = match &local {
        Ok(v) => {
            let mut p = vec![0u8];
            p.extend_from_slice(&v.to_le_bytes());
            p
        }
        Err(e) => {
            let mut p = vec![1u8];
            p.extend_from_slice(&e.to_wire());
            p
        }
    };
    let gathered = comm.all_gather_tagged(tag, payload)?;
    if let Some(p) = gathered.iter().find(|p| p.first() != Some(&0)) {
        return Err(p.get(1..).map_or_else(|| Error::CollectiveMismatch("empty status".into()), Error::from_wire));
    }
    gathered
        .iter()
        .map(|p| {
            p.get(1..9)
                .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| Error::CollectiveMismatch("malformed status from peer".into()))
        })
        .collect()
}

fn args_digest(kind: &str, path: &Path) -> Vec<u8> {
    let mut d = kind.as_bytes().to_vec();
    d.push(0);
    d.extend_from_slice(path.as_os_str().as_encoded_bytes());
    d
}

impl Dataset {
    fn new(comm: &Comm, path: &Path, file: SharedFile, hints: HintSet, schema: Schema, mode: Mode) -> Result<Self> {
        let committed = (mode == Mode::Data).then(|| schema.clone());
        Ok(Dataset {
            comm: comm.clone(),
            path: path.to_path_buf(),
            file,
            numrecs_local: schema.numrecs,
            schema,
            committed,
            mode,
            fill: false,
            check_args: hints.check_collective()?,
            header_pad: hints.header_pad()?,
            buffer_size: hints.buffer_size()?,
            hints,
        })
    }

    fn check_hints(hints: &HintSet, n: usize) -> Result<()> {
        hints.aggregators(n)?;
        hints.buffer_size()?;
        hints.header_pad()?;
        hints.check_collective()?;
        hints.record_batch()?;
        Ok(())
    }

    /// Collective: creates (or truncates) the file and enters define mode.
    pub fn create(comm: &Comm, path: impl AsRef<Path>, hints: HintSet) -> Result<Dataset> {
        let path = path.as_ref();
        if !comm.all_match_tagged("create_args", &args_digest("create", path))? {
            return Err(Error::CollectiveMismatch("create called with differing arguments".into()));
        }
        agree(comm, "create_hints", Self::check_hints(&hints, comm.size()))?;
        let stats = comm.stats().clone();
        let root_file = if comm.is_root() { Some(SharedFile::create(path, stats.clone())) } else { None };
        let status = root_file.as_ref().map_or(Ok(()), |r| r.as_ref().map(|_| ()).map_err(Clone::clone));
        agree(comm, "create_root", status)?;
        let file = match root_file {
            Some(f) => f,
            None => SharedFile::open(path, true, stats),
        };
        let file = match file {
            Ok(f) => agree(comm, "create_peers", Ok(())).map(|()| f)?,
            Err(e) => return Err(agree(comm, "create_peers", Err(e)).unwrap_err()),
        };
        Dataset::new(comm, path, file, hints, Schema::new(), Mode::Define)
    }

    /// Collective: opens an existing file for reading and writing. The root
    /// reads and decodes the header once and broadcasts it.
    pub fn open(comm: &Comm, path: impl AsRef<Path>, hints: HintSet) -> Result<Dataset> {
        Self::open_with(comm, path.as_ref(), hints, true)
    }

    /// Like [`Dataset::open`], without write access to the file.
    pub fn open_readonly(comm: &Comm, path: impl AsRef<Path>, hints: HintSet) -> Result<Dataset> {
        Self::open_with(comm, path.as_ref(), hints, false)
    }

    fn open_with(comm: &Comm, path: &Path, hints: HintSet, writable: bool) -> Result<Dataset> {
        let kind = if writable { "open" } else { "open_readonly" };
        if !comm.all_match_tagged("open_args", &args_digest(kind, path))? {
            return Err(Error::CollectiveMismatch("open called with differing arguments".into()));
        }
        agree(comm, "open_hints", Self::check_hints(&hints, comm.size()))?;
        let file = SharedFile::open(path, writable, comm.stats().clone());
        let file = match file {
            Ok(f) => agree(comm, "open_file", Ok(())).map(|()| f)?,
            Err(e) => return Err(agree(comm, "open_file", Err(e)).unwrap_err()),
        };

        let payload = if comm.is_root() {
            match Self::fetch_header(&file) {
                Ok(bytes) => [&[0u8][..], &bytes].concat(),
                Err(e) => [&[1u8][..], &e.to_wire()].concat(),
            }
        } else {
            Vec::new()
        };
        let payload = comm.broadcast_tagged("header", payload)?;
        let schema = match payload.split_first() {
            Some((0, header)) => decode_header_prefix(header)?.0,
            Some((_, wire)) => return Err(Error::from_wire(wire)),
            None => return Err(Error::CollectiveMismatch("empty header broadcast".into())),
        };
        Dataset::new(comm, path, file, hints, schema, Mode::Data)
    }

    /// Reads just enough of the file to decode the header; returns the
    /// encoded header bytes.
    fn fetch_header(file: &SharedFile) -> Result<Vec<u8>> {
        let file_len = file.len()?;
        let mut want = HEADER_PROBE;
        loop {
            let bytes = file.read_header(want)?;
            match decode_header_prefix(&bytes) {
                Ok((_, len)) => return Ok(bytes[..len as usize].to_vec()),
                Err(Error::TruncatedHeader { .. }) if (bytes.len() as u64) < file_len => {
                    want = want.saturating_mul(4);
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn comm(&self) -> &Comm {
        &self.comm
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn hints(&self) -> &HintSet {
        &self.hints
    }

    /// The locally cached schema.
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    fn require_define(&self) -> Result<()> {
        match self.mode {
            Mode::Define => Ok(()),
            Mode::Data => Err(Error::NotInDefineMode),
        }
    }

    fn require_data(&self) -> Result<()> {
        match self.mode {
            Mode::Data => Ok(()),
            Mode::Define => Err(Error::NotInDataMode),
        }
    }

    /// Number of records visible to this participant.
    fn numrecs(&self) -> u64 {
        self.schema.numrecs.max(self.numrecs_local)
    }

    // ---- definition -------------------------------------------------------

    /// Sets fill mode for variables allocated from now on. Define mode.
    pub fn set_fill(&mut self, fill: bool) -> Result<()> {
        self.require_define()?;
        self.fill = fill;
        Ok(())
    }

    /// Defines a dimension; `length == UNLIMITED` defines the record
    /// dimension.
    pub fn def_dim(&mut self, name: &str, length: u64) -> Result<usize> {
        self.require_define()?;
        check_name(name, "dimension")?;
        if self.schema.dim_id(name).is_some() {
            return Err(Error::DuplicateName(name.to_string()));
        }
        let dim = if length == UNLIMITED {
            if self.schema.unlimited_dim().is_some() {
                return Err(Error::BadDimension(format!("{name}: an unlimited dimension already exists")));
            }
            Dimension::unlimited(name)
        } else {
            if length > i32::MAX as u64 {
                return Err(Error::Overflow(format!("dimension {name} has length {length}")));
            }
            Dimension::fixed(name, length)
        };
        self.schema.dimensions.push(dim);
        Ok(self.schema.dimensions.len() - 1)
    }

    pub fn def_var(&mut self, name: &str, etype: ExternalType, dim_ids: &[usize]) -> Result<usize> {
        self.require_define()?;
        check_name(name, "variable")?;
        if self.schema.var_id(name).is_some() {
            return Err(Error::DuplicateName(name.to_string()));
        }
        for (i, &d) in dim_ids.iter().enumerate() {
            let Some(dim) = self.schema.dimensions.get(d) else {
                return Err(Error::BadDimension(format!("{name}: unknown dimension id {d}")));
            };
            if dim.unlimited && i != 0 {
                return Err(Error::BadDimension(format!("{name}: unlimited dimension {} is not first", dim.name)));
            }
        }
        self.schema.variables.push(Variable::new(name, etype, dim_ids.to_vec()));
        Ok(self.schema.variables.len() - 1)
    }

    fn attributes(&self, owner: Option<usize>) -> Result<&Vec<Attribute>> {
        match owner {
            None => Ok(&self.schema.global_attributes),
            Some(id) => Ok(&self.schema.var(id)?.attributes),
        }
    }

    fn attributes_mut(schema: &mut Schema, owner: Option<usize>) -> Result<&mut Vec<Attribute>> {
        match owner {
            None => Ok(&mut schema.global_attributes),
            Some(id) => {
                schema.var(id)?;
                Ok(&mut schema.variables[id].attributes)
            }
        }
    }

    /// Creates or replaces an attribute of a variable or, with [`GLOBAL`],
    /// of the dataset. In data mode this is collective and allowed only if
    /// the header still fits before the data.
    pub fn put_att(&mut self, owner: Option<usize>, name: &str, values: impl Into<AttrValues>) -> Result<()> {
        check_name(name, "attribute")?;
        let values = values.into();
        let mut next = self.schema.clone();
        let atts = Self::attributes_mut(&mut next, owner)?;
        match atts.iter_mut().find(|a| a.name == name) {
            Some(a) => a.values = values,
            None => atts.push(Attribute::new(name, values)),
        }
        if self.mode == Mode::Define {
            self.schema = next;
            return Ok(());
        }
        if next.header_len() > next.data_begin {
            return Err(Error::NotInDefineMode);
        }
        if !self.comm.all_match_tagged("put_att", &next.digest())? {
            return Err(Error::CollectiveMismatch("put_att with differing arguments".into()));
        }
        let status = if self.comm.is_root() {
            encode_header(&next).and_then(|h| self.file.write_header(0, &h))
        } else {
            Ok(())
        };
        agree(&self.comm, "put_att_write", status)?;
        self.committed = Some(next.clone());
        self.schema = next;
        Ok(())
    }

    pub fn get_att(&self, owner: Option<usize>, name: &str) -> Result<&AttrValues> {
        self.attributes(owner)?
            .iter()
            .find(|a| a.name == name)
            .map(|a| &a.values)
            .ok_or_else(|| Error::NotAttribute(name.to_string()))
    }

    pub fn del_att(&mut self, owner: Option<usize>, name: &str) -> Result<()> {
        self.require_define()?;
        let atts = Self::attributes_mut(&mut self.schema, owner)?;
        let i = atts
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::NotAttribute(name.to_string()))?;
        atts.remove(i);
        Ok(())
    }

    // ---- inquiry ----------------------------------------------------------

    pub fn inq_ndims(&self) -> usize {
        self.schema.dimensions.len()
    }

    pub fn inq_nvars(&self) -> usize {
        self.schema.variables.len()
    }

    pub fn inq_natts(&self) -> usize {
        self.schema.global_attributes.len()
    }

    /// Name and current length of a dimension; the record dimension reports
    /// the number of records.
    pub fn inq_dim(&self, dim_id: usize) -> Result<(String, u64)> {
        let dim = self
            .schema
            .dimensions
            .get(dim_id)
            .ok_or_else(|| Error::BadDimension(format!("unknown dimension id {dim_id}")))?;
        let len = if dim.unlimited { self.numrecs() } else { dim.length };
        Ok((dim.name.clone(), len))
    }

    pub fn inq_dimid(&self, name: &str) -> Result<usize> {
        self.schema.dim_id(name).ok_or_else(|| Error::BadDimension(name.to_string()))
    }

    pub fn inq_var(&self, var_id: usize) -> Result<VarInfo> {
        let v = self.schema.var(var_id)?;
        Ok(VarInfo {
            name: v.name.clone(),
            etype: v.etype,
            ndims: v.rank(),
            dim_ids: v.dim_ids.clone(),
            natts: v.attributes.len(),
        })
    }

    pub fn inq_varid(&self, name: &str) -> Result<usize> {
        self.schema.var_id(name).ok_or_else(|| Error::NotVariable(name.to_string()))
    }

    pub fn inq_unlimdim(&self) -> Option<usize> {
        self.schema.unlimited_dim()
    }

    /// Current shape of a variable as seen by this participant.
    pub fn inq_var_shape(&self, var_id: usize) -> Result<Vec<u64>> {
        let mut view = self.schema.clone();
        view.numrecs = self.numrecs();
        let v = view.var(var_id)?;
        Ok(view.var_shape(v))
    }

    // ---- lifecycle --------------------------------------------------------

    /// Collective: verifies that every participant defined the same schema,
    /// computes the layout (relocating existing data if needed), writes the
    /// header and enters data mode. On any error the dataset stays in define
    /// mode and the file keeps its previous contents.
    pub fn enddef(&mut self) -> Result<()> {
        self.require_define()?;
        let mut digest = self.schema.digest().to_vec();
        digest.push(self.fill as u8);
        if !self.comm.all_match_tagged("enddef", &digest)? {
            return Err(Error::CollectiveMismatch("schemas differ across participants at enddef".into()));
        }
        let mut next = self.next_layout()?;
        next.numrecs = self.schema.numrecs;
        let header = encode_header(&next)?;

        let old = self.committed.clone();
        if let Some(old) = &old {
            self.relocate(old, &next)?;
        }
        let status = if self.comm.is_root() { self.finish_enddef(old.as_ref(), &next, &header) } else { Ok(()) };
        agree(&self.comm, "enddef_write", status)?;

        self.committed = Some(next.clone());
        self.schema = next;
        self.mode = Mode::Data;
        Ok(())
    }

    fn next_layout(&self) -> Result<Schema> {
        let Some(old) = &self.committed else {
            return compute_layout(&self.schema, self.header_pad);
        };
        let same_vars = old.variables.len() == self.schema.variables.len();
        if same_vars && self.schema.header_len() <= old.data_begin {
            let mut next = self.schema.clone();
            for (v, o) in next.variables.iter_mut().zip(&old.variables) {
                v.begin = o.begin;
                v.vsize = o.vsize;
            }
            next.data_begin = old.data_begin;
            next.recsize = old.recsize;
            return Ok(next);
        }
        let (floor, pad) = (old.data_begin, self.header_pad);
        layout_with(&self.schema, |h| if h <= floor { floor } else { padded(h + pad) }).map_err(|e| match e {
            Error::Overflow(m) => Error::RelocationOverflow(m),
            e => e,
        })
    }

    /// Root part of enddef: initializes newly allocated space, then writes
    /// the header and sizes the file.
    fn finish_enddef(&self, old: Option<&Schema>, next: &Schema, header: &[u8]) -> Result<()> {
        let old_vars = old.map_or(0, |o| o.variables.len());
        let old_end = old.map_or(0, Schema::expected_file_size);
        for (id, var) in next.variables.iter().enumerate() {
            let slots: Vec<u64> = if next.is_record_var(var) {
                (0..next.numrecs).map(|r| var.begin + r * next.recsize).collect()
            } else {
                vec![var.begin]
            };
            let is_new = id >= old_vars;
            for at in slots {
                if is_new && self.fill {
                    self.write_slot(next, var, at, true)?;
                } else if is_new && at < old_end {
                    self.write_slot(next, var, at, false)?;
                } else if !is_new {
                    // A record variable that gained padding: clear the tail.
                    let o = &old.expect("old schema exists").variables[id];
                    if o.vsize < var.vsize && at + o.vsize < old_end {
                        self.file.write_at(at + o.vsize, &vec![0u8; (var.vsize - o.vsize) as usize])?;
                    }
                }
            }
        }
        self.file.write_header(0, header)?;
        self.file.extend_to(next.expected_file_size())
    }

    /// Writes one variable slot (a fixed variable or one record) as fill
    /// values or zeros, padding with zeros to `vsize`.
    fn write_slot(&self, schema: &Schema, var: &Variable, at: u64, fill: bool) -> Result<()> {
        let data = schema.slab_bytes(var);
        let chunk = self.buffer_size.max(8);
        let pattern = if fill { fill_value_bytes(var.etype) } else { vec![0u8; var.etype.element_size()] };
        let mut done = 0u64;
        while done < var.vsize {
            let len = (var.vsize - done).min(chunk - chunk % pattern.len() as u64);
            let mut buf = vec![0u8; len as usize];
            let payload = data.saturating_sub(done).min(len) as usize;
            for (i, b) in buf[..payload].iter_mut().enumerate() {
                *b = pattern[(done as usize + i) % pattern.len()];
            }
            self.file.write_at(at + done, &buf)?;
            done += len;
        }
        Ok(())
    }

    /// Collective copy of existing data from the `old` layout to `next`.
    ///
    /// Moves towards higher offsets are processed highest source first and
    /// moves towards lower offsets lowest source first, in rounds; within a
    /// round every participant reads an equal contiguous share before anyone
    /// writes. No round overwrites bytes a later round still has to read.
    fn relocate(&self, old: &Schema, next: &Schema) -> Result<()> {
        let mut moves: Vec<(u64, u64, u64)> = Vec::new();
        for (o, v) in old.variables.iter().zip(&next.variables) {
            if old.is_record_var(o) {
                for r in 0..old.numrecs {
                    moves.push((o.begin + r * old.recsize, v.begin + r * next.recsize, o.vsize));
                }
            } else {
                moves.push((o.begin, v.begin, o.vsize));
            }
        }
        moves.retain(|&(from, to, len)| from != to && len > 0);
        if moves.is_empty() {
            return Ok(());
        }
        let round_cap = self.buffer_size.saturating_mul(self.comm.size() as u64).max(1);
        let (mut up, mut down): (Vec<_>, Vec<_>) = moves.into_iter().partition(|&(from, to, _)| to > from);
        up.sort_unstable_by_key(|m| std::cmp::Reverse(m.0));
        down.sort_unstable_by_key(|m| m.0);

        let mut rounds: Vec<Vec<(u64, u64, u64)>> = Vec::new();
        let mut add_rounds = |list: Vec<(u64, u64, u64)>, top_down: bool| {
            let mut current: Vec<(u64, u64, u64)> = Vec::new();
            let mut used = 0;
            for (from, to, len) in list {
                let mut left = len;
                while left > 0 {
                    let take = left.min(round_cap - used);
                    let skip = if top_down { left - take } else { len - left };
                    current.push((from + skip, to + skip, take));
                    used += take;
                    left -= take;
                    if used == round_cap {
                        rounds.push(std::mem::take(&mut current));
                        used = 0;
                    }
                }
            }
            if !current.is_empty() {
                rounds.push(current);
            }
        };
        add_rounds(up, true);
        add_rounds(down, false);

        let n = self.comm.size() as u64;
        let me = self.comm.rank() as u64;
        for round in rounds {
            let total: u64 = round.iter().map(|m| m.2).sum();
            let (lo, hi) = (total * me / n, total * (me + 1) / n);
            let mut share = Vec::new();
            let mut at = 0;
            for (from, to, len) in round {
                let (a, b) = (lo.max(at), hi.min(at + len));
                if a < b {
                    share.push((from + a - at, to + a - at, b - a));
                }
                at += len;
            }
            let mut read = Ok(());
            let mut buffers = Vec::with_capacity(share.len());
            for &(from, _, len) in &share {
                let mut buf = vec![0u8; len as usize];
                if read.is_ok() {
                    read = self.file.read_at(from, &mut buf);
                }
                buffers.push(buf);
            }
            agree(&self.comm, "relocate_read", read)?;
            let mut written = Ok(());
            for (&(_, to, _), buf) in share.iter().zip(&buffers) {
                if written.is_ok() {
                    written = self.file.write_at(to, buf);
                }
            }
            agree(&self.comm, "relocate_write", written)?;
        }
        Ok(())
    }

    /// Collective: makes all record extensions visible, then enters define
    /// mode.
    pub fn redef(&mut self) -> Result<()> {
        self.require_data()?;
        self.sync()?;
        self.mode = Mode::Define;
        Ok(())
    }

    /// Collective: agrees on the record count, writes it to the header and
    /// flushes file data.
    pub fn sync(&mut self) -> Result<()> {
        self.require_data()?;
        let counts = agree_value(&self.comm, "sync_numrecs", Ok(self.numrecs_local))?;
        let numrecs = counts.into_iter().max().unwrap_or(0).max(self.schema.numrecs);
        let changed = self.committed.as_ref().is_some_and(|c| c.numrecs != numrecs);
        self.schema.numrecs = numrecs;
        self.numrecs_local = numrecs;
        if let Some(c) = &mut self.committed {
            c.numrecs = numrecs;
        }
        let status = if self.comm.is_root() {
            (|| {
                if changed {
                    let field = u32::try_from(numrecs)
                        .ok()
                        .filter(|&n| n != u32::MAX)
                        .ok_or_else(|| Error::Overflow(format!("{numrecs} records")))?;
                    self.file.write_header(4, &field.to_be_bytes())?;
                }
                self.file.extend_to(self.schema.expected_file_size())
            })()
        } else {
            Ok(())
        };
        let status = status.and_then(|()| self.file.sync());
        agree(&self.comm, "sync_done", status)
    }

    /// Collective: leaves define mode if needed, syncs and releases the
    /// file.
    pub fn close(mut self) -> Result<()> {
        if self.mode == Mode::Define {
            self.enddef()?;
        }
        self.sync()
    }

    // ---- data access internals --------------------------------------------

    fn request(&self, var_id: usize, start: &[u64], count: &[u64]) -> AccessRequest {
        AccessRequest::new(var_id, start, count)
    }

    fn whole(&self, var_id: usize) -> Result<AccessRequest> {
        let shape = self.inq_var_shape(var_id)?;
        Ok(AccessRequest::new(var_id, &vec![0; shape.len()], &shape))
    }

    /// Record end (one past the last written record) of a request, or 0.
    fn record_end(&self, req: &AccessRequest) -> Result<u64> {
        let var = self.schema.var(req.var_id)?;
        if !self.schema.is_record_var(var) || req.count.contains(&0) {
            return Ok(0);
        }
        let (Some(&s), Some(&c)) = (req.start.first(), req.count.first()) else {
            return Ok(0);
        };
        let stride = req.stride.as_ref().and_then(|s| s.first().copied()).unwrap_or(1);
        Ok(s + (c - 1) * stride + 1)
    }

    fn memory_layout<T: MemValue>(&self, req: &AccessRequest, layout: Option<&MemoryLayout>, buf_len: usize) -> Result<MemoryLayout> {
        let msize = T::MEMORY_TYPE.element_size() as u64;
        let layout = match layout {
            Some(l) => {
                let want = req.num_elements() * msize;
                if l.total_bytes != want {
                    return Err(Error::LayoutMismatch(format!(
                        "layout covers {} bytes, selection needs {want}",
                        l.total_bytes
                    )));
                }
                if l.runs.iter().any(|r| r.offset % msize != 0 || r.len % msize != 0) {
                    return Err(Error::LayoutMismatch(format!("runs not aligned to {msize}-byte elements")));
                }
                l.clone()
            }
            None => flatten_memory(&self.schema, req, T::MEMORY_TYPE)?,
        };
        if layout.span() > buf_len as u64 * msize {
            return Err(Error::LayoutMismatch(format!(
                "buffer holds {buf_len} elements, layout reaches byte {}",
                layout.span()
            )));
        }
        Ok(layout)
    }

    /// Validates a write and returns its file extents, the encoded bytes and
    /// the record end.
    fn prepare_put<T: MemValue>(
        &self,
        req: &AccessRequest,
        layout: Option<&MemoryLayout>,
        buf: &[T],
    ) -> Result<(Vec<Extent>, Vec<u8>, u64)> {
        self.require_data()?;
        let var = self.schema.var(req.var_id)?;
        let extents = flatten_file(&self.schema, req)?;
        let layout = self.memory_layout::<T>(req, layout, buf.len())?;
        let msize = T::MEMORY_TYPE.element_size() as u64;
        let mut data = Vec::with_capacity(req.num_elements() as usize * var.etype.element_size());
        for run in &layout.runs {
            let (a, b) = ((run.offset / msize) as usize, (run.end() / msize) as usize);
            encode_values_into(var.etype, buf[a..b].iter().copied(), &mut data)?;
        }
        let rec_end = self.record_end(req)?;
        if rec_end > u32::MAX as u64 - 1 {
            return Err(Error::Overflow(format!("record {rec_end}")));
        }
        Ok((extents, data, rec_end))
    }

    /// Validates a read and returns its file extents and memory layout.
    fn prepare_get<T: MemValue>(
        &self,
        req: &AccessRequest,
        layout: Option<&MemoryLayout>,
        buf_len: usize,
    ) -> Result<(Vec<Extent>, MemoryLayout)> {
        self.require_data()?;
        let end = self.record_end(req)?;
        if end > self.numrecs() {
            return Err(Error::OutOfBounds(format!("record {} of {}", end - 1, self.numrecs())));
        }
        let extents = flatten_file(&self.schema, req)?;
        let layout = self.memory_layout::<T>(req, layout, buf_len)?;
        Ok((extents, layout))
    }

    fn scatter<T: MemValue>(&self, var_id: usize, layout: &MemoryLayout, bytes: &[u8], buf: &mut [T]) -> Result<()> {
        let etype = self.schema.var(var_id)?.etype;
        let esize = etype.element_size();
        let msize = T::MEMORY_TYPE.element_size() as u64;
        let mut elems = bytes.chunks_exact(esize);
        for run in &layout.runs {
            let (a, b) = ((run.offset / msize) as usize, (run.end() / msize) as usize);
            for slot in &mut buf[a..b] {
                let raw = elems.next().expect("extents and layout describe the same element count");
                *slot = T::from_scalar(get_scalar(etype, raw))?;
            }
        }
        Ok(())
    }

    fn check_collective_args(&self, op: Op, req: &AccessRequest, mtype_size: usize) -> Result<()> {
        if !self.check_args {
            return Ok(());
        }
        let mut digest = vec![op as u8, mtype_size as u8, req.count.len() as u8];
        digest.extend_from_slice(&(req.var_id as u64).to_le_bytes());
        if !self.comm.all_match_tagged("access_args", &digest)? {
            return Err(Error::CollectiveMismatch("collective access with differing arguments".into()));
        }
        Ok(())
    }

    /// Collective: raises the agreed record count to `end`, filling the new
    /// records when fill mode is on.
    fn extend_records(&mut self, end: u64) -> Result<()> {
        if end <= self.schema.numrecs {
            return Ok(());
        }
        let old = self.schema.numrecs;
        if self.fill {
            let status = if self.comm.is_root() {
                let mut s = self.schema.clone();
                s.numrecs = end;
                (|| {
                    for r in old..end {
                        for (_, var) in s.record_vars() {
                            self.write_slot(&s, var, var.begin + r * s.recsize, true)?;
                        }
                    }
                    Ok(())
                })()
            } else {
                Ok(())
            };
            agree(&self.comm, "record_fill", status)?;
        }
        self.schema.numrecs = end;
        self.numrecs_local = self.numrecs_local.max(end);
        Ok(())
    }

    fn put_collective<T: MemValue>(&mut self, req: AccessRequest, layout: Option<&MemoryLayout>, buf: &[T]) -> Result<()> {
        let local = self.prepare_put(&req, layout, buf);
        self.check_collective_args(Op::Put, &req, T::MEMORY_TYPE.element_size())?;
        let ends = agree_value(&self.comm, "put_begin", local.as_ref().map(|p| p.2).map_err(Clone::clone))?;
        let (extents, data, _) = local?;
        self.extend_records(ends.into_iter().max().unwrap_or(0))?;
        let plan = plan_two_phase(&self.comm, &extents, &self.hints, Direction::Write)?;
        collective_write(&self.comm, &self.file, &plan, &data)?;
        Ok(())
    }

    fn put_independent<T: MemValue>(&mut self, req: AccessRequest, layout: Option<&MemoryLayout>, buf: &[T]) -> Result<()> {
        let (extents, data, end) = self.prepare_put(&req, layout, buf)?;
        independent_write(&self.file, &extents, &data)?;
        self.numrecs_local = self.numrecs_local.max(end);
        Ok(())
    }

    fn get_collective<T: MemValue>(&self, req: AccessRequest, layout: Option<&MemoryLayout>, buf: &mut [T]) -> Result<()> {
        let local = self.prepare_get::<T>(&req, layout, buf.len());
        self.check_collective_args(Op::Get, &req, T::MEMORY_TYPE.element_size())?;
        agree(&self.comm, "get_begin", local.as_ref().map(|_| ()).map_err(Clone::clone))?;
        let (extents, layout) = local?;
        let plan = plan_two_phase(&self.comm, &extents, &self.hints, Direction::Read)?;
        let bytes = collective_read(&self.comm, &self.file, &plan)?;
        self.scatter(req.var_id, &layout, &bytes, buf)
    }

    fn get_independent<T: MemValue>(&self, req: AccessRequest, layout: Option<&MemoryLayout>, buf: &mut [T]) -> Result<()> {
        let (extents, layout) = self.prepare_get::<T>(&req, layout, buf.len())?;
        let bytes = independent_read(&self.file, &extents)?;
        self.scatter(req.var_id, &layout, &bytes, buf)
    }

    // ---- high-level writes ------------------------------------------------

    pub fn put_var1<T: MemValue>(&mut self, var_id: usize, index: &[u64], value: T) -> Result<()> {
        let req = self.request(var_id, index, &vec![1; index.len()]);
        self.put_independent(req, None, &[value])
    }

    pub fn put_var1_all<T: MemValue>(&mut self, var_id: usize, index: &[u64], value: T) -> Result<()> {
        let req = self.request(var_id, index, &vec![1; index.len()]);
        self.put_collective(req, None, &[value])
    }

    /// Writes a whole variable; for record variables, the records currently
    /// visible to this participant.
    pub fn put_var<T: MemValue>(&mut self, var_id: usize, buf: &[T]) -> Result<()> {
        let req = self.whole(var_id)?;
        self.put_independent(req, None, buf)
    }

    pub fn put_var_all<T: MemValue>(&mut self, var_id: usize, buf: &[T]) -> Result<()> {
        let req = self.whole(var_id)?;
        self.put_collective(req, None, buf)
    }

    pub fn put_vara<T: MemValue>(&mut self, var_id: usize, start: &[u64], count: &[u64], buf: &[T]) -> Result<()> {
        let req = self.request(var_id, start, count);
        self.put_independent(req, None, buf)
    }

    pub fn put_vara_all<T: MemValue>(&mut self, var_id: usize, start: &[u64], count: &[u64], buf: &[T]) -> Result<()> {
        let req = self.request(var_id, start, count);
        self.put_collective(req, None, buf)
    }

    pub fn put_vars<T: MemValue>(
        &mut self,
        var_id: usize,
        start: &[u64],
        count: &[u64],
        stride: &[u64],
        buf: &[T],
    ) -> Result<()> {
        let req = self.request(var_id, start, count).with_stride(stride);
        self.put_independent(req, None, buf)
    }

    pub fn put_vars_all<T: MemValue>(
        &mut self,
        var_id: usize,
        start: &[u64],
        count: &[u64],
        stride: &[u64],
        buf: &[T],
    ) -> Result<()> {
        let req = self.request(var_id, start, count).with_stride(stride);
        self.put_collective(req, None, buf)
    }

    /// Mapped strided write: element `(i0, .., ik)` of the selection is
    /// taken from `buf[sum(i_d * imap[d])]`.
    pub fn put_varm<T: MemValue>(
        &mut self,
        var_id: usize,
        start: &[u64],
        count: &[u64],
        stride: Option<&[u64]>,
        imap: &[i64],
        buf: &[T],
    ) -> Result<()> {
        let mut req = self.request(var_id, start, count).with_imap(imap);
        req.stride = stride.map(<[u64]>::to_vec);
        self.put_independent(req, None, buf)
    }

    pub fn put_varm_all<T: MemValue>(
        &mut self,
        var_id: usize,
        start: &[u64],
        count: &[u64],
        stride: Option<&[u64]>,
        imap: &[i64],
        buf: &[T],
    ) -> Result<()> {
        let mut req = self.request(var_id, start, count).with_imap(imap);
        req.stride = stride.map(<[u64]>::to_vec);
        self.put_collective(req, None, buf)
    }

    // ---- high-level reads -------------------------------------------------

    pub fn get_var1<T: MemValue>(&self, var_id: usize, index: &[u64]) -> Result<T> {
        let mut out = [T::default()];
        self.get_independent(self.request(var_id, index, &vec![1; index.len()]), None, &mut out)?;
        Ok(out[0])
    }

    pub fn get_var1_all<T: MemValue>(&self, var_id: usize, index: &[u64]) -> Result<T> {
        let mut out = [T::default()];
        self.get_collective(self.request(var_id, index, &vec![1; index.len()]), None, &mut out)?;
        Ok(out[0])
    }

    pub fn get_var<T: MemValue>(&self, var_id: usize, buf: &mut [T]) -> Result<()> {
        self.get_independent(self.whole(var_id)?, None, buf)
    }

    pub fn get_var_all<T: MemValue>(&self, var_id: usize, buf: &mut [T]) -> Result<()> {
        self.get_collective(self.whole(var_id)?, None, buf)
    }

    pub fn get_vara<T: MemValue>(&self, var_id: usize, start: &[u64], count: &[u64], buf: &mut [T]) -> Result<()> {
        self.get_independent(self.request(var_id, start, count), None, buf)
    }

    pub fn get_vara_all<T: MemValue>(&self, var_id: usize, start: &[u64], count: &[u64], buf: &mut [T]) -> Result<()> {
        self.get_collective(self.request(var_id, start, count), None, buf)
    }

    pub fn get_vars<T: MemValue>(
        &self,
        var_id: usize,
        start: &[u64],
        count: &[u64],
        stride: &[u64],
        buf: &mut [T],
    ) -> Result<()> {
        self.get_independent(self.request(var_id, start, count).with_stride(stride), None, buf)
    }

    pub fn get_vars_all<T: MemValue>(
        &self,
        var_id: usize,
        start: &[u64],
        count: &[u64],
        stride: &[u64],
        buf: &mut [T],
    ) -> Result<()> {
        self.get_collective(self.request(var_id, start, count).with_stride(stride), None, buf)
    }

    pub fn get_varm<T: MemValue>(
        &self,
        var_id: usize,
        start: &[u64],
        count: &[u64],
        stride: Option<&[u64]>,
        imap: &[i64],
        buf: &mut [T],
    ) -> Result<()> {
        let mut req = self.request(var_id, start, count).with_imap(imap);
        req.stride = stride.map(<[u64]>::to_vec);
        self.get_independent(req, None, buf)
    }

    pub fn get_varm_all<T: MemValue>(
        &self,
        var_id: usize,
        start: &[u64],
        count: &[u64],
        stride: Option<&[u64]>,
        imap: &[i64],
        buf: &mut [T],
    ) -> Result<()> {
        let mut req = self.request(var_id, start, count).with_imap(imap);
        req.stride = stride.map(<[u64]>::to_vec);
        self.get_collective(req, None, buf)
    }

    // ---- flexible access --------------------------------------------------

    fn flex_request(&self, var_id: usize, start: &[u64], count: &[u64], stride: Option<&[u64]>) -> AccessRequest {
        let mut req = self.request(var_id, start, count);
        req.stride = stride.map(<[u64]>::to_vec);
        req
    }

    /// Collective write whose buffer placement is given by `layout` (byte
    /// runs in element-visit order) instead of an element map. A
    /// single-run layout is encoded straight from the buffer.
    pub fn put_vara_all_flex<T: MemValue>(
        &mut self,
        var_id: usize,
        start: &[u64],
        count: &[u64],
        stride: Option<&[u64]>,
        layout: &MemoryLayout,
        buf: &[T],
    ) -> Result<()> {
        let req = self.flex_request(var_id, start, count, stride);
        self.put_collective(req, Some(layout), buf)
    }

    pub fn put_vara_flex<T: MemValue>(
        &mut self,
        var_id: usize,
        start: &[u64],
        count: &[u64],
        stride: Option<&[u64]>,
        layout: &MemoryLayout,
        buf: &[T],
    ) -> Result<()> {
        let req = self.flex_request(var_id, start, count, stride);
        self.put_independent(req, Some(layout), buf)
    }

    pub fn get_vara_all_flex<T: MemValue>(
        &self,
        var_id: usize,
        start: &[u64],
        count: &[u64],
        stride: Option<&[u64]>,
        layout: &MemoryLayout,
        buf: &mut [T],
    ) -> Result<()> {
        self.get_collective(self.flex_request(var_id, start, count, stride), Some(layout), buf)
    }

    pub fn get_vara_flex<T: MemValue>(
        &self,
        var_id: usize,
        start: &[u64],
        count: &[u64],
        stride: Option<&[u64]>,
        layout: &MemoryLayout,
        buf: &mut [T],
    ) -> Result<()> {
        self.get_independent(self.flex_request(var_id, start, count, stride), Some(layout), buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::spawn;

    #[test]
    fn definition_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.nc");
        spawn(2, |comm| {
            let mut ds = Dataset::create(&comm, &path, HintSet::new()).unwrap();
            let time = ds.def_dim("time", UNLIMITED).unwrap();
            let x = ds.def_dim("x", 4).unwrap();
            let tt = ds.def_var("tt", ExternalType::Double, &[time, x]).unwrap();
            assert_eq!(tt, 0);
            assert!(ds.schema().is_record_var(ds.schema().var(tt).unwrap()));
            assert_eq!(ds.inq_varid("tt").unwrap(), 0);
            let info = ds.inq_var(0).unwrap();
            assert_eq!((info.name.as_str(), info.etype, info.ndims, info.dim_ids), ("tt", ExternalType::Double, 2, vec![0, 1]));
            assert_eq!(ds.inq_unlimdim(), Some(0));
            assert!(matches!(ds.def_dim("x", 3), Err(Error::DuplicateName(_))));
            assert!(matches!(ds.def_dim("t2", UNLIMITED), Err(Error::BadDimension(_))));
            assert!(matches!(ds.def_var("bad", ExternalType::Int, &[x, time]), Err(Error::BadDimension(_))));
            assert!(matches!(ds.def_var("bad", ExternalType::Int, &[7]), Err(Error::BadDimension(_))));
            assert!(matches!(ds.put_vara(tt, &[0, 0], &[1, 4], &[0.0f64; 4]), Err(Error::NotInDataMode)));
            ds.enddef().unwrap();
            assert!(matches!(ds.def_dim("y", 2), Err(Error::NotInDefineMode)));
            ds.close().unwrap();
        })
        .unwrap();
    }

    #[test]
    fn agree_value_collects_and_propagates() {
        let r = spawn(3, |comm| agree_value(&comm, "t", Ok(comm.rank() as u64 * 10))).unwrap();
        assert!(r.iter().all(|v| v.as_ref().unwrap() == &vec![0, 10, 20]));
        let r = spawn(3, |comm| {
            let local = if comm.rank() == 2 { Err(Error::RangeError) } else { Ok(1) };
            agree_value(&comm, "t", local)
        })
        .unwrap();
        assert!(r.iter().all(|v| v == &Err(Error::RangeError)));
    }
}
