use std::fs::{File, OpenOptions};
use std::io;
use std::path::Path;
use std::sync::Arc;

use super::stats::EngineStats;
use crate::error::Result;

/// A file opened by one participant, performing positioned I/O and
/// recording every operation in the group's counters.
#[derive(Debug)]
pub struct SharedFile {
    file: File,
    stats: Arc<EngineStats>,
}

impl SharedFile {
    pub fn create(path: &Path, stats: Arc<EngineStats>) -> Result<Self> {
        let file = OpenOptions::new().read(true).write(true).create(true).truncate(true).open(path)?;
        Ok(SharedFile { file, stats })
    }

    pub fn open(path: &Path, writable: bool, stats: Arc<EngineStats>) -> Result<Self> {
        let file = OpenOptions::new().read(true).write(writable).open(path)?;
        Ok(SharedFile { file, stats })
    }

    pub fn len(&self) -> Result<u64> {
        Ok(self.file.metadata()?.len())
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.len()? == 0)
    }

    /// One contiguous data read. Bytes past the end of file read as zero.
    pub fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        self.stats.count_read(buf.len() as u64);
        read_full(&self.file, offset, buf)?;
        Ok(())
    }

    /// One contiguous data write.
    pub fn write_at(&self, offset: u64, data: &[u8]) -> Result<()> {
        self.stats.count_write(data.len() as u64);
        write_full(&self.file, offset, data)?;
        Ok(())
    }

    /// Reads up to `max` bytes of header from the start of the file.
    pub(crate) fn read_header(&self, max: usize) -> Result<Vec<u8>> {
        self.stats.count_header_read();
        let len = self.len()?.min(max as u64) as usize;
        let mut buf = vec![0u8; len];
        read_full(&self.file, 0, &mut buf)?;
        Ok(buf)
    }

    pub(crate) fn write_header(&self, offset: u64, bytes: &[u8]) -> Result<()> {
        self.stats.count_header_write();
        write_full(&self.file, offset, bytes)?;
        Ok(())
    }

    /// Grows the file to at least `size` bytes; never shrinks it.
    pub(crate) fn extend_to(&self, size: u64) -> Result<()> {
        if self.len()? < size {
            self.file.set_len(size)?;
        }
        Ok(())
    }

    pub(crate) fn sync(&self) -> Result<()> {
        self.file.sync_data()?;
        Ok(())
    }
}

#[cfg(unix)]
fn read_full(file: &File, mut offset: u64, mut buf: &mut [u8]) -> io::Result<()> {
    use std::os::unix::fs::FileExt;
    while !buf.is_empty() {
        match file.read_at(buf, offset) {
            Ok(0) => {
                buf.fill(0);
                return Ok(());
            }
            Ok(n) => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

#[cfg(unix)]
fn write_full(file: &File, offset: u64, data: &[u8]) -> io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.write_all_at(data, offset)
}

#[cfg(windows)]
fn read_full(file: &File, mut offset: u64, mut buf: &mut [u8]) -> io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset) {
            Ok(0) => {
                buf.fill(0);
                return Ok(());
            }
            Ok(n) => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

#[cfg(windows)]
fn write_full(file: &File, mut offset: u64, mut data: &[u8]) -> io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !data.is_empty() {
        let n = file.seek_write(data, offset)?;
        data = &data[n..];
        offset += n as u64;
    }
    Ok(())
}
