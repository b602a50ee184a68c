//! Classic (CDF-1) netCDF files with a parallel access API.
//!
//! A group of cooperating participants opens one shared file. The header is
//! read by the root participant and broadcast; every participant keeps a
//! local copy of the schema. Data access requests (single element, whole
//! array, subarray, strided subarray and mapped strided subarray) are
//! flattened into file extents and executed either independently or through
//! two-phase collective I/O, where a few aggregators issue large contiguous
//! file operations on behalf of everyone.
//!
//! ```no_run
//! use pncdf::{dataset::Dataset, engine::{spawn, HintSet}, ExternalType};
//!
//! let results = spawn(4, |comm| -> pncdf::Result<()> {
//!     let rank = comm.rank() as u64;
//!     let mut ds = Dataset::create(&comm, "out.nc", HintSet::new())?;
//!     let z = ds.def_dim("z", 4)?;
//!     let x = ds.def_dim("x", 8)?;
//!     let tt = ds.def_var("tt", ExternalType::Double, &[z, x])?;
//!     ds.enddef()?;
//!     let plane: Vec<f64> = (0..8).map(|i| (rank * 8 + i) as f64).collect();
//!     ds.put_vara_all(tt, &[rank, 0], &[1, 8], &plane)?;
//!     ds.close()
//! })
//! .unwrap();
//! assert!(results.iter().all(|r| r.is_ok()));
//! ```

pub mod access;
pub mod bench;
pub mod codec;
pub mod dataset;
pub mod dump;
pub mod engine;
pub mod error;
pub mod format;

pub use codec::{AttrValues, MemValue, MemoryType};
pub use error::{Error, Result};
pub use format::{Attribute, Dimension, ExternalType, Schema, Variable};
