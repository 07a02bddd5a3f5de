//! Flat binary checkpoints.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SADP"
//! 4       4     format version (u32 LE, currently 1)
//! 8       4     vocab_size (u32 LE)
//! 12      4     embedding width d (u32 LE)
//! 16      8·P   parameters, f64 LE, in ModelParams layout
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelParams, TrainError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SADP";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(params.vocab_size() as u32).to_le_bytes())?;
    out.write_all(&(params.dim() as u32).to_le_bytes())?;
    for v in params.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ModelParams, TrainError> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if &header[..4] != CHECKPOINT_MAGIC {
        return Err(TrainError::Shape("not a checkpoint (bad magic)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != VERSION {
        return Err(TrainError::Shape(format!("unsupported checkpoint version {}", word(4))));
    }
    let (vocab, dim) = (word(8) as usize, word(12) as usize);
    let mut values = Vec::with_capacity(ModelParams::param_count(vocab, dim));
    let mut buf = [0u8; 8];
    for _ in 0..ModelParams::param_count(vocab, dim) {
        input.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    ModelParams::from_values(vocab, dim, values)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> io::Result<()> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, TrainError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
