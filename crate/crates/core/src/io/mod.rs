//! Corpus streaming and file formats.

mod corpus;
mod tokenizer_file;

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

pub use corpus::{read_documents, stream_documents, CorpusFormat, CorpusSource, DocumentStream};
pub use tokenizer_file::{from_json_str, load_tokenizer, save_tokenizer, to_json_string};

use crate::error::Result;

/// Writes `path` through a temporary file in the same directory that is
/// renamed over the target once `write` succeeds.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Opens a file, transparently decompressing gzip input.
pub(crate) fn open_maybe_gzip(path: &Path) -> Result<Box<dyn Read + Send>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let head = std::io::Cursor::new(magic[..n].to_vec());
    let chained = head.chain(file);
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(flate2::read::MultiGzDecoder::new(chained)))
    } else {
        Ok(Box::new(chained))
    }
}
