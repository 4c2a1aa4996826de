use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::domain::EmbeddingTable;
use crate::error::{Error, Result};

/// Loads a GloVe-style text table: `token v1 v2 ... ve` per line.
///
/// The dimension is taken from the first non-blank line. Tokens cannot contain
/// whitespace; multi-word phrases are resolved at lookup time.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file))
}

pub fn read_embeddings(reader: impl BufRead) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedInput(format!("line {}: {e}", lineno + 1)))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(|f| {
                f.parse::<f32>()
                    .map_err(|e| Error::MalformedInput(format!("line {}: {f:?}: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<f32>>>()?;
        let table = match &mut table {
            Some(t) => t,
            None => table.insert(EmbeddingTable::new(values.len()).map_err(|_| {
                Error::MalformedInput(format!(
                    "line {}: token {token:?} has no values",
                    lineno + 1
                ))
            })?),
        };
        table.insert(token, values)?;
    }
    table.ok_or_else(|| Error::MalformedInput("embedding table is empty".into()))
}

pub fn embeddings_to_string(table: &EmbeddingTable) -> String {
    let mut out = String::new();
    for (token, vector) in table.iter() {
        out.push_str(token);
        for v in vector {
            out.push(' ');
            // `{:?}` on f32 prints the shortest string that parses back to the same bits.
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    super::write_atomic(path.as_ref(), embeddings_to_string(table).as_bytes())
}
