//! Text format: a `V dim` header line, then `word v_1 ... v_dim` per line
//! with six decimal places.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use super::EmbeddingStore;
use crate::error::{Error, Result};

pub fn write_text<W: Write>(mut writer: W, store: &EmbeddingStore) -> Result<()> {
    if store.has_subwords() {
        return Err(Error::InvalidArgument(
            "the text format cannot hold subword tables; use the binary format".into(),
        ));
    }
    writeln!(writer, "{} {}", store.len(), store.dim())?;
    for (id, word) in store.words().iter().enumerate() {
        write!(writer, "{word}")?;
        for v in store.row(id) {
            write!(writer, " {v:.6}")?;
        }
        writeln!(writer)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_text<R: BufRead>(reader: R) -> Result<EmbeddingStore> {
    let mut lines = reader.lines();

    let header = lines
        .next()
        .ok_or_else(|| Error::parse(1, "missing header"))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [n_words, dim] = fields[..] else {
        return Err(Error::parse(1, "header must be `<words> <dim>`"));
    };
    let parse_header = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(1, format!("invalid header field `{s}`")))
    };
    let (n_words, dim) = (parse_header(n_words)?, parse_header(dim)?);
    if dim == 0 {
        return Err(Error::parse(1, "dimension must be positive"));
    }

    let mut words = Vec::with_capacity(n_words);
    let mut seen = HashSet::with_capacity(n_words);
    let mut table = Vec::with_capacity(n_words * dim);

    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else {
            if words.len() == n_words {
                continue;
            }
            return Err(Error::parse(line_no, "empty line"));
        };
        if words.len() == n_words {
            return Err(Error::parse(
                line_no,
                format!("header declares {n_words} words but more rows follow"),
            ));
        }

        let start = table.len();
        for value in parts {
            let value: f32 = value
                .parse()
                .map_err(|_| Error::parse(line_no, format!("invalid number `{value}`")))?;
            if !value.is_finite() {
                return Err(Error::parse(line_no, "non-finite value"));
            }
            table.push(value);
        }
        if table.len() - start != dim {
            return Err(Error::parse(
                line_no,
                format!("expected {dim} values, found {}", table.len() - start),
            ));
        }
        if !seen.insert(word.to_owned()) {
            return Err(Error::parse(line_no, format!("duplicate word `{word}`")));
        }
        words.push(word.to_owned());
    }

    if words.len() != n_words {
        return Err(Error::parse(
            words.len() + 2,
            format!("header declares {n_words} words, found {}", words.len()),
        ));
    }

    EmbeddingStore::new(words, dim, table)
}
