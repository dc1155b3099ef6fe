//! Per-class embedding tables.
//!
//! The table holds one row per object class followed by one row per predicate
//! class. It supplies node features and the semantic costs used by graph edit
//! distance.
//!
//! Two on-disk encodings are supported:
//!
//! * text: a header line `dim=<d> classes=<k> objects=<m>` followed by `k`
//!   lines `<class_name> <d floats>` separated by single spaces. Floats are
//!   written in shortest round-trip form, so write/read is bit-exact.
//! * binary: magic `SCNREMB1`, then little-endian `u32` dim, classes and
//!   objects, then per class a `u16` name length, the UTF-8 name and `dim`
//!   little-endian `f64` values.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::numeric::exact_sum;
use crate::rng::{stream_rng, Stream};

pub const BINARY_MAGIC: &[u8; 8] = b"SCNREMB1";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read embedding table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding table format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("embedding table validation failed: {0}")]
    Validation(String),
}

type Result<T> = std::result::Result<T, EmbeddingError>;

fn format_err(line: usize, message: impl Into<String>) -> EmbeddingError {
    EmbeddingError::Format {
        line,
        message: message.into(),
    }
}

/// Dense class embeddings plus the class vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassEmbeddingTable {
    dim: usize,
    object_class_count: usize,
    class_names: Vec<String>,
    vectors: Vec<f64>,
    lookup: HashMap<String, usize>,
}

impl ClassEmbeddingTable {
    /// Builds and validates a table. Rows `0..object_class_count` are object
    /// classes, the remainder predicate classes.
    pub fn new(
        dim: usize,
        object_class_count: usize,
        class_names: Vec<String>,
        vectors: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(EmbeddingError::Validation("dimension must be positive".into()));
        }
        if vectors.len() != class_names.len() * dim {
            return Err(EmbeddingError::Validation(format!(
                "{} classes of dimension {dim} need {} values, got {}",
                class_names.len(),
                class_names.len() * dim,
                vectors.len()
            )));
        }
        if object_class_count > class_names.len() {
            return Err(EmbeddingError::Validation(format!(
                "{object_class_count} object classes declared but only {} classes present",
                class_names.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(class_names.len());
        for (i, name) in class_names.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(EmbeddingError::Validation(format!(
                    "class name {name:?} must be non-empty without whitespace"
                )));
            }
            if lookup.insert(name.clone(), i).is_some() {
                return Err(EmbeddingError::Validation(format!("duplicate class name `{name}`")));
            }
            let row = &vectors[i * dim..(i + 1) * dim];
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::Validation(format!(
                    "class `{name}` has a non-finite entry"
                )));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(EmbeddingError::Validation(format!(
                    "class `{name}` has a zero embedding"
                )));
            }
        }
        Ok(Self {
            dim,
            object_class_count,
            class_names,
            vectors,
            lookup,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn object_class_count(&self) -> usize {
        self.object_class_count
    }

    pub fn predicate_class_count(&self) -> usize {
        self.class_names.len() - self.object_class_count
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_name(&self, id: usize) -> Option<&str> {
        self.class_names.get(id).map(String::as_str)
    }

    pub fn is_object_class(&self, id: usize) -> bool {
        id < self.object_class_count
    }

    pub fn vector(&self, id: usize) -> Option<&[f64]> {
        (id < self.class_count()).then(|| &self.vectors[id * self.dim..(id + 1) * self.dim])
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn object_class_id(&self, name: &str) -> Option<usize> {
        self.class_id(name).filter(|&i| i < self.object_class_count)
    }

    pub fn predicate_class_id(&self, name: &str) -> Option<usize> {
        self.class_id(name).filter(|&i| i >= self.object_class_count)
    }

    /// Column-wise mean over object rows (`objects_only`) or all rows.
    pub fn mean_embedding(&self, objects_only: bool) -> Vec<f64> {
        let rows = if objects_only {
            self.object_class_count
        } else {
            self.class_count()
        };
        if rows == 0 {
            return vec![0.0; self.dim];
        }
        (0..self.dim)
            .map(|c| exact_sum((0..rows).map(|r| self.vectors[r * self.dim + c])) / rows as f64)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "dim={} classes={} objects={}\n",
            self.dim,
            self.class_count(),
            self.object_class_count
        );
        for (i, name) in self.class_names.iter().enumerate() {
            out.push_str(name);
            for v in self.vector(i).expect("row in range") {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| format_err(1, "missing header"))?;
        let mut fields: HashMap<&str, usize> = HashMap::new();
        for token in header.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| format_err(1, format!("malformed header token `{token}`")))?;
            let value = value
                .parse()
                .map_err(|_| format_err(1, format!("header value `{token}` is not an integer")))?;
            fields.insert(key, value);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| format_err(1, format!("header lacks `{k}=`")))
        };
        let (dim, classes, objects) = (get("dim")?, get("classes")?, get("objects")?);

        let mut names = Vec::with_capacity(classes);
        let mut vectors = Vec::with_capacity(classes * dim);
        for (idx, line) in lines {
            let lineno = idx + 1;
            let mut parts = line.split_whitespace();
            let name = parts.next().expect("non-empty line");
            let row: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>()
                        .map_err(|_| format_err(lineno, format!("`{p}` is not a number")))
                })
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(format_err(
                    lineno,
                    format!("class `{name}` has {} values, header declares dim={dim}", row.len()),
                ));
            }
            names.push(name.to_string());
            vectors.extend(row);
        }
        if names.len() != classes {
            return Err(format_err(
                1,
                format!("header declares {classes} classes, found {}", names.len()),
            ));
        }
        Self::new(dim, objects, names, vectors)
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.vectors.len() * 8);
        out.extend_from_slice(BINARY_MAGIC);
        for v in [self.dim, self.class_count(), self.object_class_count] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for (i, name) in self.class_names.iter().enumerate() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for v in self.vector(i).expect("row in range") {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn parse_binary(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor { bytes, pos: 0 };
        if cur.take(8)? != BINARY_MAGIC {
            return Err(format_err(0, "bad magic"));
        }
        let dim = cur.u32()? as usize;
        let classes = cur.u32()? as usize;
        let objects = cur.u32()? as usize;
        let mut names = Vec::with_capacity(classes);
        let mut vectors = Vec::with_capacity(classes * dim);
        for _ in 0..classes {
            let len = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| format_err(0, "class name is not UTF-8"))?;
            names.push(name.to_string());
            for _ in 0..dim {
                vectors.push(f64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")));
            }
        }
        if cur.pos != bytes.len() {
            return Err(format_err(0, "trailing bytes after last class"));
        }
        Self::new(dim, objects, names, vectors)
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_binary())
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(format_err(0, "unexpected end of binary table"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)
}

/// Loads a table in either encoding, detected by the binary magic.
pub fn load_table(path: &Path) -> Result<ClassEmbeddingTable> {
    let bytes = fs::read(path).map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.starts_with(BINARY_MAGIC) {
        ClassEmbeddingTable::parse_binary(&bytes)
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| format_err(0, "table is neither binary nor UTF-8 text"))?;
        ClassEmbeddingTable::parse_text(text)
    }
}

/// Deterministic synthetic table: standard-normal rows (ChaCha8 stream
/// [`Stream::SynthTable`]) scaled to unit length. Object classes are named
/// `obj_<i>`, predicate classes `pred_<j>`.
pub fn synth_table(
    seed: u64,
    n_object: usize,
    n_predicate: usize,
    dim: usize,
) -> Result<ClassEmbeddingTable> {
    if dim < 2 || n_object == 0 || n_predicate == 0 {
        return Err(EmbeddingError::Validation(format!(
            "synthetic tables need dim >= 2 and at least one class of each kind \
             (dim={dim}, objects={n_object}, predicates={n_predicate})"
        )));
    }
    let mut rng = stream_rng(seed, Stream::SynthTable);
    let total = n_object + n_predicate;
    let mut vectors = Vec::with_capacity(total * dim);
    for _ in 0..total {
        loop {
            let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                vectors.extend(row.iter().map(|v| v / norm));
                break;
            }
        }
    }
    let names = (0..n_object)
        .map(|i| format!("obj_{i}"))
        .chain((0..n_predicate).map(|j| format!("pred_{j}")))
        .collect();
    ClassEmbeddingTable::new(dim, n_object, names, vectors)
}
