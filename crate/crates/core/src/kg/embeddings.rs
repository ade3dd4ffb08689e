use std::collections::HashSet;
use std::path::Path;

use super::{EntityId, KgError, KnowledgeGraph};

/// Per-entity embedding vectors. Entities without a row are absent rather
/// than zero-filled.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f64>,
    present: Vec<bool>,
}

impl EmbeddingTable {
    /// Builds a table directly; `rows[i]` belongs to entity `i`.
    pub fn from_rows(dim: usize, rows: Vec<Option<Vec<f64>>>) -> Self {
        let mut data = vec![0.0; rows.len() * dim];
        let mut present = vec![false; rows.len()];
        for (i, row) in rows.into_iter().enumerate() {
            if let Some(v) = row {
                assert_eq!(v.len(), dim, "embedding row {i} has wrong width");
                data[i * dim..(i + 1) * dim].copy_from_slice(&v);
                present[i] = true;
            }
        }
        Self { dim, data, present }
    }

    pub(crate) fn parse(text: &str, path: &Path, graph: &KnowledgeGraph) -> Result<(Self, usize), KgError> {
        let malformed = |line: usize, reason: String| KgError::Malformed {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| malformed(1, "missing `N d_e` header".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let parsed: Option<(usize, usize)> = match parts.as_slice() {
            [n, d] => n.parse().ok().zip(d.parse().ok()),
            _ => None,
        };
        let (declared, dim) = parsed.ok_or_else(|| malformed(hline + 1, format!("bad header `{header}`")))?;
        if dim == 0 {
            return Err(malformed(hline + 1, "embedding dimension must be positive".into()));
        }

        let mut table = Self {
            dim,
            data: vec![0.0; graph.len() * dim],
            present: vec![false; graph.len()],
        };
        let mut seen: HashSet<&str> = HashSet::new();
        let mut rows = 0;
        let mut unused = 0;
        for (i, line) in lines {
            let lineno = i + 1;
            let mut fields = line.split_whitespace();
            let name = fields.next().expect("non-blank line has a token");
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| malformed(lineno, format!("bad value `{f}` for `{name}`")))
                })
                .collect::<Result<_, _>>()?;
            if values.len() != dim {
                return Err(KgError::Dimension {
                    path: path.to_path_buf(),
                    line: lineno,
                    entity: name.to_string(),
                    expected: dim,
                    found: values.len(),
                });
            }
            if !seen.insert(name) {
                return Err(KgError::DuplicateEmbedding {
                    path: path.to_path_buf(),
                    line: lineno,
                    entity: name.to_string(),
                });
            }
            rows += 1;
            match graph.id(name) {
                Some(id) => {
                    table.data[id.index() * dim..(id.index() + 1) * dim].copy_from_slice(&values);
                    table.present[id.index()] = true;
                }
                None => unused += 1,
            }
        }
        if rows != declared {
            return Err(KgError::RowCount {
                path: path.to_path_buf(),
                declared,
                found: rows,
            });
        }
        Ok((table, unused))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.present.len()
    }

    pub fn is_empty(&self) -> bool {
        self.present.is_empty()
    }

    pub fn contains(&self, id: EntityId) -> bool {
        self.present.get(id.index()).copied().unwrap_or(false)
    }

    pub fn get(&self, id: EntityId) -> Option<&[f64]> {
        self.contains(id)
            .then(|| &self.data[id.index() * self.dim..(id.index() + 1) * self.dim])
    }
}
