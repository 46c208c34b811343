//! Query-to-reference correspondence files.
//!
//! CSV with either `query_index,reference_index` or
//! `query_t_us,reference_t_us` rows. A header row selects the form; without
//! one the rows are window indices. Optional `# query_traverse: N` and
//! `# reference_traverse: N` comments name the traverses.

use std::path::Path;

use super::IngestError;
use crate::event_core::WindowSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignmentForm {
    Indices,
    Timestamps,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentFile {
    pub form: AlignmentForm,
    /// Raw `(query, reference)` values in file order.
    pub rows: Vec<(u64, u64)>,
    pub query_traverse: Option<u32>,
    pub reference_traverse: Option<u32>,
}

impl AlignmentFile {
    pub fn identity(n: u64) -> Self {
        Self {
            form: AlignmentForm::Indices,
            rows: (0..n).map(|i| (i, i)).collect(),
            query_traverse: None,
            reference_traverse: None,
        }
    }

    /// Resolves rows to `(query window, reference window)` pairs and checks bounds.
    ///
    /// Timestamps map to the window holding them under the `(t_i, t_i + δ]`
    /// convention of the respective traverse.
    pub fn to_indices(
        &self,
        query: &WindowSpec,
        reference: &WindowSpec,
        query_windows: u64,
        reference_windows: u64,
    ) -> Result<Vec<(u64, u64)>, IngestError> {
        self.rows
            .iter()
            .enumerate()
            .map(|(row, &(q, r))| {
                let (qi, ri) = match self.form {
                    AlignmentForm::Indices => (q, r),
                    AlignmentForm::Timestamps => {
                        let conv = |spec: &WindowSpec, t: u64, which: &'static str| {
                            spec.window_of(t).ok_or(IngestError::AlignmentOutOfRange {
                                row,
                                which,
                                index: t,
                                bound: 0,
                            })
                        };
                        (conv(query, q, "query")?, conv(reference, r, "reference")?)
                    }
                };
                if qi >= query_windows {
                    return Err(IngestError::AlignmentOutOfRange {
                        row,
                        which: "query",
                        index: qi,
                        bound: query_windows,
                    });
                }
                if ri >= reference_windows {
                    return Err(IngestError::AlignmentOutOfRange {
                        row,
                        which: "reference",
                        index: ri,
                        bound: reference_windows,
                    });
                }
                Ok((qi, ri))
            })
            .collect()
    }
}

pub fn parse_alignment(path: impl AsRef<Path>) -> Result<AlignmentFile, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    parse_alignment_str(&text)
}

pub fn parse_alignment_str(text: &str) -> Result<AlignmentFile, IngestError> {
    let mut form = None;
    let mut rows = Vec::new();
    let mut query_traverse = None;
    let mut reference_traverse = None;
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| IngestError::Alignment { line: line_no, message };
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once(':') {
                let parse = |v: &str| v.trim().parse::<u32>().map_err(|_| bad(format!("bad traverse id {v:?}")));
                match key.trim() {
                    "query_traverse" => query_traverse = Some(parse(value)?),
                    "reference_traverse" => reference_traverse = Some(parse(value)?),
                    _ => {}
                }
            }
            continue;
        }
        let header_form = match line.replace(' ', "").as_str() {
            "query_index,reference_index" => Some(AlignmentForm::Indices),
            "query_t_us,reference_t_us" => Some(AlignmentForm::Timestamps),
            _ => None,
        };
        if let Some(h) = header_form {
            match form {
                Some(f) if f != h => return Err(IngestError::MixedForms { line: line_no }),
                Some(_) => {}
                None if !rows.is_empty() => return Err(IngestError::MixedForms { line: line_no }),
                None => form = Some(h),
            }
            continue;
        }
        let (q, r) = line
            .split_once(',')
            .ok_or_else(|| bad("expected two comma-separated values".into()))?;
        let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad(format!("invalid value {:?}", s.trim())));
        rows.push((num(q)?, num(r)?));
    }
    Ok(AlignmentFile {
        form: form.unwrap_or(AlignmentForm::Indices),
        rows,
        query_traverse,
        reference_traverse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_rows() {
        let a = parse_alignment_str("query_index,reference_index\n0,0\n1,1\n2,2\n").unwrap();
        assert_eq!(a, AlignmentFile::identity(3));
    }

    #[test]
    fn timestamps_convert_to_windows() {
        let a = parse_alignment_str("# query_traverse: 2\nquery_t_us,reference_t_us\n1000,2000\n").unwrap();
        assert_eq!(a.form, AlignmentForm::Timestamps);
        assert_eq!(a.query_traverse, Some(2));
        let spec = WindowSpec::new(500, 0).unwrap();
        assert_eq!(a.to_indices(&spec, &spec, 10, 10).unwrap(), vec![(1, 3)]);
    }

    #[test]
    fn bounds_and_form_errors() {
        let a = parse_alignment_str("0,5\n").unwrap();
        let spec = WindowSpec::new(10, 0).unwrap();
        assert!(matches!(
            a.to_indices(&spec, &spec, 1, 5),
            Err(IngestError::AlignmentOutOfRange { which: "reference", index: 5, bound: 5, .. })
        ));
        assert!(matches!(
            parse_alignment_str("query_index,reference_index\n0,0\nquery_t_us,reference_t_us\n5,5\n"),
            Err(IngestError::MixedForms { line: 3 })
        ));
        assert!(matches!(
            parse_alignment_str("0,0\nquery_t_us,reference_t_us\n"),
            Err(IngestError::MixedForms { line: 2 })
        ));
        assert!(matches!(parse_alignment_str("0;0\n"), Err(IngestError::Alignment { line: 1, .. })));
    }
}
