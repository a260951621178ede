//! Matrix Market (coordinate real general, 1-indexed) and plain vector / CSV files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sketchrows::sampling::{Provenance, ScoreVector};
use sketchrows::SparseRowMatrix;

use crate::CliError;

const BANNER: &str = "%%MatrixMarket matrix coordinate real general";

fn parse_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}:{line}: {msg}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn parse_matrix(path: &Path, text: &str) -> Result<SparseRowMatrix, CliError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, banner) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let fields: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(parse_err(path, 1, "missing %%MatrixMarket matrix header"));
    }
    if fields[2] != "coordinate" || fields[3] != "real" || fields[4] != "general" {
        return Err(parse_err(
            path,
            1,
            format!("unsupported format '{} {} {}', expected coordinate real general", fields[2], fields[3], fields[4]),
        ));
    }
    let mut body = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let (size_line, size) = body.next().ok_or_else(|| parse_err(path, 1, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(path, size_line, format!("bad size entry '{t}'"))))
        .collect::<Result<_, _>>()?;
    let [n, d, nnz] = dims[..] else {
        return Err(parse_err(path, size_line, "size line needs 'rows cols entries'"));
    };
    let mut triplets = Vec::with_capacity(nnz);
    for (line, l) in body {
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 3 {
            return Err(parse_err(path, line, "expected 'row col value'"));
        }
        let idx = |s: &str, bound: usize, what: &str| -> Result<usize, CliError> {
            match s.parse::<usize>() {
                Ok(v) if (1..=bound).contains(&v) => Ok(v - 1),
                _ => Err(parse_err(path, line, format!("{what} index '{s}' outside 1..={bound}"))),
            }
        };
        let (i, j) = (idx(t[0], n, "row")?, idx(t[1], d, "column")?);
        let v: f64 = t[2].parse().map_err(|_| parse_err(path, line, format!("bad value '{}'", t[2])))?;
        if !v.is_finite() {
            return Err(parse_err(path, line, "non-finite value"));
        }
        triplets.push((i, j, v));
    }
    if triplets.len() != nnz {
        return Err(parse_err(
            path,
            size_line,
            format!("header declares {nnz} entries, found {}", triplets.len()),
        ));
    }
    SparseRowMatrix::from_triplets(n, d, triplets).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn read_matrix(path: &Path) -> Result<SparseRowMatrix, CliError> {
    parse_matrix(path, &read_text(path)?)
}

pub fn format_matrix(m: &SparseRowMatrix) -> String {
    let mut s = String::with_capacity(32 * m.nnz() + 64);
    let _ = writeln!(s, "{BANNER}");
    let _ = writeln!(s, "{} {} {}", m.n_rows(), m.n_cols(), m.nnz());
    for (i, row) in m.rows().enumerate() {
        for (j, v) in row.iter() {
            let _ = writeln!(s, "{} {} {v:.16e}", i + 1, j + 1);
        }
    }
    s
}

pub fn write_matrix(path: &Path, m: &SparseRowMatrix) -> Result<(), CliError> {
    write_text(path, &format_matrix(m))
}

/// One value per line; blank lines and `%` comments are skipped.
pub fn read_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('%'))
        .map(|(i, l)| {
            let v: f64 = l.trim().parse().map_err(|_| parse_err(path, i + 1, format!("bad value '{}'", l.trim())))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(path, i + 1, "non-finite value"))
            }
        })
        .collect()
}

pub fn format_vector(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v:.16e}\n")).collect()
}

pub fn format_scores(scores: &ScoreVector) -> String {
    let mut s = String::from("row,score\n");
    for (i, v) in scores.values.iter().enumerate() {
        let _ = writeln!(s, "{i},{v:.16e}");
    }
    s
}

pub fn format_provenance(prov: &[Provenance]) -> String {
    let mut s = String::from("out_row,src_row,scale\n");
    for (i, p) in prov.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{:.16e}", p.source, p.scale);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SparseRowMatrix, CliError> {
        parse_matrix(Path::new("m.mtx"), text)
    }

    #[test]
    fn round_trip_is_exact() {
        let m = SparseRowMatrix::from_rows(&[vec![0.1, 0.0, -1.0 / 3.0], vec![0.0, 0.0, 0.0], vec![1e-300, 7.0, 0.0]])
            .unwrap();
        assert_eq!(parse(&format_matrix(&m)).unwrap(), m);
    }

    #[test]
    fn comments_and_case_are_accepted() {
        let m = parse("%%MatrixMarket MATRIX coordinate Real General\n% note\n2 2 1\n\n2 1 3.5\n").unwrap();
        assert_eq!(m.row(1).to_dense(2), vec![3.5, 0.0]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse(&format!("{BANNER}\n2 2 2\n1 1 1.0\n3 1 1.0\n")).unwrap_err();
        assert!(e.to_string().contains("m.mtx:4"), "{e}");
        let e = parse(&format!("{BANNER}\n2 2 1\n1 1 x\n")).unwrap_err();
        assert!(e.to_string().contains("m.mtx:3"), "{e}");
        let e = parse(&format!("{BANNER}\n2 2 2\n1 1 1\n")).unwrap_err();
        assert!(e.to_string().contains("declares 2"), "{e}");
        assert!(parse("%%MatrixMarket matrix array real general\n2 2\n").is_err());
    }
}
