use std::fmt::Write as _;

use thiserror::Error;

use super::{Element, Molecule, TargetId, Targets};

/// Structured parse failures; every variant carries a 1-based line number.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {line}: expected a positive atom count, found {found:?}")]
    BadAtomCount { line: usize, found: String },
    #[error("line {line}: missing property line")]
    MissingPropertyLine { line: usize },
    #[error("line {line}: property line needs a 'gdb <index>' tag and 15 values, found {fields} fields")]
    BadPropertyLine { line: usize, fields: usize },
    #[error("line {line}: header declares {expected} atoms but the atom block has {found}")]
    AtomCountMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unknown element symbol {symbol:?}")]
    UnknownElement { line: usize, symbol: String },
    #[error("line {line}: non-numeric field {token:?}")]
    NonNumeric { line: usize, token: String },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::BadAtomCount { line, .. }
            | ParseError::MissingPropertyLine { line }
            | ParseError::BadPropertyLine { line, .. }
            | ParseError::AtomCountMismatch { line, .. }
            | ParseError::UnknownElement { line, .. }
            | ParseError::NonNumeric { line, .. } => *line,
        }
    }
}

/// Parses a float, accepting the Mathematica-style `*^` exponent QM9 uses
/// (`1.2*^-3` is `1.2e-3`). Non-finite values are rejected.
pub fn parse_number(token: &str) -> Option<f64> {
    let v: f64 = if token.contains("*^") {
        token.replacen("*^", "e", 1).parse().ok()?
    } else {
        token.parse().ok()?
    };
    v.is_finite().then_some(v)
}

fn number(token: &str, line: usize) -> Result<f64, ParseError> {
    parse_number(token).ok_or_else(|| ParseError::NonNumeric {
        line,
        token: token.to_string(),
    })
}

/// An atom line starts with an alphabetic symbol and has 4 or 5 fields.
fn looks_like_atom(fields: &[&str]) -> bool {
    (4..=5).contains(&fields.len())
        && fields[0].chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && fields[0].len() <= 3
}

/// Parses one QM9 `.xyz` record. The molecule id defaults to the gdb index.
pub fn parse_xyz(text: &str) -> Result<Molecule, ParseError> {
    let lines: Vec<&str> = text.lines().collect();

    let first = lines.first().map(|l| l.trim()).unwrap_or("");
    let n_atoms: usize = match first.parse() {
        Ok(n) if n > 0 => n,
        _ => {
            return Err(ParseError::BadAtomCount {
                line: 1,
                found: first.to_string(),
            })
        }
    };

    let props = lines
        .get(1)
        .filter(|l| !l.trim().is_empty())
        .ok_or(ParseError::MissingPropertyLine { line: 2 })?;
    let fields: Vec<&str> = props.split_whitespace().collect();
    if fields.len() != 17 || fields[0] != "gdb" {
        return Err(ParseError::BadPropertyLine {
            line: 2,
            fields: fields.len(),
        });
    }
    let index: u64 = fields[1].parse().map_err(|_| ParseError::NonNumeric {
        line: 2,
        token: fields[1].to_string(),
    })?;
    let mut targets = Targets([0.0; 15]);
    for (t, tok) in TargetId::ALL.into_iter().zip(&fields[2..]) {
        targets.set(t, number(tok, 2)?);
    }

    let mut elements = Vec::with_capacity(n_atoms);
    let mut coords = Vec::with_capacity(n_atoms);
    let mut partial_charges = Vec::with_capacity(n_atoms);
    for k in 0..n_atoms {
        let line_no = k + 3;
        let fields: Vec<&str> = lines
            .get(k + 2)
            .map(|l| l.split_whitespace().collect())
            .unwrap_or_default();
        if !looks_like_atom(&fields) {
            return Err(ParseError::AtomCountMismatch {
                line: line_no - 1,
                expected: n_atoms,
                found: k,
            });
        }
        let element = Element::from_symbol(fields[0]).ok_or_else(|| ParseError::UnknownElement {
            line: line_no,
            symbol: fields[0].to_string(),
        })?;
        let xyz = [
            number(fields[1], line_no)?,
            number(fields[2], line_no)?,
            number(fields[3], line_no)?,
        ];
        let charge = match fields.get(4) {
            Some(tok) => number(tok, line_no)?,
            None => 0.0,
        };
        elements.push(element);
        coords.push(xyz);
        partial_charges.push(charge);
    }

    let rest = &lines[(n_atoms + 2).min(lines.len())..];
    if let Some(next) = rest.first() {
        let fields: Vec<&str> = next.split_whitespace().collect();
        if looks_like_atom(&fields) && fields[1..].iter().all(|t| parse_number(t).is_some()) {
            return Err(ParseError::AtomCountMismatch {
                line: n_atoms + 3,
                expected: n_atoms,
                found: n_atoms + 1,
            });
        }
    }
    let mut trailer: Vec<String> = rest.iter().map(|l| l.to_string()).collect();
    while trailer.last().is_some_and(|l| l.trim().is_empty()) {
        trailer.pop();
    }

    Ok(Molecule {
        id: index.to_string(),
        index,
        elements,
        coords,
        targets,
        partial_charges,
        trailer,
    })
}

/// Writes a record in the same layout [`parse_xyz`] reads. Floats use the
/// shortest representation that round-trips exactly.
pub fn write_xyz(m: &Molecule) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", m.n_atoms());
    let _ = write!(out, "gdb {}", m.index);
    for v in m.targets.0 {
        let _ = write!(out, "\t{v:?}");
    }
    out.push('\n');
    for ((e, c), q) in m.elements.iter().zip(&m.coords).zip(&m.partial_charges) {
        let _ = writeln!(out, "{}\t{:?}\t{:?}\t{:?}\t{:?}", e, c[0], c[1], c[2], q);
    }
    for line in &m.trailer {
        out.push_str(line);
        out.push('\n');
    }
    out
}
