//! Plain-text problem dump:
//!
//! ```text
//! n 2
//! m 1
//! H
//! 2 0
//! 0 2
//! F
//! -1 0.5
//! G
//! 1 1
//! w
//! 3
//! ```
//!
//! Blank lines and `#` comments are ignored; numbers in a block may wrap
//! across lines. Values are written in shortest round-trip form.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use super::QpProblem;
use crate::error::{Error, Result};

pub fn write_qp_dump<W: Write>(p: &QpProblem, mut out: W) -> Result<()> {
    writeln!(out, "n {}", p.n())?;
    writeln!(out, "m {}", p.m())?;
    let mut block = |name: &str, rows: usize, cols: usize, get: &dyn Fn(usize, usize) -> f64| -> Result<()> {
        writeln!(out, "{name}")?;
        for i in 0..rows {
            let line: Vec<String> = (0..cols).map(|j| format!("{:e}", get(i, j))).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    };
    block("H", p.n(), p.n(), &|i, j| p.h[(i, j)])?;
    block("F", 1, p.n(), &|_, j| p.f[j])?;
    block("G", p.m(), p.n(), &|i, j| p.g[(i, j)])?;
    block("w", 1, p.m(), &|_, j| p.w[j])?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    H,
    F,
    G,
    W,
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub fn parse_qp_dump(text: &str) -> Result<QpProblem> {
    let mut n: Option<usize> = None;
    let mut m: Option<usize> = None;
    let mut section: Option<Section> = None;
    let mut data: [Vec<f64>; 4] = Default::default();
    let mut seen = [false; 4];
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let head = tokens.next().expect("line is not empty");
        match head {
            "n" | "m" => {
                let value = tokens
                    .next()
                    .ok_or_else(|| perr(lineno, format!("missing value for {head}")))?
                    .parse::<usize>()
                    .map_err(|e| perr(lineno, format!("bad {head}: {e}")))?;
                if tokens.next().is_some() {
                    return Err(perr(lineno, "trailing tokens after dimension"));
                }
                let slot = if head == "n" { &mut n } else { &mut m };
                if slot.replace(value).is_some() {
                    return Err(perr(lineno, format!("{head} given twice")));
                }
            }
            "H" | "F" | "G" | "w" => {
                if tokens.next().is_some() {
                    return Err(perr(lineno, "trailing tokens after block name"));
                }
                let s = match head {
                    "H" => Section::H,
                    "F" => Section::F,
                    "G" => Section::G,
                    _ => Section::W,
                };
                if std::mem::replace(&mut seen[s as usize], true) {
                    return Err(perr(lineno, format!("block {head} given twice")));
                }
                section = Some(s);
            }
            _ => {
                let s = section.ok_or_else(|| perr(lineno, "number outside a block"))?;
                for tok in line.split_whitespace() {
                    let v: f64 = tok.parse().map_err(|_| perr(lineno, format!("bad number {tok:?}")))?;
                    if !v.is_finite() {
                        return Err(perr(lineno, format!("non-finite value {tok:?}")));
                    }
                    data[s as usize].push(v);
                }
            }
        }
    }

    let n = n.ok_or_else(|| perr(last_line, "missing n"))?;
    let m = m.ok_or_else(|| perr(last_line, "missing m"))?;
    let expect = |s: Section, name: &str, count: Option<usize>| -> Result<()> {
        let count = count.ok_or_else(|| perr(last_line, format!("size of {name} overflows")))?;
        let got = data[s as usize].len();
        if got != count {
            return Err(perr(last_line, format!("block {name} has {got} values, expected {count}")));
        }
        Ok(())
    };
    expect(Section::H, "H", n.checked_mul(n))?;
    expect(Section::F, "F", Some(n))?;
    expect(Section::G, "G", m.checked_mul(n))?;
    expect(Section::W, "w", Some(m))?;

    let [h, f, g, w] = data;
    QpProblem::new(
        DMatrix::from_row_slice(n, n, &h),
        DVector::from_vec(f),
        DMatrix::from_row_slice(m, n, &g),
        DVector::from_vec(w),
    )
    .map_err(|e| perr(last_line, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# tiny\nn 2\nm 1\nH\n2 0\n0 2\nF\n-1 0.5\nG\n1 1\nw\n3\n";

    #[test]
    fn parses_sample() {
        let p = parse_qp_dump(SAMPLE).unwrap();
        assert_eq!(p.h, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));
        assert_eq!(p.f, DVector::from_row_slice(&[-1.0, 0.5]));
        assert_eq!(p.w, DVector::from_row_slice(&[3.0]));
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let p = QpProblem::new(
            DMatrix::from_row_slice(2, 2, &[0.1 + 0.2, 1e-300, 1e-300, 7.0 / 3.0]),
            DVector::from_row_slice(&[-1.0 / 3.0, f64::MIN_POSITIVE]),
            DMatrix::from_row_slice(1, 2, &[1e20, -0.0]),
            DVector::from_row_slice(&[std::f64::consts::PI]),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_qp_dump(&p, &mut buf).unwrap();
        let back = parse_qp_dump(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn empty_constraint_set() {
        let p = parse_qp_dump("n 1\nm 0\nH\n1\nF\n2\nG\nw\n").unwrap();
        assert_eq!(p.m(), 0);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let cases = [
            ("", "missing n"),
            ("n 2\nm 1\nH\n1 0 0\nF\n0 0\nG\n1 1\nw\n1\n", "block H"),
            ("n 1\nm 0\nH\nnan\nF\n0\nG\nw\n", "non-finite"),
            ("n 1\n1\n", "outside a block"),
            ("n 1\nn 2\n", "twice"),
            ("n 18446744073709551615\nm 0\nH\nF\nG\nw\n", "overflows"),
            ("n 2\nm 0\nH\n1 5\n0 1\nF\n0 0\nG\nw\n", "symmetric"),
        ];
        for (text, needle) in cases {
            let err = parse_qp_dump(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?} gave {err}");
        }
    }
}
