//! Plain-text triplet format for quadratic programs.
//!
//! ```text
//! # idrcde-qp v1
//! n 3
//! m_eq 1
//! m_ineq 0
//! Q 0 0 2.0        upper triangle, row <= col
//! q 1 -1.5
//! A 0 2 1.0
//! b 0 4.0
//! G 0 1 1.0
//! h 0 1.0
//! lb 0 0
//! ub 2 inf
//! ```
//!
//! Unlisted vector entries default to zero, bounds to `-inf` / `+inf`.

use std::fmt::Write as _;

use super::{ConvexQP, SparseMatrix};
use crate::error::{Error, Result};

pub const QP_DUMP_HEADER: &str = "# idrcde-qp v1";
const MAX_DIM: usize = 1 << 20;

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:e}")
    }
}

pub fn write_qp_dump(qp: &ConvexQP) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{QP_DUMP_HEADER}");
    let _ = writeln!(out, "n {}", qp.n);
    let _ = writeln!(out, "m_eq {}", qp.eq_mat.nrows());
    let _ = writeln!(out, "m_ineq {}", qp.ineq_mat.nrows());
    for (r, c, v) in qp.quad.triplets().filter(|t| t.0 <= t.1) {
        let _ = writeln!(out, "Q {r} {c} {}", fmt_f64(v));
    }
    let vec_lines = |out: &mut String, tag: &str, v: &[f64], default: f64| {
        for (i, &x) in v.iter().enumerate() {
            if x != default {
                let _ = writeln!(out, "{tag} {i} {}", fmt_f64(x));
            }
        }
    };
    vec_lines(&mut out, "q", &qp.lin, 0.0);
    for (r, c, v) in qp.eq_mat.triplets() {
        let _ = writeln!(out, "A {r} {c} {}", fmt_f64(v));
    }
    vec_lines(&mut out, "b", &qp.eq_rhs, 0.0);
    for (r, c, v) in qp.ineq_mat.triplets() {
        let _ = writeln!(out, "G {r} {c} {}", fmt_f64(v));
    }
    vec_lines(&mut out, "h", &qp.ineq_rhs, 0.0);
    vec_lines(&mut out, "lb", &qp.lower, f64::NEG_INFINITY);
    vec_lines(&mut out, "ub", &qp.upper, f64::INFINITY);
    out
}

struct Fields<'a> {
    line: usize,
    items: Vec<(usize, &'a str)>,
}

impl<'a> Fields<'a> {
    fn new(line: usize, text: &'a str) -> Self {
        let mut items = Vec::new();
        let mut start = None;
        for (i, ch) in text.char_indices() {
            if ch.is_whitespace() {
                if let Some(s) = start.take() {
                    items.push((s, &text[s..i]));
                }
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            items.push((s, &text[s..]));
        }
        Fields { line, items }
    }

    fn expect_len(&self, k: usize) -> Result<()> {
        if self.items.len() != k {
            let col = self.items.get(k).map(|x| x.0 + 1).unwrap_or(1);
            return Err(parse_err(
                self.line,
                col,
                format!("expected {k} fields, found {}", self.items.len()),
            ));
        }
        Ok(())
    }

    fn index(&self, k: usize, bound: usize) -> Result<usize> {
        let (col, s) = self.items[k];
        let v: usize = s
            .parse()
            .map_err(|_| parse_err(self.line, col + 1, format!("invalid index '{s}'")))?;
        if v >= bound {
            return Err(parse_err(
                self.line,
                col + 1,
                format!("index {v} out of range (size {bound})"),
            ));
        }
        Ok(v)
    }

    fn value(&self, k: usize, allow_inf: bool) -> Result<f64> {
        let (col, s) = self.items[k];
        let v: f64 = s
            .parse()
            .map_err(|_| parse_err(self.line, col + 1, format!("invalid number '{s}'")))?;
        if v.is_nan() || (!allow_inf && v.is_infinite()) {
            return Err(parse_err(
                self.line,
                col + 1,
                format!("non-finite value '{s}'"),
            ));
        }
        Ok(v)
    }
}

pub fn parse_qp_dump(text: &str) -> Result<ConvexQP> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim_end() == QP_DUMP_HEADER => {}
        _ => {
            return Err(parse_err(
                1,
                1,
                format!("missing header '{QP_DUMP_HEADER}'"),
            ))
        }
    }
    let mut dims = [None::<usize>; 3];
    let names = ["n", "m_eq", "m_ineq"];
    let mut quad = Vec::new();
    let mut eq = Vec::new();
    let mut ineq = Vec::new();
    let mut lin: Vec<f64> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    let mut lower: Vec<f64> = Vec::new();
    let mut upper: Vec<f64> = Vec::new();

    for (ln, raw) in lines {
        let f = Fields::new(ln, raw);
        let Some(&(col, tag)) = f.items.first() else {
            continue;
        };
        if tag.starts_with('#') {
            continue;
        }
        if let Some(d) = names.iter().position(|&nm| nm == tag) {
            f.expect_len(2)?;
            if dims[d].is_some() {
                return Err(parse_err(ln, col + 1, format!("duplicate '{tag}'")));
            }
            let v = f.index(1, MAX_DIM + 1)?;
            dims[d] = Some(v);
            if dims.iter().all(|x| x.is_some()) {
                let n = dims[0].unwrap_or(0);
                lin = vec![0.0; n];
                lower = vec![f64::NEG_INFINITY; n];
                upper = vec![f64::INFINITY; n];
                b = vec![0.0; dims[1].unwrap_or(0)];
                h = vec![0.0; dims[2].unwrap_or(0)];
            }
            continue;
        }
        let (Some(n), Some(p), Some(m)) = (dims[0], dims[1], dims[2]) else {
            return Err(parse_err(
                ln,
                col + 1,
                "dimensions 'n', 'm_eq', 'm_ineq' must come first",
            ));
        };
        match tag {
            "Q" => {
                f.expect_len(4)?;
                let (i, j) = (f.index(1, n)?, f.index(2, n)?);
                if i > j {
                    return Err(parse_err(
                        ln,
                        f.items[1].0 + 1,
                        "Q entries must satisfy row <= col",
                    ));
                }
                quad.push((i, j, f.value(3, false)?));
            }
            "A" | "G" => {
                f.expect_len(4)?;
                let rows = if tag == "A" { p } else { m };
                let t = (f.index(1, rows)?, f.index(2, n)?, f.value(3, false)?);
                if tag == "A" {
                    eq.push(t)
                } else {
                    ineq.push(t)
                }
            }
            "q" | "b" | "h" | "lb" | "ub" => {
                f.expect_len(3)?;
                let (target, len, inf) = match tag {
                    "q" => (&mut lin, n, false),
                    "b" => (&mut b, p, false),
                    "h" => (&mut h, m, false),
                    "lb" => (&mut lower, n, true),
                    _ => (&mut upper, n, true),
                };
                let i = f.index(1, len)?;
                target[i] = f.value(2, inf)?;
            }
            other => return Err(parse_err(ln, col + 1, format!("unknown record '{other}'"))),
        }
    }
    let (Some(n), Some(p), Some(m)) = (dims[0], dims[1], dims[2]) else {
        return Err(parse_err(
            text.lines().count().max(1),
            1,
            "missing dimension records",
        ));
    };
    let qp = ConvexQP::new(SparseMatrix::symmetric_from_upper(n, &quad), lin)
        .with_equalities(SparseMatrix::from_triplets(p, n, &eq), b)
        .with_inequalities(SparseMatrix::from_triplets(m, n, &ineq), h)
        .with_bounds(lower, upper);
    qp.validate()?;
    Ok(qp)
}
