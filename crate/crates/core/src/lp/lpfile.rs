//! CPLEX LP text format, for cross-checking with external solvers.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lp::{Constraint, LinearProgram, Sense};
use crate::scalar::Scalar;

fn linear<T: Scalar>(out: &mut String, coeffs: &[(usize, T)], names: &[String]) {
    if coeffs.is_empty() {
        out.push_str(" 0 ");
        out.push_str(&names[0]);
        return;
    }
    for (k, &(j, a)) in coeffs.iter().enumerate() {
        let a = a.to_f64_lossy();
        let sign = if a < 0.0 { "-" } else { "+" };
        if k == 0 && a >= 0.0 {
            write!(out, " {} {}", a.abs(), names[j]).unwrap();
        } else {
            write!(out, " {sign} {} {}", a.abs(), names[j]).unwrap();
        }
    }
}

fn number(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// Renders the LP in CPLEX LP format.
pub fn lp_to_string<T: Scalar>(lp: &LinearProgram<T>) -> String {
    let names = lp.names();
    let mut out = String::from("Minimize\n obj:");
    let obj: Vec<(usize, T)> =
        lp.objective().iter().enumerate().filter(|(_, v)| **v != T::zero()).map(|(j, &v)| (j, v)).collect();
    linear(&mut out, &obj, names);
    let offset = lp.offset().to_f64_lossy();
    if offset != 0.0 {
        write!(out, " {} {}", if offset < 0.0 { "-" } else { "+" }, offset.abs()).unwrap();
    }
    out.push_str("\nSubject To\n");
    let mut row = |prefix: &str, i: usize, c: &Constraint<T>, op: &str| {
        write!(out, " {prefix}{i}:").unwrap();
        linear(&mut out, &c.coeffs, names);
        writeln!(out, " {op} {}", number(c.rhs.to_f64_lossy())).unwrap();
    };
    for (i, c) in lp.equalities().iter().enumerate() {
        row("e", i, c, "=");
    }
    for (i, (c, sense)) in lp.inequalities().iter().enumerate() {
        row("i", i, c, if *sense == Sense::Le { "<=" } else { ">=" });
    }
    out.push_str("Bounds\n");
    for j in 0..lp.num_vars() {
        let (l, u) = (lp.lower()[j].to_f64_lossy(), lp.upper()[j].to_f64_lossy());
        if l.is_infinite() && u.is_infinite() {
            writeln!(out, " {} free", names[j]).unwrap();
        } else {
            writeln!(out, " {} <= {} <= {}", number(l), names[j], number(u)).unwrap();
        }
    }
    out.push_str("End\n");
    out
}

pub fn write_lp_file<T: Scalar>(lp: &LinearProgram<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, lp_to_string(lp)).map_err(|e| Error::io(path, e))
}
