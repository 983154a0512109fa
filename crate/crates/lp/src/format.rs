use std::io::Write;

use crate::{LinearProgram, Relation};

fn var_label(lp: &LinearProgram, j: usize) -> String {
    match lp.var_name(j) {
        Some(name) => sanitize(name),
        None => format!("x{j}"),
    }
}

// LP-format identifiers may not contain spaces or start with a digit.
fn sanitize(name: &str) -> String {
    let mut out: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' })
        .collect();
    if out.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        out.insert(0, '_');
    }
    out
}

fn write_terms<W: Write>(out: &mut W, lp: &LinearProgram, terms: &[(usize, f64)]) -> std::io::Result<()> {
    if terms.is_empty() {
        return write!(out, " 0 {}", var_label(lp, 0));
    }
    for (k, &(j, c)) in terms.iter().enumerate() {
        let sign = if c < 0.0 { "-" } else if k == 0 { "" } else { "+" };
        write!(out, " {sign} {:e} {}", c.abs(), var_label(lp, j))?;
    }
    Ok(())
}

pub(crate) fn write_cplex_lp<W: Write>(lp: &LinearProgram, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "\\ {} variables, {} rows", lp.num_vars(), lp.num_constraints())?;
    writeln!(out, "{}", if lp.is_maximize() { "Maximize" } else { "Minimize" })?;
    let obj: Vec<(usize, f64)> = (0..lp.num_vars())
        .filter(|&j| lp.objective_coeff(j) != 0.0)
        .map(|j| (j, lp.objective_coeff(j)))
        .collect();
    write!(out, " obj:")?;
    if lp.num_vars() > 0 {
        write_terms(out, lp, &obj)?;
    }
    writeln!(out)?;
    writeln!(out, "Subject To")?;
    for (i, row) in lp.constraints().iter().enumerate() {
        write!(out, " c{i}:")?;
        write_terms(out, lp, &row.terms)?;
        let rel = match row.relation {
            Relation::Eq => "=",
            Relation::Le => "<=",
            Relation::Ge => ">=",
        };
        writeln!(out, " {rel} {:e}", row.rhs)?;
    }
    writeln!(out, "Bounds")?;
    for j in 0..lp.num_vars() {
        let (lo, hi) = lp.bounds(j);
        let name = var_label(lp, j);
        match (lo.is_finite(), hi.is_finite()) {
            (false, false) => writeln!(out, " {name} free")?,
            (true, true) if lo == hi => writeln!(out, " {name} = {lo:e}")?,
            (true, true) => writeln!(out, " {lo:e} <= {name} <= {hi:e}")?,
            (true, false) => writeln!(out, " {name} >= {lo:e}")?,
            (false, true) => writeln!(out, " -inf <= {name} <= {hi:e}")?,
        }
    }
    writeln!(out, "End")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_contains_sections() {
        let mut lp = LinearProgram::maximize();
        let x = lp.add_named_var("sigma[0,1]", 0.0, 1.0, 2.0);
        let y = lp.add_var(f64::NEG_INFINITY, f64::INFINITY, -1.0);
        lp.add_constraint(vec![(x, 1.0), (y, -3.0)], Relation::Ge, 0.5);
        let mut buf = Vec::new();
        lp.write_lp_format(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("Maximize"));
        assert!(text.contains("sigma[0_1]"));
        assert!(text.contains("x1 free"));
        assert!(text.contains(">= 5e-1"));
        assert!(text.trim_end().ends_with("End"));
    }
}
