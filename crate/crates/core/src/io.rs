//! Field dump format: a header line
//! `n cells[0..n) h[0..n) bundle_kind component_count`
//! followed by one row per masked cell in lexicographic order:
//! `i [j [k]] x comp0 comp1 ...`.

use std::io::Write;

use crate::domain::Domain;
use crate::error::Result;
use crate::fields::TensorField;

pub fn write_field_dump(
    out: &mut dyn Write,
    field: &TensorField,
    domain: &Domain,
) -> std::io::Result<()> {
    let grid = field.grid();
    let n = grid.dim();
    let nc = field.bundle().component_count();
    let mut header = format!("{n}");
    for a in 0..n {
        header.push_str(&format!(" {}", grid.cells()[a]));
    }
    for a in 0..n {
        header.push_str(&format!(" {}", grid.spacing()[a]));
    }
    header.push_str(&format!(" {} {nc}", field.bundle().kind.label()));
    writeln!(out, "{header}")?;
    for (lin, idx) in grid.iter_cells() {
        if !domain.is_masked(lin) {
            continue;
        }
        let mut row = String::new();
        for a in 0..n {
            row.push_str(&format!("{} ", idx[a]));
        }
        row.push_str(&format!("{}", domain.x()[lin]));
        for c in 0..nc {
            row.push_str(&format!(" {}", field.component(c)[lin]));
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

pub fn dump_field_to_path(
    path: &std::path::Path,
    field: &TensorField,
    domain: &Domain,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(path).unwrap_or_else(|e| panic!("create {path:?}: {e}")),
    );
    write_field_dump(&mut f, field, domain).expect("field dump write");
    Ok(())
}

/// Reads a field dump written by [`write_field_dump`] back onto a grid. The
/// header must agree with the grid's dimension, cell counts and spacings;
/// unlisted cells stay zero.
pub fn read_field_dump(
    text: &str,
    grid: std::sync::Arc<crate::grid::Grid>,
) -> std::result::Result<TensorField, String> {
    use crate::fields::{BundleKind, BundleType};
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty dump")?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    let n: usize = tok.first().ok_or("missing dimension")?.parse().map_err(|e| format!("header dimension: {e}"))?;
    if n != grid.dim() {
        return Err(format!("dump dimension {n} does not match grid {}", grid.dim()));
    }
    if tok.len() != 2 * n + 3 {
        return Err(format!("malformed header: {header}"));
    }
    for a in 0..n {
        let cells: usize = tok[1 + a].parse().map_err(|e| format!("header cells: {e}"))?;
        if cells != grid.cells()[a] {
            return Err(format!("dump cells {cells} do not match grid on axis {a}"));
        }
        let h: f64 = tok[1 + n + a].parse().map_err(|e| format!("header spacing: {e}"))?;
        if (h - grid.spacing()[a]).abs() > 1e-12 * grid.spacing()[a] {
            return Err(format!("dump spacing {h} does not match grid on axis {a}"));
        }
    }
    let kind = match tok[1 + 2 * n] {
        "SCALAR" => BundleKind::Scalar,
        "ONE_FORM" => BundleKind::OneForm,
        "SYM2" => BundleKind::Sym2,
        "SYM2_TRACEFREE" => BundleKind::Sym2TraceFree,
        other => return Err(format!("unknown bundle kind {other}")),
    };
    let bundle = BundleType::new(kind, n);
    let nc: usize = tok[2 + 2 * n].parse().map_err(|e| format!("header count: {e}"))?;
    if nc != bundle.component_count() {
        return Err(format!("component count {nc} does not match bundle"));
    }
    let mut field = TensorField::zeros(grid.clone(), bundle);
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != n + 1 + nc {
            return Err(format!("row {}: expected {} entries", row + 2, n + 1 + nc));
        }
        let mut idx = [0usize; 3];
        for a in 0..n {
            idx[a] = t[a].parse().map_err(|e| format!("row {}: {e}", row + 2))?;
        }
        let lin = grid.linear(idx);
        for c in 0..nc {
            field.component_mut(c)[lin] = t[n + 1 + c]
                .parse()
                .map_err(|e| format!("row {}: {e}", row + 2))?;
        }
    }
    Ok(field)
}
