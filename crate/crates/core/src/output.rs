//! Field snapshots (legacy VTK) and tabular output (CSV).
//!
//! Numbers are written in scientific notation with a fixed number of
//! significant digits and `-0` normalized, so rewriting the same data gives
//! byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::forward::BoundarySeries;
use crate::mesh::BoundaryTag;

/// Round-trip exact for `f64`.
pub const FULL_PRECISION: usize = 17;

/// `x` with `digits` significant digits in scientific notation.
pub fn fmt_num(x: f64, digits: usize) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{:.*e}", digits.clamp(1, FULL_PRECISION) - 1, x)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| {
        let path = path.display().to_string();
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io { path, source },
            other => Error::Config {
                path,
                message: format!("{other:?}"),
            },
        }
    }
}

/// One point-data array on the quadratic nodes.
pub enum VtkArray<'a> {
    /// Interleaved `(x, y)` components per node, written as 3-vectors.
    Vector(&'a str, &'a [f64]),
    Scalar(&'a str, &'a [f64]),
}

/// Extends pressure (vertex values) to the quadratic nodes by linear
/// interpolation along element edges.
pub fn pressure_on_nodes(disc: &Discretization, pi: &[f64]) -> Vec<f64> {
    let spaces = &disc.spaces;
    let mut out = vec![0.0; spaces.n_nodes()];
    let mut at_node = vec![usize::MAX; spaces.n_nodes()];
    for (p, &node) in spaces.pressure_nodes.iter().enumerate() {
        at_node[node] = p;
        out[node] = pi[p];
    }
    for nodes in &spaces.element_nodes {
        for (k, &(a, b)) in [(0, 1), (1, 2), (2, 0)].iter().enumerate() {
            let (pa, pb) = (at_node[nodes[a]], at_node[nodes[b]]);
            out[nodes[3 + k]] = 0.5 * (pi[pa] + pi[pb]);
        }
    }
    out
}

/// Writes an ASCII unstructured grid of quadratic triangles.
pub fn write_vtk(path: &Path, disc: &Discretization, arrays: &[VtkArray], digits: usize) -> Result<()> {
    let spaces = &disc.spaces;
    let n = spaces.n_nodes();
    let mut f = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let num = |x: f64| fmt_num(x, digits);
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nflexctl field snapshot\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    s.push_str(&format!("POINTS {n} double\n"));
    for p in &spaces.nodes {
        s.push_str(&format!("{} {} {}\n", num(p[0]), num(p[1]), num(0.0)));
    }
    let ne = spaces.element_nodes.len();
    s.push_str(&format!("CELLS {ne} {}\n", ne * 7));
    for e in &spaces.element_nodes {
        s.push('6');
        for id in e {
            s.push_str(&format!(" {id}"));
        }
        s.push('\n');
    }
    s.push_str(&format!("CELL_TYPES {ne}\n"));
    for _ in 0..ne {
        s.push_str("22\n");
    }
    if !arrays.is_empty() {
        s.push_str(&format!("POINT_DATA {n}\n"));
    }
    for a in arrays {
        match a {
            VtkArray::Vector(name, v) => {
                check_len(name, v.len(), 2 * n)?;
                s.push_str(&format!("VECTORS {name} double\n"));
                for i in 0..n {
                    s.push_str(&format!("{} {} {}\n", num(v[2 * i]), num(v[2 * i + 1]), num(0.0)));
                }
            }
            VtkArray::Scalar(name, v) => {
                check_len(name, v.len(), n)?;
                s.push_str(&format!("SCALARS {name} double 1\nLOOKUP_TABLE default\n"));
                for x in v.iter() {
                    s.push_str(&num(*x));
                    s.push('\n');
                }
            }
        }
    }
    f.write_all(s.as_bytes()).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

fn check_len(name: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Space {
            what: "vtk array",
            message: format!("`{name}` has {got} values, expected {expected}"),
        });
    }
    Ok(())
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub const SERIES_HEADER: [&str; 6] = ["control", "time", "node_id", "x", "y", "value"];

/// Rows `control, time, node_id, x, y, value` for each named series, the
/// first block on Γ₁ nodes and the second on Γ₂ nodes.
pub fn series_rows(
    disc: &Discretization,
    dt: f64,
    named: &[(&str, &BoundarySeries)],
    digits: usize,
) -> Vec<Vec<String>> {
    let spaces = &disc.spaces;
    let mut rows = Vec::new();
    for (name, s) in named {
        let blocks = [
            ("1", &s.gamma1, &spaces.gamma1_nodes),
            ("2", &s.gamma2, &spaces.gamma2_nodes),
        ];
        for (suffix, block, nodes) in blocks {
            for (m, row) in block.iter().enumerate() {
                let t = (m + 1) as f64 * dt;
                for (&node, &v) in nodes.iter().zip(row) {
                    let p = spaces.nodes[node];
                    rows.push(vec![
                        format!("{name}{suffix}"),
                        fmt_num(t, digits),
                        node.to_string(),
                        fmt_num(p[0], digits),
                        fmt_num(p[1], digits),
                        fmt_num(v, digits),
                    ]);
                }
            }
        }
    }
    rows
}

/// Reads one boundary part from a CSV table with columns `time`, `node_id`
/// and `value` (others ignored). With `control` set, only rows whose
/// `control` column matches are used. Every node and step must appear once.
pub fn read_boundary_table(
    path: &Path,
    disc: &Discretization,
    part: BoundaryTag,
    nt: usize,
    dt: f64,
    control: Option<&str>,
) -> Result<Vec<Vec<f64>>> {
    let bad = |message: String| Error::Config {
        path: path.display().to_string(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let (tc, nc, vc) = match (col("time"), col("node_id"), col("value")) {
        (Some(t), Some(n), Some(v)) => (t, n, v),
        _ => return Err(bad("table needs `time`, `node_id` and `value` columns".into())),
    };
    let cc = match control {
        Some(_) => Some(col("control").ok_or_else(|| bad("table has no `control` column".into()))?),
        None => None,
    };
    let spaces = &disc.spaces;
    let n_part = match part {
        BoundaryTag::Gamma1 => spaces.gamma1_nodes.len(),
        BoundaryTag::Gamma2 => spaces.gamma2_nodes.len(),
    };
    let mut out = vec![vec![f64::NAN; n_part]; nt];
    let mut seen = 0usize;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = line + 2;
        if let (Some(c), Some(want)) = (cc, control) {
            if rec.get(c).map(str::trim) != Some(want) {
                continue;
            }
        }
        let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let num = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|_| bad(format!("row {row}: `{}` is not a number", field(i))))
        };
        let t = num(tc)?;
        let value = num(vc)?;
        let node: usize = field(nc)
            .parse()
            .map_err(|_| bad(format!("row {row}: `{}` is not a node id", field(nc))))?;
        let idx = match part {
            BoundaryTag::Gamma1 => spaces.gamma1_index(node),
            BoundaryTag::Gamma2 => spaces.gamma2_index(node),
        }
        .ok_or_else(|| bad(format!("row {row}: node {node} is not on this boundary part")))?;
        let step = if dt > 0.0 { (t / dt).round() } else { f64::NAN };
        if !(step >= 1.0 && step <= nt as f64 && (t - step * dt).abs() <= 1e-9 * dt.max(1.0)) {
            return Err(bad(format!("row {row}: time {t} is not a step endpoint")));
        }
        let slot = &mut out[step as usize - 1][idx];
        if !slot.is_nan() {
            return Err(bad(format!("row {row}: duplicate entry for node {node} at time {t}")));
        }
        *slot = value;
        seen += 1;
    }
    if seen != nt * n_part {
        return Err(bad(format!("table covers {seen} of {} node-step values", nt * n_part)));
    }
    Ok(out)
}

/// Inverse of [`series_rows`] for a single named series.
pub fn read_series_csv(
    path: &Path,
    disc: &Discretization,
    nt: usize,
    dt: f64,
    name: &str,
) -> Result<BoundarySeries> {
    Ok(BoundarySeries {
        gamma1: read_boundary_table(path, disc, BoundaryTag::Gamma1, nt, dt, Some(&format!("{name}1")))?,
        gamma2: read_boundary_table(path, disc, BoundaryTag::Gamma2, nt, dt, Some(&format!("{name}2")))?,
    })
}
