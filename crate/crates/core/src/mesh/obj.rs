//! Minimal Wavefront OBJ support: `v x y z` and `f i j k` lines only.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::TriangleMesh;
use crate::error::{Error, Result};

/// Significant digits used for every coordinate written to OBJ.
pub const OBJ_SIGNIFICANT_DIGITS: usize = 9;

/// Formats `x` like C's `%.9g`.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    let sci = format!("{:.*e}", OBJ_SIGNIFICANT_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if exp < -5 || exp >= OBJ_SIGNIFICANT_DIGITS as i32 {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (OBJ_SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
    trim_fraction(&format!("{x:.decimals$}")).to_owned()
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn to_string(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(32 * (mesh.vertex_count() + mesh.face_count()));
    for v in mesh.vertices() {
        let _ = writeln!(
            out,
            "v {} {} {}",
            format_float(v[0]),
            format_float(v[1]),
            format_float(v[2])
        );
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn write<W: Write>(mesh: &TriangleMesh, mut w: W) -> Result<()> {
    w.write_all(to_string(mesh).as_bytes())?;
    Ok(())
}

/// Parses OBJ text. Directives other than `v` and `f` are skipped; face
/// entries may use the `i/t/n` form, only the position index is kept.
pub fn read<R: BufRead>(r: R) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let mut tokens = line.split_whitespace();
        let err = |msg: &str| Error::Parse(format!("line {}: {msg}: `{line}`", lineno + 1));
        match tokens.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in &mut p {
                    *c = tokens
                        .next()
                        .ok_or_else(|| err("vertex needs 3 coordinates"))?
                        .parse()
                        .map_err(|_| err("bad coordinate"))?;
                }
                vertices.push(p);
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or_default();
                        let i: i64 = head.parse().map_err(|_| err("bad face index"))?;
                        match i {
                            i if i > 0 => Ok(i as usize - 1),
                            i if i < 0 && (-i) as usize <= vertices.len() => {
                                Ok(vertices.len() - (-i) as usize)
                            }
                            _ => Err(err("face index out of range")),
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(err("only triangular faces are supported"));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

pub fn from_str(s: &str) -> Result<TriangleMesh> {
    read(s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting() {
        assert_eq!(format_float(0.5), "0.5");
        assert_eq!(format_float(-0.5), "-0.5");
        assert_eq!(format_float(1.0), "1");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333");
        assert_eq!(format_float(123456789.4), "123456789");
        assert_eq!(format_float(1.5e-7), "1.5e-07");
        assert_eq!(format_float(2.0e12), "2e+12");
        assert_eq!(format_float(9.9999999999), "10");
    }

    #[test]
    fn ignores_other_directives() {
        let src = "# comment\no obj\nv 0 0 0\nvn 0 0 1\nv 1 0 0\nv 0 1 0\nusemtl x\nf 1/1/1 2/2/2 3/3/3\n";
        let m = from_str(src).unwrap();
        assert_eq!((m.vertex_count(), m.face_count()), (3, 1));
        assert_eq!(to_string(&m), "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
    }

    #[test]
    fn rejects_quads_and_bad_indices() {
        assert!(from_str("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n").is_err());
        assert!(from_str("v 0 0 0\nf 1 2 3\n").is_err());
        assert!(from_str("v 0 zero 0\n").is_err());
    }
}
