//! OFF and legacy-VTK (ASCII POLYDATA) readers and writers.
//!
//! Fibers travel either inside the VTK file (`CELL_DATA ... VECTORS`) or in a
//! sidecar text file with one whitespace-separated 3-vector per element.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Point, SimplicialMesh};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshFormat {
    Off,
    VtkLegacyAscii,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "off" => Some(MeshFormat::Off),
            "vtk" => Some(MeshFormat::VtkLegacyAscii),
            _ => None,
        }
    }
}

/// Loads and validates a surface mesh. `fibers` optionally names a sidecar
/// per-element fiber file; it takes precedence over VTK cell vectors.
pub fn load_mesh(path: &Path, format: MeshFormat, fibers: Option<&Path>) -> Result<SimplicialMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (vertices, cells, embedded) = match format {
        MeshFormat::Off => parse_off(path, &text)?,
        MeshFormat::VtkLegacyAscii => parse_vtk(path, &text)?,
    };
    let fibers = match fibers {
        Some(p) => Some(load_fibers(p)?),
        None => embedded,
    };
    SimplicialMesh::new(vertices, cells, 2, fibers)
}

/// Writes the mesh; fibers are embedded for VTK, omitted for OFF (use
/// [`save_fibers`] for the sidecar).
pub fn save_mesh(mesh: &SimplicialMesh, path: &Path, format: MeshFormat) -> Result<()> {
    save_mesh_titled(mesh, path, format, "easloc mesh")
}

/// [`save_mesh`] with a one-line title: the VTK title line, or a comment
/// after the OFF header.
pub fn save_mesh_titled(mesh: &SimplicialMesh, path: &Path, format: MeshFormat, title: &str) -> Result<()> {
    let title: String = title.chars().filter(|c| *c != '\n' && *c != '\r').take(255).collect();
    if mesh.dim() != 2 {
        return Err(Error::InvalidParameter("only surface meshes can be written".into()));
    }
    let mut s = String::new();
    match format {
        MeshFormat::Off => {
            writeln!(s, "OFF").unwrap();
            writeln!(s, "# {title}").unwrap();
            writeln!(s, "{} {} 0", mesh.num_vertices(), mesh.num_elements()).unwrap();
            for v in mesh.vertices() {
                writeln!(s, "{} {} {}", v.x, v.y, v.z).unwrap();
            }
            for c in mesh.elements() {
                writeln!(s, "3 {} {} {}", c[0], c[1], c[2]).unwrap();
            }
        }
        MeshFormat::VtkLegacyAscii => {
            write_vtk_geometry(&mut s, mesh, &title);
            writeln!(s, "CELL_DATA {}", mesh.num_elements()).unwrap();
            writeln!(s, "VECTORS fibers double").unwrap();
            for f in mesh.fibers() {
                writeln!(s, "{} {} {}", f.x, f.y, f.z).unwrap();
            }
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// VTK file with one scalar per vertex, e.g. an activation map.
pub fn save_vtk_point_data(
    mesh: &SimplicialMesh,
    path: &Path,
    name: &str,
    values: &[f64],
) -> Result<()> {
    if values.len() != mesh.num_vertices() {
        return Err(Error::DimensionMismatch(format!(
            "{} point values for {} vertices",
            values.len(),
            mesh.num_vertices()
        )));
    }
    let mut s = String::new();
    write_vtk_geometry(&mut s, mesh, "easloc point data");
    writeln!(s, "POINT_DATA {}", values.len()).unwrap();
    writeln!(s, "SCALARS {name} double 1").unwrap();
    writeln!(s, "LOOKUP_TABLE default").unwrap();
    for v in values {
        writeln!(s, "{v}").unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn write_vtk_geometry(s: &mut String, mesh: &SimplicialMesh, title: &str) {
    writeln!(s, "# vtk DataFile Version 3.0").unwrap();
    writeln!(s, "{title}").unwrap();
    writeln!(s, "ASCII").unwrap();
    writeln!(s, "DATASET POLYDATA").unwrap();
    writeln!(s, "POINTS {} double", mesh.num_vertices()).unwrap();
    for v in mesh.vertices() {
        writeln!(s, "{} {} {}", v.x, v.y, v.z).unwrap();
    }
    writeln!(s, "POLYGONS {} {}", mesh.num_elements(), 4 * mesh.num_elements()).unwrap();
    for c in mesh.elements() {
        writeln!(s, "3 {} {} {}", c[0], c[1], c[2]).unwrap();
    }
}

pub fn save_fibers(mesh: &SimplicialMesh, path: &Path) -> Result<()> {
    let mut s = String::new();
    for f in mesh.fibers() {
        writeln!(s, "{} {} {}", f.x, f.y, f.z).unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_fibers(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = strip_comment(line);
        if line.is_empty() {
            continue;
        }
        let v = parse_floats(path, i + 1, line)?;
        if v.len() != 3 {
            return Err(Error::parse(path, i + 1, "expected 3 components per fiber"));
        }
        out.push(Vector3::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

fn parse_floats(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(path, line_no, format!("invalid number `{t}`")))
        })
        .collect()
}

fn parse_usizes(path: &Path, line_no: usize, line: &str) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::parse(path, line_no, format!("invalid index `{t}`")))
        })
        .collect()
}

type Parsed = (Vec<Point>, Vec<usize>, Option<Vec<Vector3<f64>>>);

fn parse_off(path: &Path, text: &str) -> Result<Parsed> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, strip_comment(l)))
        .filter(|(_, l)| !l.is_empty());

    let (ln, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    // The counts may share the header line ("OFF 3 1 0").
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| Error::parse(path, ln, "missing OFF header"))?
        .trim();
    let (ln, counts) = if rest.is_empty() {
        let (ln, l) = lines.next().ok_or_else(|| Error::parse(path, ln, "missing counts"))?;
        (ln, parse_usizes(path, ln, l)?)
    } else {
        (ln, parse_usizes(path, ln, rest)?)
    };
    if counts.len() < 2 {
        return Err(Error::parse(path, ln, "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| Error::parse(path, ln, "truncated vertex list"))?;
        let v = parse_floats(path, ln, l)?;
        if v.len() < 3 {
            return Err(Error::parse(path, ln, "vertex needs 3 coordinates"));
        }
        vertices.push(Point::new(v[0], v[1], v[2]));
    }
    let mut cells = Vec::with_capacity(3 * nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| Error::parse(path, ln, "truncated face list"))?;
        let f = parse_usizes(path, ln, l)?;
        if f.first() != Some(&3) || f.len() < 4 {
            return Err(Error::parse(path, ln, "only triangular faces are supported"));
        }
        cells.extend_from_slice(&f[1..4]);
    }
    Ok((vertices, cells, None))
}

fn parse_vtk(path: &Path, text: &str) -> Result<Parsed> {
    let mut tokens: Vec<(usize, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i < 2 {
            continue; // version line and title
        }
        tokens.extend(line.split_whitespace().map(|t| (i + 1, t)));
    }
    let mut it = tokens.into_iter().peekable();
    let mut vertices = Vec::new();
    let mut cells = Vec::new();
    let mut fibers = None;

    fn num<'a, T: std::str::FromStr>(
        path: &Path,
        it: &mut impl Iterator<Item = (usize, &'a str)>,
    ) -> Result<T> {
        let (ln, t) = it.next().ok_or_else(|| Error::parse(path, 0, "unexpected end of file"))?;
        t.parse().map_err(|_| Error::parse(path, ln, format!("invalid number `{t}`")))
    }

    while let Some((ln, kw)) = it.next() {
        match kw.to_ascii_uppercase().as_str() {
            "ASCII" => {}
            "BINARY" => return Err(Error::parse(path, ln, "binary VTK is not supported")),
            "DATASET" => {
                let (ln, kind) = it.next().unwrap_or((ln, ""));
                if !kind.eq_ignore_ascii_case("POLYDATA") {
                    return Err(Error::parse(path, ln, format!("unsupported dataset `{kind}`")));
                }
            }
            "POINTS" => {
                let n: usize = num(path, &mut it)?;
                it.next(); // data type
                for _ in 0..n {
                    let x = num(path, &mut it)?;
                    let y = num(path, &mut it)?;
                    let z = num(path, &mut it)?;
                    vertices.push(Point::new(x, y, z));
                }
            }
            "POLYGONS" => {
                let n: usize = num(path, &mut it)?;
                let _size: usize = num(path, &mut it)?;
                for _ in 0..n {
                    let k: usize = num(path, &mut it)?;
                    if k != 3 {
                        return Err(Error::parse(path, ln, "only triangular polygons are supported"));
                    }
                    for _ in 0..3 {
                        cells.push(num(path, &mut it)?);
                    }
                }
            }
            "CELL_DATA" | "POINT_DATA" => {
                let _n: usize = num(path, &mut it)?;
            }
            "VECTORS" => {
                let (_, name) = it.next().unwrap_or((ln, ""));
                it.next(); // data type
                let n = cells.len() / 3;
                let mut f = Vec::with_capacity(n);
                for _ in 0..n {
                    let x = num(path, &mut it)?;
                    let y = num(path, &mut it)?;
                    let z = num(path, &mut it)?;
                    f.push(Vector3::new(x, y, z));
                }
                if name == "fibers" || fibers.is_none() {
                    fibers = Some(f);
                }
            }
            other => {
                return Err(Error::parse(path, ln, format!("unsupported VTK section `{other}`")));
            }
        }
    }
    if vertices.is_empty() {
        return Err(Error::parse(path, 0, "no POINTS section"));
    }
    Ok((vertices, cells, fibers))
}
