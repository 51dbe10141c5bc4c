//! ASCII PLY, OBJ and XYZ point-cloud readers.

use std::path::Path;

use super::{build_cloud, ObjectCloud};
use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Ply,
    Obj,
    Xyz,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "ply" => Some(CloudFormat::Ply),
            "obj" => Some(CloudFormat::Obj),
            "xyz" | "txt" | "pts" => Some(CloudFormat::Xyz),
            _ => None,
        }
    }
}

type Parsed = (Vec<Vec3>, Option<Vec<Vec3>>);

fn num(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::parse(format!("line {line}"), format!("`{tok}` is not a number")))
}

/// Reads a cloud file, scaling coordinates by `scale` (normals untouched).
pub fn load_cloud(path: impl AsRef<Path>, scale: f64) -> Result<ObjectCloud> {
    let path = path.as_ref();
    let format = CloudFormat::from_path(path).ok_or_else(|| {
        Error::InvalidInput(format!(
            "{}: unknown cloud format (expected .ply, .obj or .xyz)",
            path.display()
        ))
    })?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut points, normals) = match format {
        CloudFormat::Ply => parse_ply(&text)?,
        CloudFormat::Obj => parse_obj(&text)?,
        CloudFormat::Xyz => parse_xyz(&text)?,
    };
    if points.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no vertices",
            path.display()
        )));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidInput(format!(
            "scale must be positive, got {scale}"
        )));
    }
    for p in &mut points {
        *p *= scale;
    }
    // renormalize file normals so mild rounding in text files is tolerated
    let normals = normals.map(|ns| {
        ns.into_iter()
            .map(|n| {
                let l = n.norm();
                if l > 0.0 {
                    n / l
                } else {
                    n
                }
            })
            .collect()
    });
    build_cloud(points, normals)
}

/// ASCII PLY: `vertex` element with `x y z` and optionally `nx ny nz`.
pub fn parse_ply(text: &str) -> Result<Parsed> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::parse("line 1", "missing `ply` magic")),
    }
    // (name, count, properties) per element, in file order
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut ascii = false;
    let mut header_done = false;
    for (ln, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] => {
                ascii = *fmt == "ascii";
                if !ascii {
                    return Err(Error::parse(
                        format!("line {}", ln + 1),
                        format!("unsupported PLY format `{fmt}`"),
                    ));
                }
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::parse(format!("line {}", ln + 1), "bad element count"))?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            ["property", "list", ..] => {
                if let Some(e) = elements.last_mut() {
                    e.2.push("list".into());
                }
            }
            ["property", _ty, name] => {
                if let Some(e) = elements.last_mut() {
                    e.2.push(name.to_string());
                }
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => {}
        }
    }
    if !header_done || !ascii {
        return Err(Error::parse("header", "incomplete or non-ASCII PLY header"));
    }
    let mut points = Vec::new();
    let mut normals: Option<Vec<Vec3>> = None;
    for (name, count, props) in &elements {
        if name != "vertex" {
            for _ in 0..*count {
                lines.next();
            }
            continue;
        }
        let col = |n: &str| props.iter().position(|p| p == n);
        let (x, y, z) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(Error::parse("vertex", "vertex element lacks x/y/z")),
        };
        let nidx = match (col("nx"), col("ny"), col("nz")) {
            (Some(a), Some(b), Some(c)) => Some((a, b, c)),
            _ => None,
        };
        let mut ns = Vec::new();
        for _ in 0..*count {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse("vertex", "fewer vertex rows than declared"))?;
            let vals = line
                .split_whitespace()
                .map(|t| num(t, ln + 1))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() < props.len() {
                return Err(Error::parse(format!("line {}", ln + 1), "short vertex row"));
            }
            points.push(Vec3::new(vals[x], vals[y], vals[z]));
            if let Some((a, b, c)) = nidx {
                ns.push(Vec3::new(vals[a], vals[b], vals[c]));
            }
        }
        if nidx.is_some() {
            normals = Some(ns);
        }
    }
    Ok((points, normals))
}

/// OBJ: only `v` lines are read.
pub fn parse_obj(text: &str) -> Result<Parsed> {
    let mut points = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut toks = line.split_whitespace();
        if toks.next() == Some("v") {
            let vals = toks
                .take(3)
                .map(|t| num(t, ln + 1))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != 3 {
                return Err(Error::parse(
                    format!("line {}", ln + 1),
                    "vertex needs 3 coordinates",
                ));
            }
            points.push(Vec3::new(vals[0], vals[1], vals[2]));
        }
    }
    Ok((points, None))
}

/// Whitespace-separated rows of `x y z` or `x y z nx ny nz`; `#` starts a comment.
pub fn parse_xyz(text: &str) -> Result<Parsed> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut width = None;
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| num(t, ln + 1))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 3 && vals.len() != 6 {
            return Err(Error::parse(
                format!("line {}", ln + 1),
                "expected 3 or 6 columns",
            ));
        }
        if *width.get_or_insert(vals.len()) != vals.len() {
            return Err(Error::parse(
                format!("line {}", ln + 1),
                "inconsistent column count",
            ));
        }
        points.push(Vec3::new(vals[0], vals[1], vals[2]));
        if vals.len() == 6 {
            normals.push(Vec3::new(vals[3], vals[4], vals[5]));
        }
    }
    let normals = (width == Some(6)).then_some(normals);
    Ok((points, normals))
}

/// Writes a cloud as ASCII PLY (with normals when present).
pub fn write_ply(cloud: &ObjectCloud) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let with_n = cloud.normals().is_some();
    let _ = writeln!(s, "ply\nformat ascii 1.0\nelement vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if with_n {
        s.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some(ns) = cloud.normals() {
            let n = ns[i];
            let _ = write!(s, " {} {} {}", n.x, n.y, n.z);
        }
        s.push('\n');
    }
    s
}
