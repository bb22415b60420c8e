//! ASCII point-cloud readers and writers: whitespace `xyz`, PLY and PCD v0.7.
//!
//! Every reader rejects non-finite coordinates with the offending 1-based
//! line number, and an input with no points is an error rather than an
//! empty map.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use super::{Point3, PointCloud};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum CloudIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no points in input")]
    Empty,
    #[error("unknown point cloud format '{0}' (expected xyz, ply or pcd)")]
    UnknownFormat(String),
}

fn parse_err(line: usize, msg: impl Into<String>) -> CloudIoError {
    CloudIoError::Parse { line, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Ply,
    Pcd,
}

impl FromStr for CloudFormat {
    type Err = CloudIoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" | "xyz-ascii" | "txt" => Ok(CloudFormat::Xyz),
            "ply" => Ok(CloudFormat::Ply),
            "pcd" | "pcd-ascii" => Ok(CloudFormat::Pcd),
            other => Err(CloudIoError::UnknownFormat(other.to_string())),
        }
    }
}

impl CloudFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Result<Self, CloudIoError> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        ext.parse()
    }
}

pub fn load_pointcloud<T: Scalar>(path: &Path, format: CloudFormat) -> Result<PointCloud<T>, CloudIoError> {
    let file = fs::File::open(path)?;
    read_pointcloud(BufReader::new(file), format)
}

pub fn read_pointcloud<T: Scalar, R: Read>(reader: R, format: CloudFormat) -> Result<PointCloud<T>, CloudIoError> {
    let lines = BufReader::new(reader).lines();
    let points = match format {
        CloudFormat::Xyz => read_xyz(lines)?,
        CloudFormat::Ply => read_ply(lines)?,
        CloudFormat::Pcd => read_pcd(lines)?,
    };
    if points.is_empty() {
        return Err(CloudIoError::Empty);
    }
    // finiteness was checked per line
    Ok(PointCloud::new(points).expect("finite points"))
}

pub fn save_pointcloud<T: Scalar>(cloud: &PointCloud<T>, path: &Path, format: CloudFormat) -> Result<(), CloudIoError> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    write_pointcloud(cloud, &mut file, format)?;
    file.flush()?;
    Ok(())
}

pub fn write_pointcloud<T: Scalar, W: Write>(cloud: &PointCloud<T>, mut w: W, format: CloudFormat) -> Result<(), CloudIoError> {
    let pts = cloud.points();
    let with_intensity = !pts.is_empty() && pts.iter().all(|p| p.intensity.is_some());
    let kind = if std::mem::size_of::<T>() == 4 { "float" } else { "double" };
    match format {
        CloudFormat::Xyz => {}
        CloudFormat::Ply => {
            writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", pts.len())?;
            writeln!(w, "property {kind} x\nproperty {kind} y\nproperty {kind} z")?;
            if with_intensity {
                writeln!(w, "property {kind} intensity")?;
            }
            writeln!(w, "end_header")?;
        }
        CloudFormat::Pcd => {
            let size = std::mem::size_of::<T>();
            let (fields, n) = if with_intensity { ("x y z intensity", 4) } else { ("x y z", 3) };
            writeln!(w, "# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7")?;
            writeln!(w, "FIELDS {fields}")?;
            writeln!(w, "SIZE {}", vec![size.to_string(); n].join(" "))?;
            writeln!(w, "TYPE {}", vec!["F"; n].join(" "))?;
            writeln!(w, "COUNT {}", vec!["1"; n].join(" "))?;
            writeln!(w, "WIDTH {}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0", pts.len())?;
            writeln!(w, "POINTS {}\nDATA ascii", pts.len())?;
        }
    }
    let mut line = String::new();
    for p in pts {
        line.clear();
        write!(line, "{} {} {}", p.x, p.y, p.z).expect("string write");
        if with_intensity {
            write!(line, " {}", p.intensity.unwrap_or_default()).expect("string write");
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn parse_scalar<T: Scalar>(tok: &str, line: usize) -> Result<T, CloudIoError> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("cannot parse '{tok}' as a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value '{tok}'")));
    }
    Ok(T::lit(v))
}

type Lines<R> = std::io::Lines<BufReader<R>>;

fn read_xyz<T: Scalar, R: Read>(lines: Lines<R>) -> Result<Vec<Point3<T>>, CloudIoError> {
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        if !(3..=4).contains(&toks.len()) {
            return Err(parse_err(line_no, format!("expected 3 or 4 columns, found {}", toks.len())));
        }
        let x = parse_scalar(toks[0], line_no)?;
        let y = parse_scalar(toks[1], line_no)?;
        let z = parse_scalar(toks[2], line_no)?;
        let intensity = toks.get(3).map(|t| parse_scalar(t, line_no)).transpose()?;
        out.push(Point3 { x, y, z, intensity });
    }
    Ok(out)
}

fn read_ply<T: Scalar, R: Read>(mut lines: Lines<R>) -> Result<Vec<Point3<T>>, CloudIoError> {
    struct Element {
        name: String,
        count: usize,
        props: Vec<String>,
    }
    let mut line_no = 0;
    fn next_line<R: Read>(lines: &mut Lines<R>, line_no: &mut usize) -> Result<Option<(usize, String)>, CloudIoError> {
        *line_no += 1;
        Ok(lines.next().transpose()?.map(|l| (*line_no, l)))
    }

    match next_line(&mut lines, &mut line_no)? {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(1, "missing 'ply' magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let Some((n, l)) = next_line(&mut lines, &mut line_no)? else {
            return Err(parse_err(line_no, "unterminated header"));
        };
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(parse_err(n, format!("unsupported PLY format '{fmt}'")));
                }
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| parse_err(n, "bad element count"))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            ["property", "list", ..] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(n, "property before element"))?;
                el.props.push("<list>".into());
            }
            ["property", _ty, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(n, "property before element"))?;
                el.props.push(name.to_string());
            }
            ["end_header"] => break,
            _ => return Err(parse_err(n, format!("unrecognised header line '{l}'"))),
        }
    }

    let mut out = Vec::new();
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                next_line(&mut lines, &mut line_no)?.ok_or_else(|| parse_err(line_no, "truncated body"))?;
            }
            continue;
        }
        let col = |name: &str| el.props.iter().position(|p| p == name);
        let (Some(xi), Some(yi), Some(zi)) = (col("x"), col("y"), col("z")) else {
            return Err(parse_err(line_no, "vertex element lacks x/y/z properties"));
        };
        let ii = col("intensity");
        out.reserve(el.count);
        for _ in 0..el.count {
            let (n, l) = next_line(&mut lines, &mut line_no)?.ok_or_else(|| parse_err(line_no, "truncated vertex list"))?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() < el.props.len() {
                return Err(parse_err(n, format!("expected {} values, found {}", el.props.len(), toks.len())));
            }
            let intensity = ii.map(|i| parse_scalar(toks[i], n)).transpose()?;
            out.push(Point3 {
                x: parse_scalar(toks[xi], n)?,
                y: parse_scalar(toks[yi], n)?,
                z: parse_scalar(toks[zi], n)?,
                intensity,
            });
        }
    }
    Ok(out)
}

fn read_pcd<T: Scalar, R: Read>(lines: Lines<R>) -> Result<Vec<Point3<T>>, CloudIoError> {
    let mut fields: Vec<String> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut declared: Option<usize> = None;
    let mut in_data = false;
    let mut offsets: Option<(usize, usize, usize, Option<usize>, usize)> = None;
    let mut out = Vec::new();

    for (i, line) in lines.enumerate() {
        let n = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if !in_data {
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut toks = trimmed.split_whitespace();
            let key = toks.next().unwrap_or("");
            let rest: Vec<&str> = toks.collect();
            match key {
                "VERSION" | "SIZE" | "TYPE" | "WIDTH" | "HEIGHT" | "VIEWPOINT" => {}
                "FIELDS" => fields = rest.iter().map(|s| s.to_string()).collect(),
                "COUNT" => {
                    counts = rest
                        .iter()
                        .map(|s| s.parse().map_err(|_| parse_err(n, "bad COUNT")))
                        .collect::<Result<_, _>>()?
                }
                "POINTS" => {
                    declared = Some(
                        rest.first()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| parse_err(n, "bad POINTS"))?,
                    )
                }
                "DATA" => {
                    if rest.first() != Some(&"ascii") {
                        return Err(parse_err(n, "only DATA ascii is supported"));
                    }
                    if counts.is_empty() {
                        counts = vec![1; fields.len()];
                    }
                    if counts.len() != fields.len() {
                        return Err(parse_err(n, "COUNT and FIELDS disagree"));
                    }
                    let offset_of = |name: &str| {
                        fields.iter().position(|f| f == name).map(|k| counts[..k].iter().sum::<usize>())
                    };
                    let (Some(x), Some(y), Some(z)) = (offset_of("x"), offset_of("y"), offset_of("z")) else {
                        return Err(parse_err(n, "FIELDS must include x y z"));
                    };
                    offsets = Some((x, y, z, offset_of("intensity"), counts.iter().sum()));
                    in_data = true;
                }
                other => return Err(parse_err(n, format!("unrecognised header key '{other}'"))),
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let (xo, yo, zo, io, width) = offsets.expect("set with DATA");
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != width {
            return Err(parse_err(n, format!("expected {width} values, found {}", toks.len())));
        }
        out.push(Point3 {
            x: parse_scalar(toks[xo], n)?,
            y: parse_scalar(toks[yo], n)?,
            z: parse_scalar(toks[zo], n)?,
            intensity: io.map(|k| parse_scalar(toks[k], n)).transpose()?,
        });
    }
    if !in_data {
        return Err(parse_err(0, "missing DATA line"));
    }
    if let Some(d) = declared {
        if d != out.len() {
            log::warn!("PCD header declares {d} points, read {}", out.len());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(s: &str, f: CloudFormat) -> Result<PointCloud<f64>, CloudIoError> {
        read_pointcloud(s.as_bytes(), f)
    }

    #[test]
    fn three_line_xyz() {
        let c = read("0 0 0\n1 0 0\n0 1 0\n", CloudFormat::Xyz).unwrap();
        assert_eq!(c.len(), 3);
        let b = c.bounds().unwrap();
        assert_eq!(b.min, [0.0, 0.0, 0.0]);
        assert_eq!(b.max, [1.0, 1.0, 0.0]);
    }

    #[test]
    fn nan_rejected_with_line_number() {
        match read("nan 0 0\n", CloudFormat::Xyz) {
            Err(CloudIoError::Parse { line: 1, .. }) => {}
            other => panic!("expected parse error on line 1, got {other:?}"),
        }
        match read("# header\n1 2 3\n4 x 6\n", CloudFormat::Xyz) {
            Err(CloudIoError::Parse { line: 3, .. }) => {}
            other => panic!("expected parse error on line 3, got {other:?}"),
        }
    }

    #[test]
    fn comments_and_intensity() {
        let c = read("# a comment\n1 2 3 0.5 # trailing\n\n", CloudFormat::Xyz).unwrap();
        assert_eq!(c.points()[0], Point3::with_intensity(1.0, 2.0, 3.0, 0.5));
    }

    #[test]
    fn empty_input_is_error() {
        assert!(matches!(read("# nothing\n", CloudFormat::Xyz), Err(CloudIoError::Empty)));
        let ply = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        assert!(matches!(read(ply, CloudFormat::Ply), Err(CloudIoError::Empty)));
    }

    #[test]
    fn ply_with_extra_props_and_faces() {
        let ply = "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\nproperty float nx\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n9 1 2 3\n9 4 5 6\n3 0 1 1\n";
        let c = read(ply, CloudFormat::Ply).unwrap();
        assert_eq!(c.points(), &[Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)]);
        let bin = "ply\nformat binary_little_endian 1.0\nend_header\n";
        assert!(matches!(read(bin, CloudFormat::Ply), Err(CloudIoError::Parse { line: 2, .. })));
    }

    #[test]
    fn pcd_with_multi_count_field() {
        let pcd = "# .PCD v0.7\nVERSION 0.7\nFIELDS rgb x y z intensity\nSIZE 4 4 4 4 4\nTYPE F F F F F\nCOUNT 2 1 1 1 1\nWIDTH 1\nHEIGHT 1\nPOINTS 1\nDATA ascii\n0 0 1.5 2.5 3.5 7\n";
        let c = read(pcd, CloudFormat::Pcd).unwrap();
        assert_eq!(c.points(), &[Point3::with_intensity(1.5, 2.5, 3.5, 7.0)]);
        let nan = "FIELDS x y z\nDATA ascii\n1 2 3\nnan nan nan\n";
        assert!(matches!(read(nan, CloudFormat::Pcd), Err(CloudIoError::Parse { line: 4, .. })));
    }

    #[test]
    fn format_names() {
        assert_eq!("xyz-ascii".parse::<CloudFormat>().unwrap(), CloudFormat::Xyz);
        assert_eq!(CloudFormat::from_path(Path::new("a/b.PCD")).unwrap(), CloudFormat::Pcd);
        assert!("las".parse::<CloudFormat>().is_err());
    }
}
