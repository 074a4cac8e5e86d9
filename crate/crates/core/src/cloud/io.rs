//! ASCII PLY and header-row CSV readers/writers. All lengths are meters.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{Point3, PointCloud, ScalarField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    XyzCsv,
}

impl CloudFormat {
    /// Picks the format from the file extension (`.ply`, otherwise CSV).
    pub fn from_path(path: &Path) -> CloudFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => CloudFormat::PlyAscii,
            _ => CloudFormat::XyzCsv,
        }
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        CloudFormat::PlyAscii => read_ply(path, reader),
        CloudFormat::XyzCsv => read_csv(path, reader),
    }
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        CloudFormat::PlyAscii => write_ply(cloud, &mut w),
        CloudFormat::XyzCsv => write_csv(cloud, &mut w),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PropKind {
    Int,
    Real,
    List,
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, PropKind)>,
}

fn prop_kind(ty: &str) -> Option<PropKind> {
    match ty {
        "char" | "uchar" | "short" | "ushort" | "int" | "uint" | "int8" | "uint8" | "int16"
        | "uint16" | "int32" | "uint32" => Some(PropKind::Int),
        "float" | "double" | "float32" | "float64" => Some(PropKind::Real),
        _ => None,
    }
}

fn read_ply<R: BufRead>(path: &Path, reader: R) -> Result<PointCloud> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let next_line = |lines: &mut dyn Iterator<Item = (usize, std::io::Result<String>)>| {
        lines.next().map(|(n, l)| l.map(|s| (n, s)).map_err(|e| Error::io(path, e)))
    };

    match next_line(&mut lines) {
        Some(Ok((_, l))) if l.trim() == "ply" => {}
        Some(Err(e)) => return Err(e),
        _ => return Err(Error::parse(path, 1, "missing 'ply' magic")),
    }

    let mut elements: Vec<Element> = Vec::new();
    let mut header_done = false;
    let mut line_no = 1;
    while let Some(item) = next_line(&mut lines) {
        let (n, line) = item?;
        line_no = n;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] => {}
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(Error::parse(path, n, format!("unsupported PLY format {other:?}")))
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::parse(path, n, format!("bad element count {count:?}")))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            ["property", "list", _, _, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, n, "property before element"))?;
                el.props.push((name.to_string(), PropKind::List));
            }
            ["property", ty, name] => {
                let kind = prop_kind(ty)
                    .ok_or_else(|| Error::parse(path, n, format!("unknown property type {ty:?}")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, n, "property before element"))?;
                el.props.push((name.to_string(), kind));
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(Error::parse(path, n, format!("malformed header line {line:?}"))),
        }
    }
    if !header_done {
        return Err(Error::parse(path, line_no, "missing end_header"));
    }

    let mut cloud = PointCloud::default();
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                match next_line(&mut lines) {
                    Some(r) => {
                        r?;
                    }
                    None => return Err(Error::parse(path, line_no + 1, "unexpected end of file")),
                }
            }
            continue;
        }
        if el.props.iter().any(|(_, k)| *k == PropKind::List) {
            return Err(Error::parse(path, line_no, "list properties on vertices are not supported"));
        }
        let col = |name: &str| el.props.iter().position(|(p, _)| p == name);
        let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(Error::parse(path, line_no, "vertex element lacks x/y/z")),
        };
        let rgb = match (col("red"), col("green"), col("blue")) {
            (Some(r), Some(g), Some(b)) => Some([r, g, b]),
            _ => None,
        };
        let nrm = match (col("nx"), col("ny"), col("nz")) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            _ => None,
        };
        let mut reserved = vec![xi, yi, zi];
        reserved.extend(rgb.iter().flatten());
        reserved.extend(nrm.iter().flatten());
        let extra: Vec<usize> = (0..el.props.len()).filter(|i| !reserved.contains(i)).collect();
        let mut ints: Vec<Vec<i64>> = vec![Vec::with_capacity(el.count); extra.len()];
        let mut reals: Vec<Vec<f64>> = vec![Vec::with_capacity(el.count); extra.len()];

        let mut points = Vec::with_capacity(el.count);
        for id in 0..el.count {
            let (n, line) = match next_line(&mut lines) {
                Some(r) => r?,
                None => return Err(Error::parse(path, line_no + 1, "unexpected end of file")),
            };
            line_no = n;
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != el.props.len() {
                return Err(Error::parse(
                    path,
                    n,
                    format!("expected {} values, found {}", el.props.len(), tok.len()),
                ));
            }
            let real = |i: usize| -> Result<f64> {
                tok[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(path, n, format!("non-numeric value {:?}", tok[i])))
            };
            let mut p = Point3::new(real(xi)?, real(yi)?, real(zi)?);
            p.source_id = id;
            if let Some(c) = rgb {
                let mut v = [0u8; 3];
                for (k, &ci) in c.iter().enumerate() {
                    v[k] = tok[ci].parse::<u8>().map_err(|_| {
                        Error::parse(path, n, format!("bad color value {:?}", tok[ci]))
                    })?;
                }
                p.color = Some(v);
            }
            if let Some(c) = nrm {
                p.normal = Some(Vector3::new(real(c[0])?, real(c[1])?, real(c[2])?));
            }
            for (slot, &pi) in extra.iter().enumerate() {
                match el.props[pi].1 {
                    PropKind::Int => ints[slot].push(tok[pi].parse::<i64>().map_err(|_| {
                        Error::parse(path, n, format!("non-integer value {:?}", tok[pi]))
                    })?),
                    _ => reals[slot].push(real(pi)?),
                }
            }
            points.push(p);
        }
        cloud = PointCloud::new(points);
        for (slot, &pi) in extra.iter().enumerate() {
            let (name, kind) = &el.props[pi];
            let field = match kind {
                PropKind::Int => ScalarField::Int(std::mem::take(&mut ints[slot])),
                _ => ScalarField::Real(std::mem::take(&mut reals[slot])),
            };
            cloud.set_field(name.clone(), field)?;
        }
    }
    Ok(cloud)
}

fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

fn write_ply<W: Write>(cloud: &PointCloud, w: &mut W) -> std::io::Result<()> {
    let color = cloud.has_color();
    let normals = cloud.has_normals();
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for c in ["x", "y", "z"] {
        writeln!(w, "property double {c}")?;
    }
    if color {
        for c in ["red", "green", "blue"] {
            writeln!(w, "property uchar {c}")?;
        }
    }
    if normals {
        for c in ["nx", "ny", "nz"] {
            writeln!(w, "property double {c}")?;
        }
    }
    for (name, f) in cloud.fields() {
        let ty = if f.is_int() { "int" } else { "double" };
        writeln!(w, "property {ty} {name}")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points().iter().enumerate() {
        let mut row = vec![fmt_real(p.x), fmt_real(p.y), fmt_real(p.z)];
        if color {
            row.extend(p.color.unwrap().iter().map(|c| c.to_string()));
        }
        if normals {
            row.extend(p.normal.unwrap().iter().map(|&c| fmt_real(c)));
        }
        for f in cloud.fields().values() {
            row.push(match f {
                ScalarField::Int(v) => v[i].to_string(),
                ScalarField::Real(v) => fmt_real(v[i]),
            });
        }
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

fn read_csv<R: BufRead>(path: &Path, reader: R) -> Result<PointCloud> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let csv_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        Error::parse(path, line, e.to_string())
    };
    let cols: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if cols.is_empty() {
        return Err(Error::parse(path, 0, "missing header row"));
    }
    let col = |name: &str| cols.iter().position(|c| c == name);
    let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::parse(path, 1, "header must name x, y and z columns")),
    };
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let nrm = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    let mut reserved = vec![xi, yi, zi];
    reserved.extend(rgb.iter().flatten());
    reserved.extend(nrm.iter().flatten());
    let extra: Vec<usize> = (0..cols.len()).filter(|i| !reserved.contains(i)).collect();
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); extra.len()];

    let mut points = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = row + 1;
        let line = rec.position().map_or(row + 1, |p| p.line() as usize);
        if rec.len() != cols.len() {
            return Err(Error::parse(
                path,
                line,
                format!("row {row}: expected {} columns, found {}", cols.len(), rec.len()),
            ));
        }
        let real = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(path, line, format!("row {row}: non-numeric value {:?}", &rec[i])))
        };
        let mut p = Point3::new(real(xi)?, real(yi)?, real(zi)?);
        p.source_id = points.len();
        if let Some(c) = rgb {
            let mut v = [0u8; 3];
            for (k, &ci) in c.iter().enumerate() {
                v[k] = rec[ci].parse::<u8>().map_err(|_| {
                    Error::parse(path, line, format!("row {row}: bad color value {:?}", &rec[ci]))
                })?;
            }
            p.color = Some(v);
        }
        if let Some(c) = nrm {
            p.normal = Some(Vector3::new(real(c[0])?, real(c[1])?, real(c[2])?));
        }
        for (slot, &ci) in extra.iter().enumerate() {
            real(ci)?;
            raw[slot].push(rec[ci].to_string());
        }
        points.push(p);
    }
    let mut cloud = PointCloud::new(points);
    for (slot, &ci) in extra.iter().enumerate() {
        let vals = &raw[slot];
        let ints: Option<Vec<i64>> = vals.iter().map(|s| s.parse::<i64>().ok()).collect();
        let field = match ints {
            Some(v) => ScalarField::Int(v),
            None => ScalarField::Real(vals.iter().map(|s| s.parse().unwrap()).collect()),
        };
        cloud.set_field(cols[ci].clone(), field)?;
    }
    Ok(cloud)
}

fn write_csv<W: Write>(cloud: &PointCloud, w: &mut W) -> std::io::Result<()> {
    let color = cloud.has_color();
    let normals = cloud.has_normals();
    let mut header = vec!["x", "y", "z"];
    if color {
        header.extend(["red", "green", "blue"]);
    }
    if normals {
        header.extend(["nx", "ny", "nz"]);
    }
    header.extend(cloud.fields().keys().map(String::as_str));
    writeln!(w, "{}", header.join(","))?;
    for (i, p) in cloud.points().iter().enumerate() {
        let mut row = vec![fmt_real(p.x), fmt_real(p.y), fmt_real(p.z)];
        if color {
            row.extend(p.color.unwrap().iter().map(|c| c.to_string()));
        }
        if normals {
            row.extend(p.normal.unwrap().iter().map(|&c| fmt_real(c)));
        }
        for f in cloud.fields().values() {
            row.push(match f {
                ScalarField::Int(v) => v[i].to_string(),
                ScalarField::Real(v) => fmt_real(v[i]),
            });
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn reads_colored_ply() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        fs::write(
            &path,
            "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\nproperty float x\n\
             property float y\nproperty float z\nproperty uchar red\nproperty uchar green\n\
             property uchar blue\nend_header\n0 0 0 255 0 0\n1 0 0 0 255 0\n0.5 0.25 2 1 2 3\n",
        )
        .unwrap();
        let c = load_cloud(&path, CloudFormat::PlyAscii).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.point(2).coords(), [0.5, 0.25, 2.0]);
        assert_eq!(c.point(2).color, Some([1, 2, 3]));
        assert_eq!(c.point(2).source_id, 2);
    }

    #[test]
    fn reads_empty_ply_and_skips_faces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.ply");
        fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\n\
             property float z\nelement face 1\nproperty list uchar int vertex_indices\n\
             end_header\n3 0 1 2\n",
        )
        .unwrap();
        assert!(load_cloud(&path, CloudFormat::PlyAscii).unwrap().is_empty());
    }

    #[test]
    fn ply_errors_name_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n\
             property float z\nend_header\n0 0 0\n1 0\n",
        )
        .unwrap();
        match load_cloud(&path, CloudFormat::PlyAscii) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 9),
            other => panic!("{other:?}"),
        }
        fs::write(&path, "ply\nformat binary_little_endian 1.0\nend_header\n").unwrap();
        assert!(matches!(load_cloud(&path, CloudFormat::PlyAscii), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn csv_non_numeric_cites_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "x,y,z\n0.1,0.2,abc\n").unwrap();
        match load_cloud(&path, CloudFormat::XyzCsv) {
            Err(e @ Error::Parse { line: 2, .. }) => assert!(e.to_string().contains("row 1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn colorless_ply_header_has_no_color() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.ply");
        let c = PointCloud::from_positions([[0.0, 1.0, 2.0]]);
        save_cloud(&c, &path, CloudFormat::PlyAscii).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.contains("red"));
    }

    #[test]
    fn round_trip_with_fields() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = PointCloud::from_positions((0..100).map(|i| {
            let t = i as f64;
            [t * 0.0123457, 1.234567 - t * 1e-3, -0.5 + t * 7.654321e-4]
        }));
        for (i, p) in c.points_mut().iter_mut().enumerate() {
            p.color = Some([i as u8, 255 - i as u8, 7]);
        }
        c.set_field("class", ScalarField::Int((0..100).map(|i| i % 4).collect())).unwrap();
        c.set_field("ground_dist", ScalarField::Real((0..100).map(|i| i as f64 * 0.5).collect()))
            .unwrap();
        for fmt in [CloudFormat::PlyAscii, CloudFormat::XyzCsv] {
            let path = dir.path().join(if fmt == CloudFormat::PlyAscii { "r.ply" } else { "r.csv" });
            save_cloud(&c, &path, fmt).unwrap();
            let back = load_cloud(&path, fmt).unwrap();
            assert_eq!(back.len(), c.len());
            assert_eq!(back.int_field("class"), c.int_field("class"));
            assert_eq!(back.real_field("ground_dist"), c.real_field("ground_dist"));
            for (a, b) in back.points().iter().zip(c.points()) {
                assert_eq!(a.source_id, b.source_id);
                assert_eq!(a.color, b.color);
                assert!((a.pos() - b.pos()).norm() <= 1e-6);
            }
        }
    }
}
