//! PLY vertex I/O (ASCII and binary little-endian).
//!
//! Recognized vertex properties: `x y z`, optional `red green blue` (8-bit,
//! mapped to `[0, 1]`), `nx ny nz`, `label` and `instance` (int32). Other
//! scalar properties are read and dropped.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::format(format!("unsupported PLY type {other}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

pub fn read_ply_file(path: impl AsRef<Path>, scene_id: &str) -> Result<PointCloud> {
    let file = std::fs::File::open(path)?;
    read_ply(BufReader::new(file), scene_id)
}

pub fn read_ply<R: BufRead>(mut reader: R, scene_id: &str) -> Result<PointCloud> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::format("missing 'ply' magic line"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::format("unexpected end of PLY header"));
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => encoding = Some(PlyEncoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(PlyEncoding::BinaryLittleEndian),
            ["format", other, _] => {
                return Err(Error::format(format!("unsupported PLY format {other}")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::format(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => {
                return Err(Error::format("list properties are not supported"))
            }
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::format("property before element"))?
                .props
                .push((name.to_string(), Scalar::parse(ty)?)),
            _ => return Err(Error::format(format!("bad PLY header line: {}", line.trim_end()))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::format("PLY header has no format line"))?;
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::format("PLY file has no vertex element"))?;

    let mut ascii_tokens: Option<std::vec::IntoIter<String>> = None;
    if encoding == PlyEncoding::Ascii {
        let mut body = String::new();
        reader.read_to_string(&mut body)?;
        let tokens: Vec<String> = body.split_whitespace().map(str::to_owned).collect();
        ascii_tokens = Some(tokens.into_iter());
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ei, element) in elements.iter().enumerate() {
        if ei > vertex_pos {
            break;
        }
        let width = element.props.len();
        for _ in 0..element.count {
            let mut row = Vec::with_capacity(width);
            match ascii_tokens.as_mut() {
                Some(tokens) => {
                    for (name, ty) in &element.props {
                        let tok = tokens
                            .next()
                            .ok_or_else(|| Error::format("PLY body ended early"))?;
                        let bad = || Error::format(format!("bad value {tok:?} for property {name}"));
                        // float32 text is parsed at its own precision so ASCII and binary agree
                        let value = match ty {
                            Scalar::F32 => tok.parse::<f32>().map_err(|_| bad())? as f64,
                            _ => tok.parse::<f64>().map_err(|_| bad())?,
                        };
                        row.push(value);
                    }
                }
                None => {
                    for (_, ty) in &element.props {
                        let mut buf = [0u8; 8];
                        reader
                            .read_exact(&mut buf[..ty.size()])
                            .map_err(|_| Error::format("PLY body ended early"))?;
                        row.push(ty.read_le(&buf));
                    }
                }
            }
            if ei == vertex_pos {
                rows.push(row);
            }
        }
    }

    let vertex = &elements[vertex_pos];
    let col = |name: &str| vertex.props.iter().position(|(n, _)| n == name);
    let triple = |names: [&str; 3]| -> Result<Option<[usize; 3]>> {
        match names.map(col) {
            [Some(a), Some(b), Some(c)] => Ok(Some([a, b, c])),
            [None, None, None] => Ok(None),
            _ => Err(Error::format(format!("incomplete property triple {names:?}"))),
        }
    };
    let xyz = triple(["x", "y", "z"])?.ok_or_else(|| Error::format("PLY vertex lacks x/y/z"))?;
    let pick = |r: &Vec<f64>, c: [usize; 3]| [r[c[0]], r[c[1]], r[c[2]]];

    let mut cloud = PointCloud::new(scene_id, rows.iter().map(|r| pick(r, xyz)).collect())?;
    if let Some(c) = triple(["red", "green", "blue"])? {
        cloud = cloud.with_colors(rows.iter().map(|r| pick(r, c).map(|v| v / 255.0)).collect())?;
    }
    if let Some(c) = triple(["nx", "ny", "nz"])? {
        cloud = cloud.with_normals(rows.iter().map(|r| pick(r, c)).collect())?;
    }
    if let Some(c) = col("label") {
        cloud = cloud.with_labels(rows.iter().map(|r| r[c] as i32).collect())?;
    }
    if let Some(c) = col("instance") {
        cloud = cloud.with_instances(rows.iter().map(|r| r[c] as i32).collect())?;
    }
    Ok(cloud)
}

pub fn write_ply_file(path: impl AsRef<Path>, cloud: &PointCloud, encoding: PlyEncoding) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ply(&mut file, cloud, encoding)?;
    file.flush()?;
    Ok(())
}

fn color_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn write_ply<W: Write>(w: &mut W, cloud: &PointCloud, encoding: PlyEncoding) -> Result<()> {
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {format} 1.0")?;
    writeln!(w, "comment scene {}", cloud.scene_id())?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    if cloud.colors().is_some() {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    if cloud.normals().is_some() {
        writeln!(w, "property float nx\nproperty float ny\nproperty float nz")?;
    }
    if cloud.labels().is_some() {
        writeln!(w, "property int label")?;
    }
    if cloud.instances().is_some() {
        writeln!(w, "property int instance")?;
    }
    writeln!(w, "end_header")?;

    for i in 0..cloud.len() {
        let p = cloud.positions()[i].map(|v| v as f32);
        let rgb = cloud.colors().map(|c| c[i].map(color_byte));
        let n = cloud.normals().map(|n| n[i].map(|v| v as f32));
        let label = cloud.labels().map(|l| l[i]);
        let inst = cloud.instances().map(|l| l[i]);
        match encoding {
            PlyEncoding::Ascii => {
                let mut parts: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
                if let Some(rgb) = rgb {
                    parts.extend(rgb.iter().map(u8::to_string));
                }
                if let Some(n) = n {
                    parts.extend(n.iter().map(|v| format!("{v:?}")));
                }
                parts.extend(label.iter().chain(inst.iter()).map(i32::to_string));
                writeln!(w, "{}", parts.join(" "))?;
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in p {
                    w.write_all(&v.to_le_bytes())?;
                }
                if let Some(rgb) = rgb {
                    w.write_all(&rgb)?;
                }
                if let Some(n) = n {
                    for v in n {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                for v in label.iter().chain(inst.iter()) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

/// Rounds every attribute to what a PLY round trip preserves.
pub fn quantize(cloud: &PointCloud) -> Result<PointCloud> {
    let mut buf = Vec::new();
    write_ply(&mut buf, cloud, PlyEncoding::BinaryLittleEndian)?;
    read_ply(&buf[..], cloud.scene_id())
}
