//! Binary little-endian PLY persistence for Gaussian clouds.
//!
//! Written files carry one `vertex` element with properties
//! `x y z scale rot_w rot_x rot_y rot_z red green blue opacity` (float),
//! `label` (ushort) and `bind_idx` (int, −1 = unbound), plus the comment line
//! `sgw_version 1`. The reader accepts any property order and any scalar type,
//! so floats are stored as f32 and round-trip exactly only for f32 values.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::GaussianCloud;
use crate::error::{Error, Result};

pub const PLY_VERSION_COMMENT: &str = "sgw_version 1";

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "scale", "rot_w", "rot_x", "rot_y", "rot_z", "red", "green", "blue", "opacity", "label", "bind_idx",
];

pub fn save_ply(cloud: &GaussianCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io_path(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_ply(cloud, &mut w)?;
    w.flush().map_err(|e| Error::io_path(path, e))
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io_path(path, e))?;
    read_ply(BufReader::new(file))
}

pub fn write_ply<W: Write>(cloud: &GaussianCloud, out: &mut W) -> Result<()> {
    cloud.validate()?;
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("comment {PLY_VERSION_COMMENT}\n"));
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    for name in &REQUIRED[..12] {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("property ushort label\nproperty int bind_idx\nend_header\n");
    out.write_all(header.as_bytes())?;

    let mut rec = Vec::with_capacity(12 * 4 + 2 + 4);
    for i in 0..cloud.len() {
        rec.clear();
        let p = &cloud.positions[i];
        let q = &cloud.rotations[i];
        let c = &cloud.colors[i];
        let floats = [
            p.x,
            p.y,
            p.z,
            cloud.scales[i],
            q[0],
            q[1],
            q[2],
            q[3],
            c.x,
            c.y,
            c.z,
            cloud.opacities[i],
        ];
        for v in floats {
            rec.extend_from_slice(&(v as f32).to_le_bytes());
        }
        rec.extend_from_slice(&cloud.labels[i].to_le_bytes());
        let b: i32 = cloud.bind_idx[i].map_or(-1, |v| v as i32);
        rec.extend_from_slice(&b.to_le_bytes());
        out.write_all(&rec)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

pub fn read_ply<R: Read>(input: R) -> Result<GaussianCloud> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<R>| -> Result<String> {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::format("ply: header ended before end_header"));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };

    if next_line(&mut reader)? != "ply" {
        return Err(Error::format("ply: missing magic line"));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    let mut seen_format = false;
    loop {
        let l = next_line(&mut reader)?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::format(format!("ply: unsupported format {fmt}")));
                }
                seen_format = true;
            }
            ["comment" | "obj_info", ..] | [] => {}
            ["element", name, n] => {
                if count.is_some() {
                    return Err(Error::format(format!("ply: unexpected element {name}")));
                }
                if *name != "vertex" {
                    return Err(Error::format(format!("ply: expected vertex element, found {name}")));
                }
                count = Some(
                    n.parse()
                        .map_err(|_| Error::format(format!("ply: bad element count {n}")))?,
                );
                in_vertex = true;
            }
            ["property", "list", ..] => {
                return Err(Error::format("ply: list properties are not supported"));
            }
            ["property", ty, name] => {
                if !in_vertex {
                    return Err(Error::format("ply: property outside an element"));
                }
                let ty = Scalar::parse(ty).ok_or_else(|| Error::format(format!("ply: unknown property type {ty}")))?;
                props.push((name.to_string(), ty));
            }
            _ => return Err(Error::format(format!("ply: malformed header line {l:?}"))),
        }
    }
    if !seen_format {
        return Err(Error::format("ply: missing format line"));
    }
    let n = count.ok_or_else(|| Error::format("ply: missing vertex element"))?;

    let mut offsets = Vec::with_capacity(REQUIRED.len());
    for name in REQUIRED {
        let mut off = 0;
        let mut found = None;
        for (pname, ty) in &props {
            if pname == name {
                found = Some((off, *ty));
                break;
            }
            off += ty.size();
        }
        offsets.push(found.ok_or_else(|| Error::format(format!("ply: missing required property: {name}")))?);
    }
    let stride: usize = props.iter().map(|(_, t)| t.size()).sum();
    let mut buf = vec![0u8; stride];
    let mut cloud = GaussianCloud::new();
    for i in 0..n {
        reader
            .read_exact(&mut buf)
            .map_err(|_| Error::format(format!("ply: truncated at vertex {i} of {n}")))?;
        let v: Vec<f64> = offsets.iter().map(|&(o, t)| t.read(&buf[o..])).collect();
        cloud.positions.push(Vector3::new(v[0], v[1], v[2]));
        cloud.scales.push(v[3]);
        cloud.rotations.push([v[4], v[5], v[6], v[7]]);
        cloud.colors.push(Vector3::new(v[8], v[9], v[10]));
        cloud.opacities.push(v[11]);
        if !(0.0..=u16::MAX as f64).contains(&v[12]) || v[12].fract() != 0.0 {
            return Err(Error::format(format!("ply: bad label at vertex {i}")));
        }
        cloud.labels.push(v[12] as u16);
        cloud.bind_idx.push(if v[13] < 0.0 { None } else { Some(v[13] as u32) });
    }
    cloud.validate()?;
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::IDENTITY_QUAT;

    fn f32_cloud() -> GaussianCloud {
        let mut c = GaussianCloud::new();
        for i in 0..7 {
            let f = |x: f64| x as f32 as f64;
            c.positions
                .push(Vector3::new(f(0.1 * i as f64), f(-0.3), f(1.7 + i as f64)));
            c.scales.push(f(0.01 + 0.002 * i as f64));
            c.rotations.push(IDENTITY_QUAT);
            c.colors.push(Vector3::new(f(0.2), f(0.5), f(i as f64 / 7.0)));
            c.opacities.push(f(0.1));
            c.labels.push(i as u16 * 3);
            c.bind_idx.push(if i == 3 { None } else { Some(i * 11) });
        }
        c
    }

    fn to_bytes(c: &GaussianCloud) -> Vec<u8> {
        let mut out = Vec::new();
        write_ply(c, &mut out).unwrap();
        out
    }

    #[test]
    fn roundtrip_bit_exact() {
        let c = f32_cloud();
        let bytes = to_bytes(&c);
        let back = read_ply(bytes.as_slice()).unwrap();
        assert_eq!(back, c);
        assert_eq!(to_bytes(&back), bytes);
        let header = String::from_utf8_lossy(&bytes[..200]);
        assert!(header.contains("comment sgw_version 1"));
    }

    #[test]
    fn empty_roundtrip() {
        let c = GaussianCloud::new();
        assert_eq!(read_ply(to_bytes(&c).as_slice()).unwrap(), c);
    }

    #[test]
    fn missing_property_is_named() {
        let c = f32_cloud();
        let bytes = to_bytes(&c);
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let mangled = text.replacen("property float opacity", "property float opakity", 1);
        let err = read_ply(mangled.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("opacity"), "{err}");
    }

    #[test]
    fn malformed_headers() {
        assert!(read_ply(&b"plx\n"[..]).is_err());
        assert!(read_ply(&b"ply\nformat ascii 1.0\nend_header\n"[..]).is_err());
        let bytes = to_bytes(&f32_cloud());
        assert!(read_ply(&bytes[..bytes.len() - 1]).is_err());
    }
}
