//! `SGBM1` skinned-body container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    "SGBM1" 0x00
//! version  u16 (= 1)
//! nsect    u16
//! section* name_len u8, name (ASCII), payload_len u64, payload
//! ```
//!
//! Sections, each payload starting with its own counts:
//!
//! | name        | payload                                        |
//! |-------------|------------------------------------------------|
//! | VERTS       | u32 V, V×3 f64                                 |
//! | FACES       | u32 F, F×3 u32                                 |
//! | JOINTS      | u32 J, J×3 f64                                 |
//! | PARENTS     | u32 J, J i32 (−1 = root)                       |
//! | WEIGHTS     | u32 N, N×(u32 vertex, u32 joint, f64 weight)   |
//! | SHAPE_DIRS  | u32 V, u32 B, V×3×B f64 (`[vertex][axis][b]`)   |
//! | EXPR_DIRS   | u32 V, u32 E, V×3×E f64                        |
//! | LABELS      | u32 V, V u16                                   |
//! | LABEL_NAMES | u32 L, L×(u16 id, u32 len, UTF-8 bytes)        |
//!
//! Unknown sections are skipped. Weights are not renormalized on load.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{BodyData, SkinnedBody};
use crate::error::{Error, Result};

pub const BODY_MAGIC: &[u8; 6] = b"SGBM1\0";
pub const BODY_VERSION: u16 = 1;

const SECTIONS: [&str; 9] = [
    "VERTS",
    "FACES",
    "JOINTS",
    "PARENTS",
    "WEIGHTS",
    "SHAPE_DIRS",
    "EXPR_DIRS",
    "LABELS",
    "LABEL_NAMES",
];

pub fn save_body(body: &SkinnedBody, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io_path(path, e))?;
    write_body(body, &mut file).map_err(|e| match e {
        Error::Io(io) => Error::io_path(path, io),
        e => e,
    })
}

pub fn load_body(path: impl AsRef<Path>) -> Result<SkinnedBody> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io_path(path, e))?;
    read_body(&mut file)
}

pub fn write_body<W: Write>(body: &SkinnedBody, out: &mut W) -> Result<()> {
    let d = body.data();
    let mut sections: Vec<(&str, Vec<u8>)> = Vec::with_capacity(SECTIONS.len());

    let mut p = Vec::new();
    put_u32(&mut p, d.vertices.len());
    d.vertices.iter().for_each(|v| put_vec3(&mut p, v));
    sections.push(("VERTS", p));

    let mut p = Vec::new();
    put_u32(&mut p, d.faces.len());
    for f in &d.faces {
        f.iter().for_each(|i| p.extend_from_slice(&i.to_le_bytes()));
    }
    sections.push(("FACES", p));

    let mut p = Vec::new();
    put_u32(&mut p, d.joints.len());
    d.joints.iter().for_each(|v| put_vec3(&mut p, v));
    sections.push(("JOINTS", p));

    let mut p = Vec::new();
    put_u32(&mut p, d.parents.len());
    d.parents.iter().for_each(|x| p.extend_from_slice(&x.to_le_bytes()));
    sections.push(("PARENTS", p));

    let mut p = Vec::new();
    put_u32(&mut p, d.weights.iter().map(Vec::len).sum());
    for (v, row) in d.weights.iter().enumerate() {
        for &(j, w) in row {
            put_u32(&mut p, v);
            p.extend_from_slice(&j.to_le_bytes());
            p.extend_from_slice(&w.to_le_bytes());
        }
    }
    sections.push(("WEIGHTS", p));

    for (name, n, dirs) in [
        ("SHAPE_DIRS", d.num_betas, &d.shape_dirs),
        ("EXPR_DIRS", d.num_exprs, &d.expr_dirs),
    ] {
        let mut p = Vec::new();
        put_u32(&mut p, d.vertices.len());
        put_u32(&mut p, n);
        dirs.iter().for_each(|x| p.extend_from_slice(&x.to_le_bytes()));
        sections.push((name, p));
    }

    let mut p = Vec::new();
    put_u32(&mut p, d.labels.len());
    d.labels.iter().for_each(|l| p.extend_from_slice(&l.to_le_bytes()));
    sections.push(("LABELS", p));

    let mut p = Vec::new();
    put_u32(&mut p, d.label_names.len());
    for (id, name) in &d.label_names {
        p.extend_from_slice(&id.to_le_bytes());
        put_u32(&mut p, name.len());
        p.extend_from_slice(name.as_bytes());
    }
    sections.push(("LABEL_NAMES", p));

    out.write_all(BODY_MAGIC)?;
    out.write_all(&BODY_VERSION.to_le_bytes())?;
    out.write_all(&(sections.len() as u16).to_le_bytes())?;
    for (name, payload) in sections {
        out.write_all(&[name.len() as u8])?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(payload.len() as u64).to_le_bytes())?;
        out.write_all(&payload)?;
    }
    Ok(())
}

pub fn read_body<R: Read>(input: &mut R) -> Result<SkinnedBody> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor::new(&bytes);
    if cur.take(6)? != BODY_MAGIC {
        return Err(Error::format("not an SGBM1 body file (bad magic)"));
    }
    let version = cur.u16()?;
    if version != BODY_VERSION {
        return Err(Error::format(format!("unsupported SGBM1 version {version}")));
    }
    let nsect = cur.u16()?;
    let mut found: BTreeMap<String, &[u8]> = BTreeMap::new();
    for _ in 0..nsect {
        let name_len = cur.take(1)?[0] as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::format("section name is not ASCII"))?
            .to_string();
        let len = cur.u64()? as usize;
        let payload = cur.take(len)?;
        if found.insert(name.clone(), payload).is_some() {
            return Err(Error::format(format!("duplicate section {name}")));
        }
    }
    if cur.remaining() != 0 {
        return Err(Error::format("trailing bytes after last section"));
    }
    let section = |name: &str| {
        found
            .get(name)
            .map(|p| Cursor::new(p))
            .ok_or_else(|| Error::format(format!("missing section {name}")))
    };

    let mut s = section("VERTS")?;
    let nv = s.count()?;
    let vertices = (0..nv).map(|_| s.vec3()).collect::<Result<Vec<_>>>()?;
    s.finish("VERTS")?;

    let mut s = section("FACES")?;
    let nf = s.count()?;
    let faces = (0..nf)
        .map(|_| Ok([s.u32()?, s.u32()?, s.u32()?]))
        .collect::<Result<Vec<_>>>()?;
    s.finish("FACES")?;

    let mut s = section("JOINTS")?;
    let nj = s.count()?;
    let joints = (0..nj).map(|_| s.vec3()).collect::<Result<Vec<_>>>()?;
    s.finish("JOINTS")?;

    let mut s = section("PARENTS")?;
    let np = s.count()?;
    let parents = (0..np).map(|_| s.i32()).collect::<Result<Vec<_>>>()?;
    s.finish("PARENTS")?;

    let mut s = section("WEIGHTS")?;
    let nw = s.count()?;
    let mut weights = vec![Vec::new(); nv];
    for _ in 0..nw {
        let v = s.u32()? as usize;
        let j = s.u32()?;
        let w = s.f64()?;
        weights
            .get_mut(v)
            .ok_or_else(|| Error::format(format!("weight vertex index {v} out of range")))?
            .push((j, w));
    }
    s.finish("WEIGHTS")?;

    let dirs = |name: &str| -> Result<(usize, Vec<f64>)> {
        let mut s = section(name)?;
        let v = s.count()?;
        if v != nv {
            return Err(Error::format(format!("{name}: vertex count {v} != {nv}")));
        }
        let k = s.count()?;
        let n = nv
            .checked_mul(3 * k)
            .ok_or_else(|| Error::format(format!("{name}: size overflow")))?;
        let vals = (0..n).map(|_| s.f64()).collect::<Result<Vec<_>>>()?;
        s.finish(name)?;
        Ok((k, vals))
    };
    let (num_betas, shape_dirs) = dirs("SHAPE_DIRS")?;
    let (num_exprs, expr_dirs) = dirs("EXPR_DIRS")?;

    let mut s = section("LABELS")?;
    let nl = s.count()?;
    let labels = (0..nl).map(|_| s.u16()).collect::<Result<Vec<_>>>()?;
    s.finish("LABELS")?;

    let mut s = section("LABEL_NAMES")?;
    let nn = s.count()?;
    let mut label_names = BTreeMap::new();
    for _ in 0..nn {
        let id = s.u16()?;
        let len = s.count()?;
        let name = std::str::from_utf8(s.take(len)?)
            .map_err(|_| Error::format("label name is not UTF-8"))?
            .to_string();
        if label_names.insert(id, name).is_some() {
            return Err(Error::format(format!("duplicate label id {id}")));
        }
    }
    s.finish("LABEL_NAMES")?;

    SkinnedBody::new(BodyData {
        vertices,
        faces,
        joints,
        parents,
        weights,
        num_betas,
        shape_dirs,
        num_exprs,
        expr_dirs,
        labels,
        label_names,
    })
}

fn put_u32(out: &mut Vec<u8>, n: usize) {
    out.extend_from_slice(&(n as u32).to_le_bytes());
}

fn put_vec3(out: &mut Vec<u8>, v: &Vector3<f64>) {
    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format("unexpected end of body file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn count(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn vec3(&mut self) -> Result<Vector3<f64>> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn finish(&self, name: &str) -> Result<()> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(Error::format(format!(
                "section {name} has {} trailing bytes",
                self.remaining()
            )))
        }
    }
}
