//! On-disk formats: permeability field files (text header, raw little-endian
//! doubles) and a versioned binary container used for datasets and trained
//! models. All writers are deterministic so reruns produce identical bytes.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

pub const FIELD_MAGIC: &str = "msfv-field v1";
pub const CONTAINER_MAGIC: &[u8; 8] = b"MSFVBIN\0";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct FieldHeader {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// "log-perm" or "perm".
    pub kind: String,
    /// Free-form seed/source note, single line.
    pub provenance: String,
}

pub fn write_field(path: &Path, header: &FieldHeader, values: &[f64]) -> Result<()> {
    if values.len() != header.nx * header.ny {
        return Err(CoreError::Shape(format!(
            "field has {} values for a {}x{} grid",
            values.len(),
            header.nx,
            header.ny
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{FIELD_MAGIC}")?;
    writeln!(w, "nx {}", header.nx)?;
    writeln!(w, "ny {}", header.ny)?;
    writeln!(w, "lx {}", header.lx)?;
    writeln!(w, "ly {}", header.ly)?;
    writeln!(w, "kind {}", header.kind)?;
    writeln!(w, "provenance {}", header.provenance)?;
    writeln!(w, "data")?;
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(FieldHeader, Vec<f64>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let marker = b"data\n";
    let data_at = find(&bytes, marker)
        .ok_or_else(|| CoreError::Format(format!("{}: missing data marker", path.display())))?;
    let header_text = std::str::from_utf8(&bytes[..data_at])
        .map_err(|_| CoreError::Format(format!("{}: header is not utf-8", path.display())))?;
    let mut lines = header_text.lines();
    if lines.next() != Some(FIELD_MAGIC) {
        return Err(CoreError::Format(format!("{}: not a field file", path.display())));
    }
    let mut header = FieldHeader {
        nx: 0,
        ny: 0,
        lx: 0.0,
        ly: 0.0,
        kind: String::new(),
        provenance: String::new(),
    };
    for line in lines {
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| CoreError::Format(format!("{}: bad header line {line:?}", path.display())))?;
        match key {
            "nx" => header.nx = parse(value, path, "nx")?,
            "ny" => header.ny = parse(value, path, "ny")?,
            "lx" => header.lx = parse(value, path, "lx")?,
            "ly" => header.ly = parse(value, path, "ly")?,
            "kind" => header.kind = value.to_string(),
            "provenance" => header.provenance = value.to_string(),
            _ => return Err(CoreError::Format(format!("{}: unknown header key {key:?}", path.display()))),
        }
    }
    let data = &bytes[data_at + marker.len()..];
    let n = header.nx * header.ny;
    if data.len() != n * 8 {
        return Err(CoreError::Format(format!(
            "{}: expected {} data bytes, found {}",
            path.display(),
            n * 8,
            data.len()
        )));
    }
    let values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

fn parse<T: std::str::FromStr>(value: &str, path: &Path, key: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CoreError::Format(format!("{}: bad {key} value {value:?}", path.display())))
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Kinded container with ordered key/value metadata and named f64 sections.
/// Readers validate the magic, version and kind; shapes are the caller's job.
#[derive(Debug, Clone)]
pub struct Container {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub sections: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Container { kind: kind.to_string(), meta: Vec::new(), sections: Vec::new() }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| CoreError::Format(format!("container missing key {key:?}")))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| CoreError::Format(format!("container key {key:?} has bad value {raw:?}")))
    }

    pub fn add_section(&mut self, name: &str, data: Vec<f64>) {
        self.sections.push((name.to_string(), data));
    }

    pub fn section(&self, name: &str) -> Result<&[f64]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_slice())
            .ok_or_else(|| CoreError::Format(format!("container missing section {name:?}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CONTAINER_MAGIC)?;
        w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
        write_str(&mut w, &self.kind)?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (k, v) in &self.meta {
            write_str(&mut w, k)?;
            write_str(&mut w, v)?;
        }
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for (name, data) in &self.sections {
            write_str(&mut w, name)?;
            w.write_all(&(data.len() as u64).to_le_bytes())?;
            let mut buf = Vec::with_capacity(data.len() * 8);
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read(path: &Path, expected_kind: &str) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0, path };
        let magic = cur.take(8)?;
        if magic != CONTAINER_MAGIC {
            return Err(CoreError::Format(format!("{}: not a container file", path.display())));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != CONTAINER_VERSION {
            return Err(CoreError::Format(format!(
                "{}: unsupported container version {version}",
                path.display()
            )));
        }
        let kind = cur.take_str()?;
        if kind != expected_kind {
            return Err(CoreError::Format(format!(
                "{}: kind {kind:?}, expected {expected_kind:?}",
                path.display()
            )));
        }
        let n_meta = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        let mut meta = Vec::with_capacity(n_meta as usize);
        for _ in 0..n_meta {
            let k = cur.take_str()?;
            let v = cur.take_str()?;
            meta.push((k, v));
        }
        let n_sections = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        let mut sections = Vec::with_capacity(n_sections as usize);
        for _ in 0..n_sections {
            let name = cur.take_str()?;
            let len = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
            let raw = cur.take(len * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            sections.push((name, data));
        }
        if cur.pos != bytes.len() {
            return Err(CoreError::Format(format!(
                "{}: {} trailing bytes",
                path.display(),
                bytes.len() - cur.pos
            )));
        }
        Ok(Container { kind, meta, sections })
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    assert!(bytes.len() <= u16::MAX as usize, "container string too long");
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::Format(format!("{}: truncated file", self.path.display())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_str(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| CoreError::Format(format!("{}: non-utf8 string", self.path.display())))
    }
}

/// Row-major CSV dump for eyeballing fields in external tools.
pub fn write_csv_grid(path: &Path, nx: usize, ny: usize, values: &[f64]) -> Result<()> {
    if values.len() != nx * ny {
        return Err(CoreError::Shape(format!("{} values for {nx}x{ny}", values.len())));
    }
    let mut w = BufWriter::new(File::create(path)?);
    for j in 0..ny {
        let row: Vec<String> = (0..nx).map(|i| format!("{}", values[j * nx + i])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_roundtrip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.field");
        let header = FieldHeader {
            nx: 3,
            ny: 2,
            lx: 1.0,
            ly: 0.5,
            kind: "log-perm".into(),
            provenance: "seed 7 stream 3".into(),
        };
        let values = vec![0.1, -2.5, 3.75, 0.0, f64::MIN_POSITIVE, 1e300];
        write_field(&path, &header, &values).unwrap();
        let (h2, v2) = read_field(&path).unwrap();
        assert_eq!(h2.nx, 3);
        assert_eq!(h2.ny, 2);
        assert_eq!(h2.kind, "log-perm");
        assert_eq!(h2.provenance, "seed 7 stream 3");
        for (a, b) in values.iter().zip(&v2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        let path2 = dir.path().join("g.field");
        write_field(&path2, &header, &values).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn field_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.field");
        std::fs::write(&path, b"not a field\n").unwrap();
        match read_field(&path) {
            Err(CoreError::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }

        let header = FieldHeader {
            nx: 2,
            ny: 2,
            lx: 1.0,
            ly: 1.0,
            kind: "perm".into(),
            provenance: "x".into(),
        };
        write_field(&path, &header, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 1);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_field(&path), Err(CoreError::Format(_))));
    }

    #[test]
    fn container_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let mut c = Container::new("msfv-test");
        c.set("alpha", 3usize);
        c.set("note", "hello world");
        c.add_section("a", vec![1.0, 2.0, 3.0]);
        c.add_section("b", vec![]);
        c.write(&path).unwrap();

        let r = Container::read(&path, "msfv-test").unwrap();
        assert_eq!(r.get_parsed::<usize>("alpha").unwrap(), 3);
        assert_eq!(r.get("note").unwrap(), "hello world");
        assert_eq!(r.section("a").unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(r.section("b").unwrap().len(), 0);
        assert!(r.section("missing").is_err());
        assert!(Container::read(&path, "other-kind").is_err());
    }

    #[test]
    fn csv_grid_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        write_csv_grid(&path, 2, 2, &[1.0, 2.5, -3.0, 4.0]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "1,2.5\n-3,4\n");
    }
}
