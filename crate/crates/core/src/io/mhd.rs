//! MetaImage (.mhd + .raw) reader and writer.
//!
//! Deliberately a narrow subset: 3-D, binary, uncompressed, little-endian,
//! MET_FLOAT or MET_SHORT, 1 or 3 components per voxel, raw data in a
//! sibling file. Scalar volumes are written as MET_FLOAT (f32 on disk);
//! MET_SHORT is accepted on read only. Three-component fields are stored
//! interleaved per voxel (xyzxyz...), matching ITK.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::volume::{DisplacementField, Volume};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum ElementType {
    Float,
    Short,
}

impl ElementType {
    fn byte_size(self) -> usize {
        match self {
            ElementType::Float => 4,
            ElementType::Short => 2,
        }
    }
}

struct Header {
    grid: Grid,
    channels: usize,
    element_type: ElementType,
    data_file: String,
}

fn parse_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        msg: format!("{}: {}", path.display(), msg.into()),
    }
}

/// Splits a header into (line, byte offset of line start) pairs, tolerating
/// CRLF endings. Offsets are into the raw file, for error reporting.
fn header_lines(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split('\n') {
        out.push((offset, line.strip_suffix('\r').unwrap_or(line)));
        offset += line.len() + 1;
    }
    out
}

fn parse_fixed<T: std::str::FromStr>(
    path: &Path,
    offset: usize,
    key: &str,
    value: &str,
    n: usize,
) -> Result<Vec<T>> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != n {
        return Err(parse_err(
            path,
            offset,
            format!("{key} expects {n} values, found {}", parts.len()),
        ));
    }
    let mut out = Vec::with_capacity(n);
    for p in parts {
        match p.parse::<T>() {
            Ok(v) => out.push(v),
            Err(_) => {
                return Err(parse_err(path, offset, format!("{key}: bad value '{p}'")));
            }
        }
    }
    Ok(out)
}

fn parse_header(path: &Path, text: &str) -> Result<Header> {
    let mut dims: Option<[usize; 3]> = None;
    let mut spacing: Option<[f64; 3]> = None;
    let mut origin = [0.0f64; 3];
    let mut channels = 1usize;
    let mut element_type: Option<ElementType> = None;
    let mut data_file: Option<String> = None;
    let mut seen: Vec<String> = Vec::new();

    for (offset, line) in header_lines(text) {
        if line.trim().is_empty() {
            continue;
        }
        if data_file.is_some() {
            return Err(parse_err(path, offset, "content after ElementDataFile"));
        }
        let Some(eq) = line.find('=') else {
            return Err(parse_err(path, offset, "expected 'Key = Value'"));
        };
        let key = line[..eq].trim();
        let value = line[eq + 1..].trim();
        if seen.iter().any(|k| k == key) {
            return Err(parse_err(path, offset, format!("duplicate key {key}")));
        }
        seen.push(key.to_string());

        match key {
            "ObjectType" => {
                if value != "Image" {
                    return Err(parse_err(path, offset, format!("ObjectType must be Image, found '{value}'")));
                }
            }
            "NDims" => {
                if value != "3" {
                    return Err(parse_err(path, offset, format!("only NDims = 3 is supported, found '{value}'")));
                }
            }
            "BinaryData" => {
                if value != "True" {
                    return Err(parse_err(path, offset, "only binary data is supported"));
                }
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => {
                if value != "False" {
                    return Err(parse_err(path, offset, "big-endian data is not supported"));
                }
            }
            "CompressedData" => {
                if value != "False" {
                    return Err(parse_err(path, offset, "compressed data is not supported"));
                }
            }
            "DimSize" => {
                let v: Vec<usize> = parse_fixed(path, offset, key, value, 3)?;
                if v.iter().any(|&d| d == 0) {
                    return Err(parse_err(path, offset, "DimSize entries must be positive"));
                }
                dims = Some([v[0], v[1], v[2]]);
            }
            "ElementSpacing" => {
                let v: Vec<f64> = parse_fixed(path, offset, key, value, 3)?;
                if v.iter().any(|s| !s.is_finite() || *s <= 0.0) {
                    return Err(parse_err(path, offset, "ElementSpacing entries must be positive"));
                }
                spacing = Some([v[0], v[1], v[2]]);
            }
            "Offset" => {
                let v: Vec<f64> = parse_fixed(path, offset, key, value, 3)?;
                if v.iter().any(|o| !o.is_finite()) {
                    return Err(parse_err(path, offset, "Offset entries must be finite"));
                }
                origin = [v[0], v[1], v[2]];
            }
            "ElementType" => {
                element_type = Some(match value {
                    "MET_FLOAT" => ElementType::Float,
                    "MET_SHORT" => ElementType::Short,
                    other => {
                        return Err(parse_err(path, offset, format!("unsupported ElementType '{other}'")));
                    }
                });
            }
            "ElementNumberOfChannels" => {
                channels = match value {
                    "1" => 1,
                    "3" => 3,
                    other => {
                        return Err(parse_err(path, offset, format!("ElementNumberOfChannels must be 1 or 3, found '{other}'")));
                    }
                };
            }
            "ElementDataFile" => {
                if value.is_empty() {
                    return Err(parse_err(path, offset, "ElementDataFile must name a file"));
                }
                if value.contains('/') || value.contains('\\') || value == "LOCAL" || value == "LIST" {
                    return Err(parse_err(
                        path,
                        offset,
                        "ElementDataFile must be a bare file name next to the header",
                    ));
                }
                data_file = Some(value.to_string());
            }
            other => {
                return Err(parse_err(path, offset, format!("unknown key '{other}'")));
            }
        }
    }

    let end = text.len();
    let missing = |k: &str| parse_err(path, end, format!("missing required key {k}"));
    let dims = dims.ok_or_else(|| missing("DimSize"))?;
    let spacing = spacing.ok_or_else(|| missing("ElementSpacing"))?;
    let element_type = element_type.ok_or_else(|| missing("ElementType"))?;
    let data_file = data_file.ok_or_else(|| missing("ElementDataFile"))?;
    if !seen.iter().any(|k| k == "NDims") {
        return Err(missing("NDims"));
    }
    Ok(Header {
        grid: Grid::new(dims, spacing, origin)?,
        channels,
        element_type,
        data_file,
    })
}

fn read_raw(header_path: &Path, h: &Header) -> Result<Vec<f64>> {
    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    let raw_path = dir.join(&h.data_file);
    let bytes = fs::read(&raw_path).map_err(|e| super::io_at(&raw_path, e))?;
    let count = h.grid.len() * h.channels;
    let expected = count * h.element_type.byte_size();
    if bytes.len() != expected {
        return Err(Error::Input(format!(
            "{}: expected {} bytes ({}x{}x{} voxels, {} channel(s), {} bytes each), found {}",
            raw_path.display(),
            expected,
            h.grid.dims[0],
            h.grid.dims[1],
            h.grid.dims[2],
            h.channels,
            h.element_type.byte_size(),
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(count);
    match h.element_type {
        ElementType::Float => {
            for (i, c) in bytes.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
                if !v.is_finite() {
                    return Err(Error::Input(format!(
                        "{}: non-finite value at element {i}",
                        raw_path.display()
                    )));
                }
                data.push(v);
            }
        }
        ElementType::Short => {
            for c in bytes.chunks_exact(2) {
                data.push(i16::from_le_bytes([c[0], c[1]]) as f64);
            }
        }
    }
    Ok(data)
}

fn read_image(path: &Path) -> Result<(Header, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| super::io_at(path, e))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| parse_err(path, e.valid_up_to(), "header is not valid UTF-8"))?;
    let header = parse_header(path, text)?;
    let data = read_raw(path, &header)?;
    Ok((header, data))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let (h, data) = read_image(path)?;
    if h.channels != 1 {
        return Err(Error::Input(format!(
            "{}: expected a scalar volume, file has {} channels",
            path.display(),
            h.channels
        )));
    }
    Volume::new(h.grid, data)
}

pub fn read_field(path: impl AsRef<Path>) -> Result<DisplacementField> {
    let path = path.as_ref();
    let (h, data) = read_image(path)?;
    if h.channels != 3 {
        return Err(Error::Input(format!(
            "{}: expected a 3-component field, file has {} channel(s)",
            path.display(),
            h.channels
        )));
    }
    let n = h.grid.len();
    let mut comps = [
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    ];
    for chunk in data.chunks_exact(3) {
        comps[0].push(chunk[0]);
        comps[1].push(chunk[1]);
        comps[2].push(chunk[2]);
    }
    DisplacementField::new(h.grid, comps)
}

fn raw_name_for(path: &Path) -> Result<(PathBuf, String)> {
    let raw_path = path.with_extension("raw");
    let name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Parameter(format!("{}: cannot derive a raw file name", path.display())))?
        .to_string();
    Ok((raw_path, name))
}

fn write_image<'a>(
    path: &Path,
    grid: &Grid,
    channels: usize,
    values: impl Iterator<Item = &'a f64>,
) -> Result<()> {
    let (raw_path, raw_name) = raw_name_for(path)?;

    let mut header = String::new();
    let _ = writeln!(header, "ObjectType = Image");
    let _ = writeln!(header, "NDims = 3");
    let _ = writeln!(header, "BinaryData = True");
    let _ = writeln!(header, "BinaryDataByteOrderMSB = False");
    let _ = writeln!(header, "CompressedData = False");
    let _ = writeln!(header, "DimSize = {} {} {}", grid.dims[0], grid.dims[1], grid.dims[2]);
    let _ = writeln!(
        header,
        "ElementSpacing = {} {} {}",
        grid.spacing[0], grid.spacing[1], grid.spacing[2]
    );
    let _ = writeln!(header, "Offset = {} {} {}", grid.origin[0], grid.origin[1], grid.origin[2]);
    let _ = writeln!(header, "ElementType = MET_FLOAT");
    if channels != 1 {
        let _ = writeln!(header, "ElementNumberOfChannels = {channels}");
    }
    let _ = writeln!(header, "ElementDataFile = {raw_name}");

    let mut raw = Vec::with_capacity(grid.len() * channels * 4);
    for v in values {
        raw.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, header).map_err(|e| super::io_at(path, e))?;
    fs::write(&raw_path, raw).map_err(|e| super::io_at(&raw_path, e))?;
    Ok(())
}

/// Writes the volume as MET_FLOAT; values are narrowed to f32 on disk.
pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    write_image(path.as_ref(), v.grid(), 1, v.data().iter())
}

pub fn write_field(path: impl AsRef<Path>, f: &DisplacementField) -> Result<()> {
    let grid = f.grid();
    let n = grid.len();
    let (x, y, z) = (f.component(0), f.component(1), f.component(2));
    let mut interleaved = Vec::with_capacity(3 * n);
    for i in 0..n {
        interleaved.push(x[i]);
        interleaved.push(y[i]);
        interleaved.push(z[i]);
    }
    write_image(path.as_ref(), grid, 3, interleaved.iter())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn tdir() -> tempfile::TempDir {
        tempfile::tempdir().expect("tempdir")
    }

    fn f32_noise(grid: Grid, seed: u64) -> Volume {
        let mut rng = CounterRng::new(seed);
        let data: Vec<f64> = (0..grid.len())
            .map(|_| (rng.uniform_in(-100.0, 100.0) as f32) as f64)
            .collect();
        Volume::new(grid, data).unwrap()
    }

    #[test]
    fn volume_round_trip_is_bit_exact() {
        let dir = tdir();
        let grid = Grid::new([9, 8, 7], [1.5, 0.8, 2.0], [-4.0, 3.25, 12.5]).unwrap();
        let v = f32_noise(grid, 11);
        let path = dir.path().join("vol.mhd");
        write_volume(&path, &v).unwrap();
        let r = read_volume(&path).unwrap();
        assert_eq!(r.grid().dims, grid.dims);
        assert_eq!(r.grid().spacing, grid.spacing);
        assert_eq!(r.grid().origin, grid.origin);
        assert_eq!(r.data(), v.data());
    }

    #[test]
    fn field_round_trip_and_interleaving() {
        let dir = tdir();
        let grid = Grid::isotropic([4, 3, 2]);
        let f = DisplacementField::from_fn(grid, |[x, y, z]| {
            [x as f64, 10.0 + y as f64, -5.0 * z as f64]
        })
        .unwrap();
        let path = dir.path().join("field.mhd");
        write_field(&path, &f).unwrap();
        let r = read_field(&path).unwrap();
        for c in 0..3 {
            assert_eq!(r.component(c), f.component(c));
        }
        // On disk the components are interleaved per voxel.
        let raw = std::fs::read(dir.path().join("field.raw")).unwrap();
        let i = grid.index(2, 1, 1);
        for c in 0..3 {
            let off = (3 * i + c) * 4;
            let got = f32::from_le_bytes(raw[off..off + 4].try_into().unwrap()) as f64;
            assert_eq!(got, f.component(c)[i]);
        }
    }

    #[test]
    fn reads_met_short() {
        let dir = tdir();
        let header = "NDims = 3\nDimSize = 2 2 1\nElementSpacing = 1 1 1\nOffset = 0 0 0\nElementType = MET_SHORT\nElementDataFile = s.raw\n";
        std::fs::write(dir.path().join("s.mhd"), header).unwrap();
        let shorts: [i16; 4] = [-1024, 0, 1, 3071];
        let mut raw = Vec::new();
        for s in shorts {
            raw.extend_from_slice(&s.to_le_bytes());
        }
        std::fs::write(dir.path().join("s.raw"), raw).unwrap();
        let v = read_volume(dir.path().join("s.mhd")).unwrap();
        assert_eq!(v.data(), &[-1024.0, 0.0, 1.0, 3071.0]);
    }

    #[test]
    fn truncated_raw_names_expected_and_actual() {
        let dir = tdir();
        let grid = Grid::isotropic([3, 3, 3]);
        let path = dir.path().join("t.mhd");
        write_volume(&path, &Volume::zeros(grid)).unwrap();
        let raw = dir.path().join("t.raw");
        let bytes = std::fs::read(&raw).unwrap();
        std::fs::write(&raw, &bytes[..bytes.len() - 1]).unwrap();
        let err = read_volume(&path).unwrap_err();
        assert_eq!(err.code(), "E_INPUT");
        let msg = err.to_string();
        assert!(msg.contains("108"), "expected byte count in: {msg}");
        assert!(msg.contains("107"), "actual byte count in: {msg}");
    }

    #[test]
    fn unknown_key_is_rejected_with_offset() {
        let dir = tdir();
        let prefix = "NDims = 3\nDimSize = 1 1 1\n";
        let header = format!("{prefix}Banana = 1\nElementSpacing = 1 1 1\nElementType = MET_FLOAT\nElementDataFile = u.raw\n");
        let path = dir.path().join("u.mhd");
        std::fs::write(&path, header).unwrap();
        std::fs::write(dir.path().join("u.raw"), 0f32.to_le_bytes()).unwrap();
        let err = read_volume(&path).unwrap_err();
        assert_eq!(err.code(), "E_PARSE");
        match err {
            Error::Parse { offset, msg } => {
                assert_eq!(offset, prefix.len());
                assert!(msg.contains("Banana"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn big_endian_is_rejected() {
        let dir = tdir();
        let header = "NDims = 3\nBinaryDataByteOrderMSB = True\nDimSize = 1 1 1\nElementSpacing = 1 1 1\nElementType = MET_FLOAT\nElementDataFile = b.raw\n";
        let path = dir.path().join("b.mhd");
        std::fs::write(&path, header).unwrap();
        let err = read_volume(&path).unwrap_err();
        assert_eq!(err.code(), "E_PARSE");
        assert!(err.to_string().contains("big-endian"));
    }

    #[test]
    fn content_after_element_data_file_is_rejected() {
        let dir = tdir();
        let header = "NDims = 3\nDimSize = 1 1 1\nElementSpacing = 1 1 1\nElementType = MET_FLOAT\nElementDataFile = c.raw\nOffset = 0 0 0\n";
        let path = dir.path().join("c.mhd");
        std::fs::write(&path, header).unwrap();
        let err = read_volume(&path).unwrap_err();
        assert!(err.to_string().contains("after ElementDataFile"), "{err}");
    }

    #[test]
    fn missing_spacing_is_rejected() {
        let dir = tdir();
        let header = "NDims = 3\nDimSize = 1 1 1\nElementType = MET_FLOAT\nElementDataFile = m.raw\n";
        let path = dir.path().join("m.mhd");
        std::fs::write(&path, header).unwrap();
        let err = read_volume(&path).unwrap_err();
        assert!(err.to_string().contains("ElementSpacing"), "{err}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let dir = tdir();
        let header = "NDims = 3\nNDims = 3\nDimSize = 1 1 1\nElementSpacing = 1 1 1\nElementType = MET_FLOAT\nElementDataFile = d.raw\n";
        let path = dir.path().join("d.mhd");
        std::fs::write(&path, header).unwrap();
        let err = read_volume(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn channel_count_must_match_reader() {
        let dir = tdir();
        let grid = Grid::isotropic([2, 2, 2]);
        let vpath = dir.path().join("v.mhd");
        write_volume(&vpath, &Volume::zeros(grid)).unwrap();
        let err = read_field(&vpath).unwrap_err();
        assert_eq!(err.code(), "E_INPUT");
        assert!(err.to_string().contains("3-component"), "{err}");

        let fpath = dir.path().join("f.mhd");
        write_field(&fpath, &DisplacementField::zeros(grid)).unwrap();
        let err = read_volume(&fpath).unwrap_err();
        assert_eq!(err.code(), "E_INPUT");
        assert!(err.to_string().contains("scalar"), "{err}");
    }

    #[test]
    fn data_file_with_path_separator_is_rejected() {
        let dir = tdir();
        let header = "NDims = 3\nDimSize = 1 1 1\nElementSpacing = 1 1 1\nElementType = MET_FLOAT\nElementDataFile = ../p.raw\n";
        let path = dir.path().join("p.mhd");
        std::fs::write(&path, header).unwrap();
        let err = read_volume(&path).unwrap_err();
        assert!(err.to_string().contains("bare file name"), "{err}");
    }

    #[test]
    fn nan_in_raw_is_rejected() {
        let dir = tdir();
        let header = "NDims = 3\nDimSize = 1 1 1\nElementSpacing = 1 1 1\nElementType = MET_FLOAT\nElementDataFile = n.raw\n";
        std::fs::write(dir.path().join("n.mhd"), header).unwrap();
        std::fs::write(dir.path().join("n.raw"), f32::NAN.to_le_bytes()).unwrap();
        let err = read_volume(dir.path().join("n.mhd")).unwrap_err();
        assert_eq!(err.code(), "E_INPUT");
        assert!(err.to_string().contains("non-finite"), "{err}");
    }
}
