//! `.pvol` volume container.
//!
//! A file is one UTF-8 JSON header line terminated by `\n`:
//!
//! ```text
//! {"magic":"PVOL1","dims":[D,H,W],"voxel_size_mm":[a,b,c],"dtype":"f32le","subject_id":"s00","modality":"FPET"}
//! ```
//!
//! followed immediately by `D*H*W` samples in (D, H, W) row-major order.
//! Uptake volumes use `dtype: "f32le"` (little-endian `f32`); label atlases
//! use `dtype: "u8"` with `modality: "ATLAS"` and an extra
//! `reference_region` key.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::suvr::RoiAtlas;
use crate::volume::{Modality, Volume3D};

pub const MAGIC: &str = "PVOL1";
pub const ATLAS_MODALITY: &str = "ATLAS";

#[derive(Serialize)]
struct Header<'a> {
    magic: &'a str,
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    dtype: &'a str,
    subject_id: &'a str,
    modality: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_region: Option<u8>,
}

struct ParsedHeader {
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    dtype: String,
    subject_id: String,
    modality: String,
    reference_region: Option<u8>,
}

fn write_with_header(path: &Path, header: &Header<'_>, payload: &[u8]) -> Result<()> {
    let mut buf = serde_json::to_vec(header).expect("header serializes");
    buf.push(b'\n');
    buf.extend_from_slice(payload);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Serialize a volume to `.pvol` bytes.
pub fn encode_volume(vol: &Volume3D) -> Vec<u8> {
    let header = Header {
        magic: MAGIC,
        dims: vol.dims(),
        voxel_size_mm: vol.voxel_size_mm,
        dtype: "f32le",
        subject_id: &vol.subject_id,
        modality: vol.modality.as_str(),
        reference_region: None,
    };
    let mut buf = serde_json::to_vec(&header).expect("header serializes");
    buf.push(b'\n');
    buf.reserve(vol.data().len() * 4);
    for v in vol.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn write_volume(vol: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, encode_volume(vol))?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    decode_volume(&fs::read(path)?)
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume3D> {
    let (header, payload) = split_header(bytes)?;
    if header.dtype != "f32le" {
        return Err(Error::parse(
            "dtype",
            format!("expected \"f32le\" for an uptake volume, found {:?}", header.dtype),
        ));
    }
    let modality = Modality::parse(&header.modality).ok_or_else(|| {
        Error::parse("modality", format!("unknown modality {:?}", header.modality))
    })?;
    let n = check_payload(&header, payload.len(), 4)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .take(n)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut vol = Volume3D::new(header.dims, data, header.subject_id, modality)
        .map_err(|e| Error::parse("payload", e.to_string()))?;
    vol.voxel_size_mm = header.voxel_size_mm;
    Ok(vol)
}

pub fn write_atlas(atlas: &RoiAtlas, subject_id: &str, path: impl AsRef<Path>) -> Result<()> {
    let header = Header {
        magic: MAGIC,
        dims: atlas.dims(),
        voxel_size_mm: [1.0; 3],
        dtype: "u8",
        subject_id,
        modality: ATLAS_MODALITY,
        reference_region: Some(atlas.reference_region()),
    };
    write_with_header(path.as_ref(), &header, atlas.labels())
}

/// Returns the atlas and the subject id stored in its header.
pub fn read_atlas(path: impl AsRef<Path>) -> Result<(RoiAtlas, String)> {
    let bytes = fs::read(path)?;
    let (header, payload) = split_header(&bytes)?;
    if header.dtype != "u8" {
        return Err(Error::parse(
            "dtype",
            format!("expected \"u8\" for an atlas, found {:?}", header.dtype),
        ));
    }
    if header.modality != ATLAS_MODALITY {
        return Err(Error::parse(
            "modality",
            format!("expected {ATLAS_MODALITY:?}, found {:?}", header.modality),
        ));
    }
    let n = check_payload(&header, payload.len(), 1)?;
    let reference = header
        .reference_region
        .ok_or_else(|| Error::parse("reference_region", "missing for atlas"))?;
    let atlas = RoiAtlas::new(header.dims, payload[..n].to_vec(), reference)
        .map_err(|e| Error::parse("payload", e.to_string()))?;
    Ok((atlas, header.subject_id))
}

fn check_payload(header: &ParsedHeader, payload_len: usize, width: usize) -> Result<usize> {
    let n: usize = header.dims.iter().product();
    let expected = n * width;
    if payload_len < expected {
        return Err(Error::parse(
            "payload",
            format!(
                "truncated: dims {:?} need {expected} bytes, found {payload_len}",
                header.dims
            ),
        ));
    }
    if payload_len > expected {
        return Err(Error::parse(
            "dims",
            format!(
                "dims {:?} describe {expected} payload bytes but {payload_len} follow the header",
                header.dims
            ),
        ));
    }
    Ok(n)
}

fn split_header(bytes: &[u8]) -> Result<(ParsedHeader, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse("header", "no newline-terminated header line"))?;
    let text = std::str::from_utf8(&bytes[..nl])
        .map_err(|e| Error::parse("header", format!("not UTF-8: {e}")))?;
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::parse("header", format!("bad JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::parse("header", "not a JSON object"))?;
    let field = |name: &str| obj.get(name).ok_or_else(|| Error::parse(name, "missing"));

    match field("magic")?.as_str() {
        Some(MAGIC) => {}
        other => return Err(Error::parse("magic", format!("expected {MAGIC:?}, found {other:?}"))),
    }
    let dims = triple(field("dims")?, "dims", |v| {
        v.as_u64().filter(|&d| d >= 1).map(|d| d as usize)
    })?;
    let voxel_size_mm = triple(field("voxel_size_mm")?, "voxel_size_mm", |v| {
        v.as_f64().filter(|x| x.is_finite() && *x > 0.0)
    })?;
    let string = |name: &str| -> Result<String> {
        field(name)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::parse(name, "expected a string"))
    };
    let reference_region = match obj.get("reference_region") {
        None => None,
        Some(v) => Some(
            v.as_u64()
                .filter(|&r| r <= 255)
                .ok_or_else(|| Error::parse("reference_region", "expected an integer in [0, 255]"))?
                as u8,
        ),
    };
    Ok((
        ParsedHeader {
            dims,
            voxel_size_mm,
            dtype: string("dtype")?,
            subject_id: string("subject_id")?,
            modality: string("modality")?,
            reference_region,
        },
        &bytes[nl + 1..],
    ))
}

fn triple<T: Copy + Default>(
    v: &Value,
    name: &str,
    conv: impl Fn(&Value) -> Option<T>,
) -> Result<[T; 3]> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 3)
        .ok_or_else(|| Error::parse(name, "expected an array of 3 elements"))?;
    let mut out = [T::default(); 3];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = conv(x).ok_or_else(|| Error::parse(name, format!("invalid element {x}")))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Volume3D {
        let data = (0..24).map(|i| i as f32 * 0.25).collect();
        Volume3D::new([2, 3, 4], data, "s01", Modality::Lpet).unwrap()
    }

    #[test]
    fn header_layout_is_stable() {
        let bytes = encode_volume(&sample());
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes[..nl]).unwrap(),
            r#"{"magic":"PVOL1","dims":[2,3,4],"voxel_size_mm":[1.0,1.0,1.0],"dtype":"f32le","subject_id":"s01","modality":"LPET"}"#
        );
        assert_eq!(bytes.len() - nl - 1, 24 * 4);
        assert_eq!(&bytes[nl + 1 + 4..nl + 1 + 8], &0.25f32.to_le_bytes());
    }

    #[test]
    fn round_trip_preserves_voxel_size() {
        let vol = sample();
        let back = decode_volume(&encode_volume(&vol)).unwrap();
        assert_eq!(back, vol);
        assert_eq!(back.voxel_size_mm, [1.0, 1.0, 1.0]);
    }

    fn expect_field(bytes: &[u8], want: &str) {
        match decode_volume(bytes) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, want),
            other => panic!("expected parse error on {want}, got {other:?}"),
        }
    }

    #[test]
    fn dims_payload_mismatch_names_field() {
        let mut bytes = encode_volume(&sample());
        bytes.truncate(bytes.len() - 4);
        expect_field(&bytes, "payload");
        let mut bytes = encode_volume(&sample());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        expect_field(&bytes, "dims");
    }

    #[test]
    fn malformed_headers_name_field() {
        let payload = [0u8; 4];
        let mk = |h: &str| {
            let mut b = h.as_bytes().to_vec();
            b.push(b'\n');
            b.extend_from_slice(&payload);
            b
        };
        expect_field(
            &mk(r#"{"magic":"PVOL2","dims":[1,1,1],"voxel_size_mm":[1,1,1],"dtype":"f32le","subject_id":"a","modality":"FPET"}"#),
            "magic",
        );
        expect_field(
            &mk(r#"{"magic":"PVOL1","dims":[1,1],"voxel_size_mm":[1,1,1],"dtype":"f32le","subject_id":"a","modality":"FPET"}"#),
            "dims",
        );
        expect_field(
            &mk(r#"{"magic":"PVOL1","dims":[1,1,1],"voxel_size_mm":[1,1,1],"dtype":"u8","subject_id":"a","modality":"FPET"}"#),
            "dtype",
        );
        expect_field(
            &mk(r#"{"magic":"PVOL1","dims":[1,1,1],"voxel_size_mm":[1,1,1],"dtype":"f32le","modality":"FPET"}"#),
            "subject_id",
        );
        expect_field(
            &mk(r#"{"magic":"PVOL1","dims":[1,1,1],"voxel_size_mm":[1,1,1],"dtype":"f32le","subject_id":"a","modality":"CT"}"#),
            "modality",
        );
        expect_field(b"no newline", "header");
    }

    #[test]
    fn atlas_round_trip() {
        let atlas = RoiAtlas::new([1, 2, 2], vec![0, 1, 2, 1], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("atlas.pvol");
        write_atlas(&atlas, "s03", &p).unwrap();
        let (back, sid) = read_atlas(&p).unwrap();
        assert_eq!(sid, "s03");
        assert_eq!(back, atlas);
        // an atlas is not an uptake volume
        assert!(matches!(read_volume(&p), Err(Error::Parse { field, .. }) if field == "dtype"));
    }
}
