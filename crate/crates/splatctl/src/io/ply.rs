//! Binary PLY interchange for Gaussian sets and point clouds.
//!
//! Vertex layout (one element, little-endian):
//! `x y z nx ny nz f_dc_0..2 f_rest_0..(3B'-1) opacity scale_0..2 rot_0..3`
//! with `B' = (L+1)^2 - 1` higher-band coefficients per channel, channel-major
//! (all bands of R, then G, then B). Values are the RAW parameters — log
//! scales, opacity logits, unnormalized quaternions `(w, x, y, z)` — written
//! as doubles so a round trip is bit-exact. Import also accepts `float`
//! properties (widened) for ecosystem files, and infers the SH degree from
//! the `f_rest` count. Normals are written as zeros and ignored on read.

use std::path::Path;

use nalgebra::{Vector3, Vector4};

use crate::core::GaussianSet;
use crate::error::{io_err, Error, Result};

fn header_for(n: usize, basis: usize) -> String {
    let mut h = String::new();
    h.push_str("ply\nformat binary_little_endian 1.0\n");
    h.push_str(&format!("element vertex {n}\n"));
    for name in ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"] {
        h.push_str(&format!("property double {name}\n"));
    }
    for i in 0..3 * (basis - 1) {
        h.push_str(&format!("property double f_rest_{i}\n"));
    }
    for name in ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"] {
        h.push_str(&format!("property double {name}\n"));
    }
    h.push_str("end_header\n");
    h
}

pub fn export_ply(set: &GaussianSet, path: &Path) -> Result<()> {
    let n = set.len();
    let basis = set.basis_size();
    let mut bytes = header_for(n, basis).into_bytes();
    let put = |bytes: &mut Vec<u8>, v: f64| bytes.extend_from_slice(&v.to_le_bytes());
    for i in 0..n {
        for k in 0..3 {
            put(&mut bytes, set.positions[i][k]);
        }
        for _ in 0..3 {
            put(&mut bytes, 0.0);
        }
        let sh = set.sh_of(i);
        for ch in 0..3 {
            put(&mut bytes, sh[ch * basis]);
        }
        for ch in 0..3 {
            for b in 1..basis {
                put(&mut bytes, sh[ch * basis + b]);
            }
        }
        put(&mut bytes, set.opacity_logits[i]);
        for k in 0..3 {
            put(&mut bytes, set.log_scales[i][k]);
        }
        for k in 0..4 {
            put(&mut bytes, set.rotations[i][k]);
        }
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Scalar {
    F32,
    F64,
}

impl Scalar {
    fn size(self) -> usize {
        match self {
            Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

struct Header {
    count: usize,
    properties: Vec<String>,
    scalar: Scalar,
    payload_offset: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let head_err = |msg: &str| Error::PlyHeader(format!("{}: {msg}", path.display()));
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| head_err("missing end_header"))?;
    let header_text = std::str::from_utf8(&bytes[..end + marker.len()])
        .map_err(|_| head_err("header is not ASCII"))?;
    let mut lines = header_text.lines();
    if lines.next() != Some("ply") {
        return Err(head_err("missing ply magic"));
    }
    let mut count: Option<usize> = None;
    let mut properties = Vec::new();
    let mut scalar: Option<Scalar> = None;
    let mut format_seen = false;
    for line in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if line.trim() != "format binary_little_endian 1.0" {
                    return Err(head_err("only binary little-endian 1.0 is supported"));
                }
                format_seen = true;
            }
            Some("comment") => {}
            Some("element") => {
                if count.is_some() {
                    return Err(head_err("multiple elements are not supported"));
                }
                if tok.next() != Some("vertex") {
                    return Err(head_err("only a vertex element is supported"));
                }
                let n = tok
                    .next()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| head_err("bad vertex count"))?;
                count = Some(n);
            }
            Some("property") => {
                let ty = match tok.next() {
                    Some("double") => Scalar::F64,
                    Some("float") => Scalar::F32,
                    other => {
                        return Err(Error::PlyPropertyMismatch(format!(
                            "unsupported property type {other:?}"
                        )))
                    }
                };
                match scalar {
                    None => scalar = Some(ty),
                    Some(s) if s == ty => {}
                    Some(_) => {
                        return Err(Error::PlyPropertyMismatch(
                            "mixed float/double properties".into(),
                        ))
                    }
                }
                let name = tok
                    .next()
                    .ok_or_else(|| head_err("property without a name"))?;
                properties.push(name.to_string());
            }
            Some("end_header") => break,
            Some(other) => return Err(head_err(&format!("unexpected token {other}"))),
            None => {}
        }
    }
    if !format_seen {
        return Err(head_err("missing format line"));
    }
    let count = count.ok_or_else(|| head_err("missing vertex element"))?;
    Ok(Header {
        count,
        properties,
        scalar: scalar.unwrap_or(Scalar::F64),
        payload_offset: end + marker.len(),
    })
}

/// Checks the property-name sequence and returns the SH basis size.
fn gaussian_basis_from_properties(props: &[String]) -> Result<usize> {
    let mismatch = |msg: String| Error::PlyPropertyMismatch(msg);
    let lead = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"];
    if props.len() < lead.len() {
        return Err(mismatch(format!("only {} properties", props.len())));
    }
    for (i, want) in lead.iter().enumerate() {
        if props[i] != *want {
            return Err(mismatch(format!(
                "property {i} is {}, expected {want}",
                props[i]
            )));
        }
    }
    let mut i = lead.len();
    let mut rest = 0usize;
    while i < props.len() && props[i] == format!("f_rest_{rest}") {
        rest += 1;
        i += 1;
    }
    let tail = ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"];
    if props.len() != i + tail.len() {
        return Err(mismatch(format!(
            "{} trailing properties, expected {}",
            props.len() - i,
            tail.len()
        )));
    }
    for (k, want) in tail.iter().enumerate() {
        if props[i + k] != *want {
            return Err(mismatch(format!(
                "property {} is {}, expected {want}",
                i + k,
                props[i + k]
            )));
        }
    }
    if rest % 3 != 0 {
        return Err(mismatch(format!("f_rest count {rest} not divisible by 3")));
    }
    let basis = rest / 3 + 1;
    let degree_ok = (1..=4usize).any(|d| d * d == basis);
    if !degree_ok {
        return Err(mismatch(format!(
            "f_rest count {rest} implies non-square basis {basis}"
        )));
    }
    Ok(basis)
}

fn read_values(bytes: &[u8], scalar: Scalar, count: usize, props: usize) -> Result<Vec<f64>> {
    let expected = count * props * scalar.size();
    if bytes.len() < expected {
        return Err(Error::PlyTruncated {
            expected,
            got: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::PlyPropertyMismatch(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let mut out = Vec::with_capacity(count * props);
    match scalar {
        Scalar::F64 => {
            for c in bytes.chunks_exact(8) {
                out.push(f64::from_le_bytes(c.try_into().unwrap()));
            }
        }
        Scalar::F32 => {
            for c in bytes.chunks_exact(4) {
                out.push(f32::from_le_bytes(c.try_into().unwrap()) as f64);
            }
        }
    }
    Ok(out)
}

pub fn import_ply(path: &Path) -> Result<GaussianSet> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let header = parse_header(&bytes, path)?;
    let basis = gaussian_basis_from_properties(&header.properties)?;
    let degree = (1..=4).find(|d| d * d == basis).unwrap() - 1;
    let props = header.properties.len();
    let values = read_values(
        &bytes[header.payload_offset..],
        header.scalar,
        header.count,
        props,
    )?;
    let mut set = GaussianSet::new(degree);
    set.active_sh_degree = degree;
    let mut sh = vec![0.0; 3 * basis];
    for v in values.chunks_exact(props) {
        for ch in 0..3 {
            sh[ch * basis] = v[6 + ch];
        }
        for ch in 0..3 {
            for b in 1..basis {
                sh[ch * basis + b] = v[9 + ch * (basis - 1) + (b - 1)];
            }
        }
        let o = 9 + 3 * (basis - 1);
        set.push(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[o + 1], v[o + 2], v[o + 3]),
            Vector4::new(v[o + 4], v[o + 5], v[o + 6], v[o + 7]),
            v[o],
            &sh,
        );
    }
    Ok(set)
}

/// Plain point cloud: `x y z red green blue` as doubles, colors in [0, 1].
pub fn write_points_ply(path: &Path, points: &[Vector3<f64>], colors: &[[f64; 3]]) -> Result<()> {
    let mut h = String::new();
    h.push_str("ply\nformat binary_little_endian 1.0\n");
    h.push_str(&format!("element vertex {}\n", points.len()));
    for name in ["x", "y", "z", "red", "green", "blue"] {
        h.push_str(&format!("property double {name}\n"));
    }
    h.push_str("end_header\n");
    let mut bytes = h.into_bytes();
    for (i, p) in points.iter().enumerate() {
        for k in 0..3 {
            bytes.extend_from_slice(&p[k].to_le_bytes());
        }
        let c = colors.get(i).copied().unwrap_or([0.5; 3]);
        for v in c {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_points_ply(path: &Path) -> Result<(Vec<Vector3<f64>>, Vec<[f64; 3]>)> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let header = parse_header(&bytes, path)?;
    let want = ["x", "y", "z", "red", "green", "blue"];
    if header.properties != want {
        return Err(Error::PlyPropertyMismatch(format!(
            "point cloud properties {:?}, expected {want:?}",
            header.properties
        )));
    }
    let values = read_values(&bytes[header.payload_offset..], header.scalar, header.count, 6)?;
    let mut points = Vec::with_capacity(header.count);
    let mut colors = Vec::with_capacity(header.count);
    for v in values.chunks_exact(6) {
        points.push(Vector3::new(v[0], v[1], v[2]));
        colors.push([v[3], v[4], v[5]]);
    }
    Ok((points, colors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn random_set(seed: u64, n: usize, degree: usize) -> GaussianSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = GaussianSet::new(degree);
        let stride = set.sh_stride();
        for _ in 0..n {
            let sh: Vec<f64> = (0..stride).map(|_| rng.gen_range(-2.0..2.0)).collect();
            set.push(
                Vector3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                ),
                Vector3::new(
                    rng.gen_range(-8.0..1.0),
                    rng.gen_range(-8.0..1.0),
                    rng.gen_range(-8.0..1.0),
                ),
                Vector4::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ),
                rng.gen_range(-6.0..6.0),
                &sh,
            );
        }
        set
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        for degree in [0, 1, 3] {
            let set = random_set(degree as u64, 20, degree);
            let path = dir.path().join(format!("d{degree}.ply"));
            export_ply(&set, &path).unwrap();
            let back = import_ply(&path).unwrap();
            assert_eq!(back.max_sh_degree, degree);
            assert_eq!(back.active_sh_degree, degree);
            assert_eq!(back.positions, set.positions);
            assert_eq!(back.log_scales, set.log_scales);
            assert_eq!(back.rotations, set.rotations);
            assert_eq!(back.opacity_logits, set.opacity_logits);
            assert_eq!(back.sh, set.sh);
        }
    }

    #[test]
    fn empty_set_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.ply");
        export_ply(&GaussianSet::new(3), &path).unwrap();
        let back = import_ply(&path).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.max_sh_degree, 3);
    }

    #[test]
    fn degree_three_has_expected_property_count() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.ply");
        export_ply(&random_set(1, 2, 3), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = parse_header(&bytes, &path).unwrap();
        // 3 position + 3 normal + 3 DC + 45 rest + 1 opacity + 3 scale + 4 rot
        assert_eq!(header.properties.len(), 62);
        assert_eq!(gaussian_basis_from_properties(&header.properties).unwrap(), 16);
    }

    #[test]
    fn header_errors_are_distinct() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.ply");

        std::fs::write(&p, b"not a ply at all").unwrap();
        assert!(matches!(import_ply(&p), Err(Error::PlyHeader(_))));

        std::fs::write(&p, b"ply\nformat ascii 1.0\nend_header\n").unwrap();
        assert!(matches!(import_ply(&p), Err(Error::PlyHeader(_))));

        // Valid header shape but wrong property names.
        let mut h = String::from("ply\nformat binary_little_endian 1.0\nelement vertex 0\n");
        h.push_str("property double a\nproperty double b\nend_header\n");
        std::fs::write(&p, h).unwrap();
        assert!(matches!(import_ply(&p), Err(Error::PlyPropertyMismatch(_))));
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.ply");
        export_ply(&random_set(2, 3, 0), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 7);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(import_ply(&p), Err(Error::PlyTruncated { .. })));
        bytes.extend_from_slice(&[0u8; 20]);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(import_ply(&p), Err(Error::PlyPropertyMismatch(_))));
    }

    #[test]
    fn float_files_import_with_widening() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("f32.ply");
        let mut h = String::from("ply\nformat binary_little_endian 1.0\nelement vertex 1\n");
        for name in ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"] {
            h.push_str(&format!("property float {name}\n"));
        }
        for name in ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"] {
            h.push_str(&format!("property float {name}\n"));
        }
        h.push_str("end_header\n");
        let mut bytes = h.into_bytes();
        let vals: [f32; 17] = [
            1.5, -2.0, 3.25, 0.0, 0.0, 0.0, 0.5, 0.25, -0.75, -1.0, -3.0, -3.0, -3.0, 1.0, 0.0,
            0.0, 0.0,
        ];
        for v in vals {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&p, bytes).unwrap();
        let set = import_ply(&p).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.max_sh_degree, 0);
        assert_eq!(set.positions[0], Vector3::new(1.5, -2.0, 3.25));
        assert_eq!(set.opacity_logits[0], -1.0);
        assert_eq!(set.sh_of(0), &[0.5, 0.25, -0.75]);
    }

    #[test]
    fn point_cloud_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("pts.ply");
        let points = vec![Vector3::new(0.1, 0.2, 0.3), Vector3::new(-1.0, 2.0, -3.0)];
        let colors = vec![[0.9, 0.1, 0.5], [0.0, 1.0, 0.25]];
        write_points_ply(&p, &points, &colors).unwrap();
        let (bp, bc) = read_points_ply(&p).unwrap();
        assert_eq!(bp, points);
        assert_eq!(bc, colors);
    }
}
