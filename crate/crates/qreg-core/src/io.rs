//! File formats: PLY (binary little-endian and ASCII) and XYZ point clouds,
//! CSV correspondence lists, 4×4 row-major ASCII transforms, and JSON run
//! reports.
//!
//! All parsers work on untrusted bytes and report failures as
//! [`IoError::Parse`] with a line or byte location — they never panic.
//! Writes are plain-file and lossless for finite 64-bit values; concurrent
//! writers to one path are the caller's responsibility.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{EstimatorConfig, RegistrationReport};
use crate::geometry::{Correspondence, Point3, PointCloud, RigidTransform};
use nalgebra::Vector3;

/// Supported point-cloud encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyBinaryLittleEndian,
    PlyAscii,
    XyzWhitespace,
}

/// Where in the input a parse failure was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseLocation {
    /// 1-based line number (text formats and headers).
    Line(usize),
    /// 0-based byte offset (binary payloads).
    Byte(usize),
}

impl fmt::Display for ParseLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseLocation::Line(n) => write!(f, "line {n}"),
            ParseLocation::Byte(n) => write!(f, "byte {n}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at {location}: {message}")]
    Parse {
        location: ParseLocation,
        message: String,
    },
}

impl IoError {
    fn at_line(line: usize, message: impl Into<String>) -> Self {
        IoError::Parse {
            location: ParseLocation::Line(line),
            message: message.into(),
        }
    }

    fn at_byte(byte: usize, message: impl Into<String>) -> Self {
        IoError::Parse {
            location: ParseLocation::Byte(byte),
            message: message.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// point clouds
// ---------------------------------------------------------------------------

/// Reads a point cloud, discarding property warnings.
pub fn read_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud<f64>, IoError> {
    read_cloud_with_warnings(path, format).map(|(cloud, _)| cloud)
}

/// Reads a point cloud plus a list of ignored-property warnings (PLY files
/// may carry colors or custom attributes; they are skipped, not errors).
pub fn read_cloud_with_warnings(
    path: impl AsRef<Path>,
    format: CloudFormat,
) -> Result<(PointCloud<f64>, Vec<String>), IoError> {
    let bytes = std::fs::read(path)?;
    parse_cloud(&bytes, format)
}

/// Writes a cloud in the chosen format; normals are emitted when present.
/// The output round-trips bit-exactly through [`read_cloud`].
pub fn write_cloud(
    cloud: &PointCloud<f64>,
    path: impl AsRef<Path>,
    format: CloudFormat,
) -> Result<(), IoError> {
    let bytes = encode_cloud(cloud, format);
    std::fs::write(path, bytes)?;
    Ok(())
}

fn encode_cloud(cloud: &PointCloud<f64>, format: CloudFormat) -> Vec<u8> {
    match format {
        CloudFormat::XyzWhitespace => {
            let mut out = String::new();
            for p in cloud.iter() {
                out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
            }
            out.into_bytes()
        }
        CloudFormat::PlyAscii | CloudFormat::PlyBinaryLittleEndian => {
            let binary = format == CloudFormat::PlyBinaryLittleEndian;
            let mut header = String::from("ply\n");
            header.push_str(if binary {
                "format binary_little_endian 1.0\n"
            } else {
                "format ascii 1.0\n"
            });
            header.push_str(&format!("element vertex {}\n", cloud.len()));
            for axis in ["x", "y", "z"] {
                header.push_str(&format!("property double {axis}\n"));
            }
            if cloud.normals().is_some() {
                for axis in ["nx", "ny", "nz"] {
                    header.push_str(&format!("property double {axis}\n"));
                }
            }
            header.push_str("end_header\n");
            let mut out = header.into_bytes();
            let normals = cloud.normals();
            for (i, p) in cloud.iter().enumerate() {
                let mut row = vec![p.x, p.y, p.z];
                if let Some(ns) = normals {
                    row.extend([ns[i].x, ns[i].y, ns[i].z]);
                }
                if binary {
                    for v in row {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                } else {
                    let text = row
                        .iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(" ");
                    out.extend_from_slice(text.as_bytes());
                    out.push(b'\n');
                }
            }
            out
        }
    }
}

fn parse_cloud(
    bytes: &[u8],
    format: CloudFormat,
) -> Result<(PointCloud<f64>, Vec<String>), IoError> {
    match format {
        CloudFormat::XyzWhitespace => parse_xyz(bytes).map(|c| (c, Vec::new())),
        CloudFormat::PlyAscii | CloudFormat::PlyBinaryLittleEndian => parse_ply(bytes, format),
    }
}

fn parse_xyz(bytes: &[u8]) -> Result<PointCloud<f64>, IoError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| IoError::at_byte(e.valid_up_to(), "xyz file is not valid UTF-8"))?;
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(IoError::at_line(
                line_no,
                format!("expected 3 coordinates, found {}", fields.len()),
            ));
        }
        let mut coords = [0.0f64; 3];
        for (c, field) in coords.iter_mut().zip(&fields) {
            *c = field
                .parse::<f64>()
                .map_err(|_| IoError::at_line(line_no, format!("invalid number {field:?}")))?;
        }
        points.push(
            Point3::try_new(coords[0], coords[1], coords[2])
                .map_err(|_| IoError::at_line(line_no, "non-finite coordinate"))?,
        );
    }
    Ok(PointCloud::new(points))
}

/// Scalar PLY property sizes in bytes; list properties are rejected because
/// they break the fixed row stride.
fn ply_type_size(name: &str) -> Option<usize> {
    match name {
        "char" | "uchar" | "int8" | "uint8" => Some(1),
        "short" | "ushort" | "int16" | "uint16" => Some(2),
        "int" | "uint" | "int32" | "uint32" | "float" | "float32" => Some(4),
        "double" | "float64" => Some(8),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyField {
    F64,
    F32,
    Skip(usize),
}

impl PlyField {
    fn size(self) -> usize {
        match self {
            PlyField::F64 => 8,
            PlyField::F32 => 4,
            PlyField::Skip(n) => n,
        }
    }
}

struct PlyHeader {
    vertex_count: usize,
    /// (field kind, destination slot) per property; slot indexes into
    /// [x, y, z, nx, ny, nz], or usize::MAX for skipped properties.
    layout: Vec<(PlyField, usize)>,
    data_start: usize,
    header_lines: usize,
    warnings: Vec<String>,
}

const PLY_SLOTS: [&str; 6] = ["x", "y", "z", "nx", "ny", "nz"];

fn parse_ply_header(bytes: &[u8], format: CloudFormat) -> Result<PlyHeader, IoError> {
    let marker = b"end_header\n";
    let header_end = find_subslice(bytes, marker)
        .ok_or_else(|| IoError::at_byte(bytes.len(), "missing end_header"))?;
    let data_start = header_end + marker.len();
    let header_text = std::str::from_utf8(&bytes[..header_end])
        .map_err(|e| IoError::at_byte(e.valid_up_to(), "ply header is not valid UTF-8"))?;

    let want_format = match format {
        CloudFormat::PlyBinaryLittleEndian => "binary_little_endian",
        CloudFormat::PlyAscii => "ascii",
        CloudFormat::XyzWhitespace => unreachable!("xyz handled separately"),
    };

    let mut declared_format: Option<String> = None;
    let mut vertex_count: Option<usize> = None;
    let mut layout: Vec<(PlyField, usize)> = Vec::new();
    let mut warnings = Vec::new();
    let mut in_vertex_element = false;
    let mut seen = [false; 6];
    let mut saw_magic = false;
    let mut header_lines = 0;

    for (idx, raw) in header_text.lines().enumerate() {
        let n = idx + 1;
        header_lines = n;
        let line = raw.trim_end_matches('\r');
        if !saw_magic {
            if line.trim() != "ply" {
                return Err(IoError::at_line(n, "missing 'ply' magic line"));
            }
            saw_magic = true;
            continue;
        }
        let mut words = line.split_whitespace();
        let Some(keyword) = words.next() else {
            continue; // blank header line
        };
        match keyword {
            "comment" | "obj_info" => {}
            "format" => {
                let kind = words
                    .next()
                    .ok_or_else(|| IoError::at_line(n, "format line missing encoding"))?;
                declared_format = Some(kind.to_string());
            }
            "element" => {
                let name = words
                    .next()
                    .ok_or_else(|| IoError::at_line(n, "element line missing name"))?;
                let count: usize = words
                    .next()
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| IoError::at_line(n, "element line missing count"))?;
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(IoError::at_line(n, "duplicate vertex element"));
                    }
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else {
                    if vertex_count.is_none() && count > 0 {
                        return Err(IoError::at_line(
                            n,
                            format!("unsupported element {name:?} before vertex data"),
                        ));
                    }
                    in_vertex_element = false;
                    if count > 0 {
                        warnings.push(format!("ignored trailing element {name:?} ({count} rows)"));
                    }
                }
            }
            "property" => {
                if !in_vertex_element {
                    continue; // property of an ignored element
                }
                let ty = words
                    .next()
                    .ok_or_else(|| IoError::at_line(n, "property line missing type"))?;
                if ty == "list" {
                    return Err(IoError::at_line(
                        n,
                        "list properties on vertices are unsupported",
                    ));
                }
                let name = words
                    .next()
                    .ok_or_else(|| IoError::at_line(n, "property line missing name"))?;
                let size = ply_type_size(ty)
                    .ok_or_else(|| IoError::at_line(n, format!("unknown property type {ty:?}")))?;
                let slot = PLY_SLOTS.iter().position(|s| *s == name);
                match slot {
                    Some(slot) if size >= 4 => {
                        if seen[slot] {
                            return Err(IoError::at_line(n, format!("duplicate property {name:?}")));
                        }
                        seen[slot] = true;
                        let field = if size == 8 { PlyField::F64 } else { PlyField::F32 };
                        layout.push((field, slot));
                    }
                    Some(_) => {
                        return Err(IoError::at_line(
                            n,
                            format!("coordinate property {name:?} must be float or double"),
                        ));
                    }
                    None => {
                        warnings.push(format!("ignored property {name:?}"));
                        layout.push((PlyField::Skip(size), usize::MAX));
                    }
                }
            }
            other => {
                warnings.push(format!("ignored header keyword {other:?}"));
            }
        }
    }

    if !saw_magic {
        return Err(IoError::at_line(1, "empty header"));
    }
    match declared_format.as_deref() {
        Some(kind) if kind == want_format => {}
        Some(kind) => {
            return Err(IoError::at_line(
                2,
                format!("file encoding is {kind:?}, expected {want_format:?}"),
            ));
        }
        None => return Err(IoError::at_line(header_lines, "missing format line")),
    }
    let vertex_count =
        vertex_count.ok_or_else(|| IoError::at_line(header_lines, "missing vertex element"))?;
    if !(seen[0] && seen[1] && seen[2]) {
        return Err(IoError::at_line(
            header_lines,
            "vertex element lacks x/y/z properties",
        ));
    }
    let has_any_normal = seen[3] || seen[4] || seen[5];
    if has_any_normal && !(seen[3] && seen[4] && seen[5]) {
        return Err(IoError::at_line(
            header_lines,
            "normals must declare all of nx, ny, nz",
        ));
    }

    Ok(PlyHeader {
        vertex_count,
        layout,
        data_start,
        header_lines: header_lines + 1, // count the end_header line itself
        warnings,
    })
}

fn parse_ply(
    bytes: &[u8],
    format: CloudFormat,
) -> Result<(PointCloud<f64>, Vec<String>), IoError> {
    let header = parse_ply_header(bytes, format)?;
    let has_normals = header.layout.iter().any(|(_, slot)| *slot == 3);
    let n = header.vertex_count;
    let cap = n.min(1 << 20); // never trust a declared count with allocation
    let mut points: Vec<Point3<f64>> = Vec::with_capacity(cap);
    let mut normals: Vec<Vector3<f64>> = Vec::with_capacity(if has_normals { cap } else { 0 });

    let mut push_row = |row: [f64; 6], at: ParseLocation| -> Result<(), IoError> {
        let point = Point3::try_new(row[0], row[1], row[2]).map_err(|_| IoError::Parse {
            location: at,
            message: format!("non-finite coordinate in vertex {}", points.len()),
        })?;
        points.push(point);
        if has_normals {
            let nvec = Vector3::new(row[3], row[4], row[5]);
            if !nvec.norm().is_finite() || (nvec.norm() - 1.0).abs() > 1e-9 {
                return Err(IoError::Parse {
                    location: at,
                    message: format!("normal of vertex {} is not unit length", normals.len()),
                });
            }
            normals.push(nvec);
        }
        Ok(())
    };

    match format {
        CloudFormat::PlyBinaryLittleEndian => {
            let stride: usize = header.layout.iter().map(|(f, _)| f.size()).sum();
            let need = stride
                .checked_mul(n)
                .ok_or_else(|| IoError::at_byte(header.data_start, "vertex count overflows"))?;
            let data = &bytes[header.data_start..];
            if data.len() < need {
                return Err(IoError::at_byte(
                    bytes.len(),
                    format!(
                        "truncated vertex data: need {need} bytes after header, have {}",
                        data.len()
                    ),
                ));
            }
            for i in 0..n {
                let mut row = [0.0f64; 6];
                let mut offset = i * stride;
                for (field, slot) in &header.layout {
                    match field {
                        PlyField::F64 => {
                            let raw: [u8; 8] = data[offset..offset + 8]
                                .try_into()
                                .expect("length checked above");
                            row[*slot] = f64::from_le_bytes(raw);
                        }
                        PlyField::F32 => {
                            let raw: [u8; 4] = data[offset..offset + 4]
                                .try_into()
                                .expect("length checked above");
                            row[*slot] = f32::from_le_bytes(raw) as f64;
                        }
                        PlyField::Skip(_) => {}
                    }
                    offset += field.size();
                }
                push_row(row, ParseLocation::Byte(header.data_start + i * stride))?;
            }
        }
        CloudFormat::PlyAscii => {
            let text = std::str::from_utf8(&bytes[header.data_start..]).map_err(|e| {
                IoError::at_byte(
                    header.data_start + e.valid_up_to(),
                    "ply body is not valid UTF-8",
                )
            })?;
            let mut rows = 0usize;
            for (i, raw) in text.lines().enumerate() {
                let line_no = header.header_lines + i + 1;
                let line = raw.trim();
                if line.is_empty() {
                    continue;
                }
                if rows == n {
                    // data of trailing elements (already warned about)
                    break;
                }
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != header.layout.len() {
                    return Err(IoError::at_line(
                        line_no,
                        format!(
                            "expected {} values, found {}",
                            header.layout.len(),
                            fields.len()
                        ),
                    ));
                }
                let mut row = [0.0f64; 6];
                for (field, (kind, slot)) in fields.iter().zip(&header.layout) {
                    if matches!(kind, PlyField::Skip(_)) {
                        continue;
                    }
                    row[*slot] = field.parse::<f64>().map_err(|_| {
                        IoError::at_line(line_no, format!("invalid number {field:?}"))
                    })?;
                }
                push_row(row, ParseLocation::Line(line_no))?;
                rows += 1;
            }
            if rows != n {
                return Err(IoError::at_line(
                    header.header_lines + text.lines().count(),
                    format!("declared {n} vertices, found {rows}"),
                ));
            }
        }
        CloudFormat::XyzWhitespace => unreachable!("xyz handled separately"),
    }

    let cloud = if has_normals {
        PointCloud::with_normals(points, normals).map_err(|e| {
            IoError::at_byte(header.data_start, format!("invalid normals: {e}"))
        })?
    } else {
        PointCloud::new(points)
    };
    Ok((cloud, header.warnings))
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|window| window == needle)
}

// ---------------------------------------------------------------------------
// correspondences
// ---------------------------------------------------------------------------

/// Reads a `src,dst,score` CSV. The score column may be absent entirely, in
/// which case every match gets score 1.0. Indices are validated against the
/// clouds at registration time, not here.
pub fn read_correspondences(path: impl AsRef<Path>) -> Result<Vec<Correspondence<f64>>, IoError> {
    let bytes = std::fs::read(path)?;
    parse_correspondences(&bytes)
}

fn parse_correspondences(bytes: &[u8]) -> Result<Vec<Correspondence<f64>>, IoError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| IoError::at_byte(e.valid_up_to(), "correspondence file is not valid UTF-8"))?;
    let mut corrs = Vec::new();
    let mut saw_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !saw_header {
            if fields != ["src", "dst", "score"] && fields != ["src", "dst"] {
                return Err(IoError::at_line(
                    line_no,
                    "expected header 'src,dst,score' or 'src,dst'",
                ));
            }
            saw_header = true;
            continue;
        }
        if fields.len() != 2 && fields.len() != 3 {
            return Err(IoError::at_line(
                line_no,
                format!("expected 2 or 3 fields, found {}", fields.len()),
            ));
        }
        let src: usize = fields[0]
            .parse::<u64>()
            .map_err(|_| IoError::at_line(line_no, format!("invalid source index {:?}", fields[0])))?
            as usize;
        let dst: usize = fields[1]
            .parse::<u64>()
            .map_err(|_| IoError::at_line(line_no, format!("invalid target index {:?}", fields[1])))?
            as usize;
        let score = if fields.len() == 3 {
            let s: f64 = fields[2].parse().map_err(|_| {
                IoError::at_line(line_no, format!("invalid score {:?}", fields[2]))
            })?;
            if !(0.0..=1.0).contains(&s) {
                return Err(IoError::at_line(
                    line_no,
                    format!("score {s} outside [0, 1]"),
                ));
            }
            s
        } else {
            1.0
        };
        corrs.push(Correspondence::with_score(src, dst, score));
    }
    if !saw_header {
        return Err(IoError::at_line(1, "missing 'src,dst,score' header"));
    }
    Ok(corrs)
}

/// Writes the `src,dst,score` CSV; round-trips exactly.
pub fn write_correspondences(
    corrs: &[Correspondence<f64>],
    path: impl AsRef<Path>,
) -> Result<(), IoError> {
    let mut out = String::from("src,dst,score\n");
    for c in corrs {
        out.push_str(&format!("{},{},{}\n", c.source_index, c.target_index, c.score));
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// transforms
// ---------------------------------------------------------------------------

/// Writes `t` as four ASCII rows of the homogeneous 4×4 matrix, row-major,
/// with 17 significant digits — lossless for 64-bit reals.
pub fn write_transform(t: &RigidTransform<f64>, path: impl AsRef<Path>) -> Result<(), IoError> {
    let rows = t.to_homogeneous_rows();
    let mut out = String::new();
    for row in rows {
        let line = row
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a transform written by [`write_transform`] (or any 4×4 row-major
/// homogeneous rigid matrix in whitespace-separated ASCII).
pub fn read_transform(path: impl AsRef<Path>) -> Result<RigidTransform<f64>, IoError> {
    let bytes = std::fs::read(path)?;
    parse_transform(&bytes)
}

fn parse_transform(bytes: &[u8]) -> Result<RigidTransform<f64>, IoError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| IoError::at_byte(e.valid_up_to(), "transform file is not valid UTF-8"))?;
    let mut rows: Vec<[f64; 4]> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if rows.len() == 4 {
            return Err(IoError::at_line(line_no, "more than 4 matrix rows"));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(IoError::at_line(
                line_no,
                format!("expected 4 values per row, found {}", fields.len()),
            ));
        }
        let mut row = [0.0f64; 4];
        for (v, field) in row.iter_mut().zip(&fields) {
            *v = field
                .parse::<f64>()
                .map_err(|_| IoError::at_line(line_no, format!("invalid number {field:?}")))?;
            if !v.is_finite() {
                return Err(IoError::at_line(line_no, "non-finite matrix entry"));
            }
        }
        rows.push(row);
    }
    if rows.len() != 4 {
        return Err(IoError::at_line(
            text.lines().count().max(1),
            format!("expected 4 matrix rows, found {}", rows.len()),
        ));
    }
    let bottom = rows[3];
    let bottom_ok = bottom[0].abs() <= 1e-12
        && bottom[1].abs() <= 1e-12
        && bottom[2].abs() <= 1e-12
        && (bottom[3] - 1.0).abs() <= 1e-12;
    if !bottom_ok {
        return Err(IoError::at_line(4, "bottom row must be 0 0 0 1"));
    }
    let rotation = nalgebra::Matrix3::new(
        rows[0][0], rows[0][1], rows[0][2], //
        rows[1][0], rows[1][1], rows[1][2], //
        rows[2][0], rows[2][1], rows[2][2],
    );
    // reject scaled/sheared blocks ourselves: the constructor would silently
    // project anything with positive determinant onto SO(3)
    let gram_drift = (rotation.transpose() * rotation - nalgebra::Matrix3::identity())
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    if gram_drift > 1e-6 {
        return Err(IoError::at_line(
            1,
            "rotation block is not orthonormal".to_string(),
        ));
    }
    let translation = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
    RigidTransform::new(rotation, translation)
        .map_err(|e| IoError::at_line(1, format!("not a rigid transform: {e}")))
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

/// Serializable mirror of a registration run: the full configuration echo,
/// both poses as homogeneous row-major matrices, and the audit fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportDto {
    pub method: String,
    pub config: ConfigEcho,
    pub best_transform: [[f64; 4]; 4],
    pub pre_lo_transform: [[f64; 4]; 4],
    pub inlier_count: usize,
    pub inlier_indices: Vec<usize>,
    pub candidates_evaluated: usize,
    pub stage_timings_seconds: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_candidate_scores: Option<Vec<CandidateScoreDto>>,
    /// Extra run-specific fields (seeds, metric values, file paths).
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Every estimator knob, echoed verbatim so a report regenerates its run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub inlier_threshold: f64,
    pub lo_iterations: usize,
    pub lo_sample_fraction: f64,
    pub lo_normal_angle_max_deg: f64,
    pub scale_bounds: [f64; 2],
    pub rng_seed: u64,
    pub gamma: f64,
}

impl From<&EstimatorConfig<f64>> for ConfigEcho {
    fn from(cfg: &EstimatorConfig<f64>) -> Self {
        ConfigEcho {
            inlier_threshold: cfg.inlier_threshold,
            lo_iterations: cfg.lo_iterations,
            lo_sample_fraction: cfg.lo_sample_fraction,
            lo_normal_angle_max_deg: cfg.lo_normal_angle_max_deg,
            scale_bounds: [cfg.scale_bounds.0, cfg.scale_bounds.1],
            rng_seed: cfg.rng_seed,
            gamma: cfg.gamma,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CandidateScoreDto {
    pub corr_index: usize,
    pub sign_variant: usize,
    pub inlier_count: usize,
}

impl ReportDto {
    pub fn new(
        method: impl Into<String>,
        report: &RegistrationReport<f64>,
        config: &EstimatorConfig<f64>,
    ) -> Self {
        ReportDto {
            method: method.into(),
            config: ConfigEcho::from(config),
            best_transform: report.best_transform.to_homogeneous_rows(),
            pre_lo_transform: report.pre_lo_transform.to_homogeneous_rows(),
            inlier_count: report.inlier_count,
            inlier_indices: report.inlier_indices.clone(),
            candidates_evaluated: report.candidates_evaluated,
            stage_timings_seconds: report.stage_timings.clone(),
            per_candidate_scores: report.per_candidate_scores.as_ref().map(|scores| {
                scores
                    .iter()
                    .map(|s| CandidateScoreDto {
                        corr_index: s.corr_index,
                        sign_variant: s.sign_variant,
                        inlier_count: s.inlier_count,
                    })
                    .collect()
            }),
            extra: BTreeMap::new(),
        }
    }
}

/// Writes the run report as pretty-printed JSON with a full config echo.
pub fn write_report(
    report: &RegistrationReport<f64>,
    config: &EstimatorConfig<f64>,
    method: &str,
    path: impl AsRef<Path>,
) -> Result<(), IoError> {
    let dto = ReportDto::new(method, report, config);
    let json = serde_json::to_string_pretty(&dto).expect("report serialization cannot fail");
    std::fs::write(path, json)?;
    Ok(())
}
