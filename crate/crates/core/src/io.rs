//! File formats: NPY arrays for fields, labels, and graphs; JSON sidecars.
//!
//! Arrays are exchanged as NPY version 1.0 files — little-endian `<f4` for
//! vector fields (H, W, D) and graph edge planes (num_offsets, H, W),
//! `<u4` for label maps (H, W). Graphs additionally carry a JSON sidecar
//! (same path with a `.json` extension) naming their kind and offsets,
//! since the array alone cannot distinguish a metric graph from an
//! affinity graph. Out-of-bounds edge slots are written as 0.0 and the
//! validity masks are recomputed from the offsets on load, so files have
//! one canonical byte representation.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::graph::{AffinityGraph, EdgeOffset, EdgePlanes, MetricGraph};
use crate::labels::LabelMap;

const NPY_MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F4,
    U4,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::U4 => "<u4",
        }
    }
}

/// Serialize an NPY v1.0 file: magic, version, u16 header length, then a
/// Python-dict header padded with spaces so the payload starts at a
/// 64-byte boundary, exactly as numpy writes it.
fn write_npy(path: &Path, shape: &[usize], dtype: Dtype, payload: &[u8]) -> Result<()> {
    let shape_str = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            format!("({})", dims.join(", "))
        }
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_str
    );
    let unpadded = NPY_MAGIC.len() + 2 + 2 + header.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    header.extend(std::iter::repeat(' ').take(pad));
    header.push('\n');

    let mut file = fs::File::create(path)?;
    file.write_all(NPY_MAGIC)?;
    file.write_all(&[1, 0])?;
    file.write_all(&(header.len() as u16).to_le_bytes())?;
    file.write_all(header.as_bytes())?;
    file.write_all(payload)?;
    Ok(())
}

/// Parse an NPY v1.0/2.0 file into (shape, dtype, payload bytes).
fn read_npy(path: &Path) -> Result<(Vec<usize>, Dtype, Vec<u8>)> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;

    if bytes.len() < 10 || &bytes[..6] != NPY_MAGIC {
        return Err(Error::Format(format!(
            "{} is not an NPY file (bad magic)",
            path.display()
        )));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, header_start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 => {
            if bytes.len() < 12 {
                return Err(Error::Format("truncated NPY v2 header".into()));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        _ => {
            return Err(Error::Format(format!(
                "unsupported NPY version {major}.{minor}"
            )))
        }
    };
    let payload_start = header_start + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Format("truncated NPY header".into()));
    }
    let header = std::str::from_utf8(&bytes[header_start..payload_start])
        .map_err(|_| Error::Format("NPY header is not valid UTF-8".into()))?;

    let descr = extract_quoted(header, "descr")?;
    let dtype = match descr.as_str() {
        "<f4" => Dtype::F4,
        "<u4" => Dtype::U4,
        other => {
            return Err(Error::Format(format!(
                "unsupported NPY dtype {other:?} (expected '<f4' or '<u4')"
            )))
        }
    };
    let fortran = extract_value(header, "fortran_order")?;
    match fortran.as_str() {
        "False" => {}
        "True" => {
            return Err(Error::Format(
                "fortran_order arrays are not supported".into(),
            ))
        }
        other => return Err(Error::Format(format!("bad fortran_order value {other:?}"))),
    }
    let shape_str = extract_value(header, "shape")?;
    let shape = parse_shape(&shape_str)?;

    let expected = shape.iter().product::<usize>() * 4;
    let payload = bytes[payload_start..].to_vec();
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "NPY payload is {} bytes but shape {:?} needs {}",
            payload.len(),
            shape,
            expected
        )));
    }
    Ok((shape, dtype, payload))
}

/// Pull the quoted string value of `'key': '...'` out of a header dict.
fn extract_quoted(header: &str, key: &str) -> Result<String> {
    let raw = extract_value(header, key)?;
    let trimmed = raw.trim_matches('\'').trim_matches('"');
    Ok(trimmed.to_string())
}

/// Pull the raw value text of `'key': value` out of a header dict, up to
/// the following top-level comma or closing brace.
fn extract_value(header: &str, key: &str) -> Result<String> {
    let pattern = format!("'{key}':");
    let start = header
        .find(&pattern)
        .ok_or_else(|| Error::Format(format!("NPY header is missing {key:?}")))?
        + pattern.len();
    let rest = &header[start..];
    let mut depth = 0usize;
    let mut end = rest.len();
    for (i, c) in rest.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth = depth.saturating_sub(1),
            ',' | '}' if depth == 0 => {
                end = i;
                break;
            }
            _ => {}
        }
    }
    Ok(rest[..end].trim().to_string())
}

fn parse_shape(text: &str) -> Result<Vec<usize>> {
    let inner = text
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::Format(format!("bad NPY shape {text:?}")))?;
    let mut dims = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        dims.push(
            part.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad NPY shape {text:?}")))?,
        );
    }
    if dims.is_empty() {
        return Err(Error::Format(format!("scalar NPY shape {text:?}")));
    }
    Ok(dims)
}

fn f64s_to_f32_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn f32_bytes_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

/// Write a vector field as a (H, W, D) little-endian f32 NPY file.
pub fn save_field(path: impl AsRef<Path>, field: &VectorField) -> Result<()> {
    write_npy(
        path.as_ref(),
        &[field.height(), field.width(), field.dim()],
        Dtype::F4,
        &f64s_to_f32_bytes(field.data().iter().copied()),
    )
}

/// Read a vector field from a (H, W, D) f32 NPY file.
pub fn load_field(path: impl AsRef<Path>) -> Result<VectorField> {
    let (shape, dtype, payload) = read_npy(path.as_ref())?;
    if dtype != Dtype::F4 {
        return Err(Error::Format(format!(
            "{}: vector fields are '<f4', found '<u4'",
            path.as_ref().display()
        )));
    }
    if shape.len() != 3 {
        return Err(Error::shape(format!(
            "{}: vector fields are 3-dimensional (H, W, D), found shape {:?}",
            path.as_ref().display(),
            shape
        )));
    }
    VectorField::from_vec(shape[0], shape[1], shape[2], f32_bytes_to_f64s(&payload))
}

/// Write a label map as a (H, W) little-endian u32 NPY file.
pub fn save_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    let mut payload = Vec::with_capacity(labels.labels().len() * 4);
    for &l in labels.labels() {
        payload.extend_from_slice(&l.to_le_bytes());
    }
    write_npy(
        path.as_ref(),
        &[labels.height(), labels.width()],
        Dtype::U4,
        &payload,
    )
}

/// Read a label map from a (H, W) u32 NPY file.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let (shape, dtype, payload) = read_npy(path.as_ref())?;
    if dtype != Dtype::U4 {
        return Err(Error::Format(format!(
            "{}: label maps are '<u4', found '<f4'",
            path.as_ref().display()
        )));
    }
    if shape.len() != 2 {
        return Err(Error::shape(format!(
            "{}: label maps are 2-dimensional (H, W), found shape {:?}",
            path.as_ref().display(),
            shape
        )));
    }
    let values: Vec<u32> = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    LabelMap::from_vec(shape[0], shape[1], values)
}

/// What a graph file's edge values mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Metric,
    Affinity,
}

/// The JSON sidecar stored next to a graph's NPY file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphSidecar {
    kind: GraphKind,
    offsets: Vec<EdgeOffset>,
}

/// A graph loaded from disk, tagged by the sidecar's kind.
#[derive(Debug, Clone)]
pub enum LoadedGraph {
    Metric(MetricGraph),
    Affinity(AffinityGraph),
}

/// The `.json` sidecar path belonging to a graph's NPY path.
pub fn sidecar_path(path: impl AsRef<Path>) -> PathBuf {
    path.as_ref().with_extension("json")
}

fn save_graph_planes(path: &Path, planes: &EdgePlanes, kind: GraphKind) -> Result<()> {
    write_npy(
        path,
        &[planes.num_offsets(), planes.height(), planes.width()],
        Dtype::F4,
        &f64s_to_f32_bytes(planes.values().iter().copied()),
    )?;
    let sidecar = GraphSidecar {
        kind,
        offsets: planes.offsets().to_vec(),
    };
    write_json(sidecar_path(path), &sidecar)
}

/// Write a metric graph: (num_offsets, H, W) f32 NPY plus a JSON sidecar.
pub fn save_metric_graph(path: impl AsRef<Path>, graph: &MetricGraph) -> Result<()> {
    save_graph_planes(path.as_ref(), graph.planes(), GraphKind::Metric)
}

/// Write an affinity graph: (num_offsets, H, W) f32 NPY plus a JSON sidecar.
pub fn save_affinity_graph(path: impl AsRef<Path>, graph: &AffinityGraph) -> Result<()> {
    save_graph_planes(path.as_ref(), graph.planes(), GraphKind::Affinity)
}

/// Read a graph NPY + sidecar pair; the sidecar's `kind` decides whether
/// the values are distances or affinities.
pub fn load_graph(path: impl AsRef<Path>) -> Result<LoadedGraph> {
    let path = path.as_ref();
    let (shape, dtype, payload) = read_npy(path)?;
    if dtype != Dtype::F4 {
        return Err(Error::Format(format!(
            "{}: graphs are '<f4', found '<u4'",
            path.display()
        )));
    }
    if shape.len() != 3 {
        return Err(Error::shape(format!(
            "{}: graphs are 3-dimensional (num_offsets, H, W), found shape {:?}",
            path.display(),
            shape
        )));
    }
    let sidecar: GraphSidecar = read_json(sidecar_path(path))?;
    if sidecar.offsets.len() != shape[0] {
        return Err(Error::shape(format!(
            "{}: sidecar lists {} offsets but the array has {} planes",
            path.display(),
            sidecar.offsets.len(),
            shape[0]
        )));
    }

    let (h, w) = (shape[1], shape[2]);
    let values = f32_bytes_to_f64s(&payload);
    let mut planes = EdgePlanes::new(h, w, sidecar.offsets)?;
    for o in 0..planes.num_offsets() {
        for y in 0..h {
            for x in 0..w {
                if planes.is_valid(o, y, x) {
                    planes.set_value(o, y, x, values[(o * h + y) * w + x])?;
                }
            }
        }
    }
    Ok(match sidecar.kind {
        GraphKind::Metric => LoadedGraph::Metric(MetricGraph::from_planes(planes)?),
        GraphKind::Affinity => LoadedGraph::Affinity(AffinityGraph::from_planes(planes)?),
    })
}

/// Write a value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Read a JSON file into a deserializable value.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let file = fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_metric_graph, metric_to_affinity};
    use crate::rng::SplitMix64;

    /// `np.save` of `np.arange(12, dtype=np.float32).reshape(2, 3, 2) * 0.5`.
    const NUMPY_F32_REFERENCE: [u8; 176] = [
        147, 78, 85, 77, 80, 89, 1, 0, 118, 0, 123, 39, 100, 101, 115, 99, 114, 39, 58, 32, 39,
        60, 102, 52, 39, 44, 32, 39, 102, 111, 114, 116, 114, 97, 110, 95, 111, 114, 100, 101,
        114, 39, 58, 32, 70, 97, 108, 115, 101, 44, 32, 39, 115, 104, 97, 112, 101, 39, 58, 32,
        40, 50, 44, 32, 51, 44, 32, 50, 41, 44, 32, 125, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32,
        32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32,
        32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32,
        32, 10, 0, 0, 0, 0, 0, 0, 0, 63, 0, 0, 128, 63, 0, 0, 192, 63, 0, 0, 0, 64, 0, 0, 32,
        64, 0, 0, 64, 64, 0, 0, 96, 64, 0, 0, 128, 64, 0, 0, 144, 64, 0, 0, 160, 64, 0, 0, 176,
        64,
    ];

    /// `np.save` of `np.array([[0, 1, 2], [3, 4, 5]], dtype=np.uint32)`.
    const NUMPY_U32_REFERENCE: [u8; 152] = [
        147, 78, 85, 77, 80, 89, 1, 0, 118, 0, 123, 39, 100, 101, 115, 99, 114, 39, 58, 32, 39,
        60, 117, 52, 39, 44, 32, 39, 102, 111, 114, 116, 114, 97, 110, 95, 111, 114, 100, 101,
        114, 39, 58, 32, 70, 97, 108, 115, 101, 44, 32, 39, 115, 104, 97, 112, 101, 39, 58, 32,
        40, 50, 44, 32, 51, 41, 44, 32, 125, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32,
        32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32,
        32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32,
        32, 10, 0, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0, 5, 0, 0, 0,
    ];

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("metricseg-io-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn field_bytes_match_numpy_exactly() {
        let dir = temp_dir("f32");
        let path = dir.join("field.npy");
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        let field = VectorField::from_vec(2, 3, 2, data).unwrap();
        save_field(&path, &field).unwrap();
        assert_eq!(fs::read(&path).unwrap(), NUMPY_F32_REFERENCE);

        let loaded = load_field(&path).unwrap();
        assert_eq!(loaded.data(), field.data());
    }

    #[test]
    fn labels_bytes_match_numpy_exactly() {
        let dir = temp_dir("u32");
        let path = dir.join("labels.npy");
        let map = LabelMap::from_vec(2, 3, vec![0, 1, 2, 3, 4, 5]).unwrap();
        save_labels(&path, &map).unwrap();
        assert_eq!(fs::read(&path).unwrap(), NUMPY_U32_REFERENCE);

        let loaded = load_labels(&path).unwrap();
        assert_eq!(loaded.labels(), map.labels());
    }

    #[test]
    fn numpy_written_files_load() {
        let dir = temp_dir("np");
        let fpath = dir.join("np-field.npy");
        fs::write(&fpath, NUMPY_F32_REFERENCE).unwrap();
        let field = load_field(&fpath).unwrap();
        assert_eq!(field.height(), 2);
        assert_eq!(field.width(), 3);
        assert_eq!(field.dim(), 2);
        assert_eq!(field.vector(1, 2), &[5.0, 5.5]);

        let lpath = dir.join("np-labels.npy");
        fs::write(&lpath, NUMPY_U32_REFERENCE).unwrap();
        let labels = load_labels(&lpath).unwrap();
        assert_eq!(labels.get(1, 0), 3);
    }

    #[test]
    fn graph_round_trip_preserves_kind_offsets_and_values() {
        let dir = temp_dir("graph");
        let mut rng = SplitMix64::new(8);
        let field = VectorField::gaussian(5, 4, 3, 0.5, &mut rng).unwrap();
        let offsets = vec![
            EdgeOffset::new(0, 1).unwrap(),
            EdgeOffset::new(1, 0).unwrap(),
            EdgeOffset::new(2, -1).unwrap(),
        ];
        let metric = build_metric_graph(&field, &offsets).unwrap();
        let affinity = metric_to_affinity(&metric);

        let mpath = dir.join("metric.npy");
        save_metric_graph(&mpath, &metric).unwrap();
        let LoadedGraph::Metric(metric2) = load_graph(&mpath).unwrap() else {
            panic!("sidecar kind lost");
        };
        assert_eq!(metric2.planes().offsets(), metric.planes().offsets());
        for (o, (y, x), _, d) in metric.planes().valid_edges() {
            let got = metric2.distance(o, y, x);
            // f32 storage rounds the f64 values.
            assert!((got - d).abs() < 1e-6, "distance ({o}, {y}, {x})");
        }

        let apath = dir.join("affinity.npy");
        save_affinity_graph(&apath, &affinity).unwrap();
        let LoadedGraph::Affinity(affinity2) = load_graph(&apath).unwrap() else {
            panic!("sidecar kind lost");
        };
        for (o, (y, x), _, a) in affinity.planes().valid_edges() {
            assert!((affinity2.affinity(o, y, x) - a).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_edges_round_trip_as_zero_with_recomputed_masks() {
        let dir = temp_dir("masks");
        let field = VectorField::from_vec(3, 3, 1, vec![1.0; 9]).unwrap();
        let offsets = vec![EdgeOffset::new(2, -2).unwrap()];
        let metric = build_metric_graph(&field, &offsets).unwrap();
        let path = dir.join("sparse.npy");
        save_metric_graph(&path, &metric).unwrap();
        let LoadedGraph::Metric(loaded) = load_graph(&path).unwrap() else {
            panic!("kind");
        };
        let p = loaded.planes();
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(p.is_valid(0, y, x), y < 1 && x >= 2, "mask at ({y}, {x})");
            }
        }
    }

    #[test]
    fn fortran_order_is_rejected() {
        let dir = temp_dir("fortran");
        let path = dir.join("f.npy");
        let mut bytes = NUMPY_F32_REFERENCE.to_vec();
        let header = "{'descr': '<f4', 'fortran_order': True, 'shape': (2, 3, 2), }";
        bytes[10..10 + header.len()].copy_from_slice(header.as_bytes());
        fs::write(&path, bytes).unwrap();
        let err = load_field(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "got {err:?}");
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let dir = temp_dir("corrupt");

        let bad_magic = dir.join("bad-magic.npy");
        fs::write(&bad_magic, b"PNG...definitely not npy").unwrap();
        assert!(matches!(load_field(&bad_magic), Err(Error::Format(_))));

        let truncated = dir.join("truncated.npy");
        fs::write(&truncated, &NUMPY_F32_REFERENCE[..100]).unwrap();
        assert!(matches!(load_field(&truncated), Err(Error::Format(_))));

        // Wrong dtype for the container type.
        let labels_as_field = dir.join("labels-as-field.npy");
        fs::write(&labels_as_field, NUMPY_U32_REFERENCE).unwrap();
        assert!(matches!(load_field(&labels_as_field), Err(Error::Format(_))));

        // Wrong rank.
        let field_as_labels = dir.join("field-as-labels.npy");
        fs::write(&field_as_labels, NUMPY_F32_REFERENCE).unwrap();
        assert!(matches!(
            load_labels(&field_as_labels),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn missing_file_is_io_not_found() {
        let err = load_field("/nonexistent/nowhere.npy").unwrap_err();
        match err {
            Error::Io(e) => assert_eq!(e.kind(), std::io::ErrorKind::NotFound),
            other => panic!("expected Io error, got {other:?}"),
        }
    }

    #[test]
    fn graph_sidecar_mismatch_is_rejected() {
        let dir = temp_dir("sidecar");
        let field = VectorField::from_vec(3, 3, 1, vec![0.5; 9]).unwrap();
        let metric =
            build_metric_graph(&field, &[EdgeOffset::new(0, 1).unwrap()]).unwrap();
        let path = dir.join("g.npy");
        save_metric_graph(&path, &metric).unwrap();
        // Claim two offsets while the array has one plane.
        fs::write(
            sidecar_path(&path),
            r#"{"kind": "metric", "offsets": [{"dy": 0, "dx": 1}, {"dy": 1, "dx": 0}]}"#,
        )
        .unwrap();
        assert!(matches!(load_graph(&path), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn json_round_trip_is_stable() {
        let dir = temp_dir("json");
        let path = dir.join("report.json");
        let value = serde_json::json!({"rand_f": 0.5, "vi": 1.25});
        write_json(&path, &value).unwrap();
        let first = fs::read(&path).unwrap();
        write_json(&path, &value).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
        let back: serde_json::Value = read_json(&path).unwrap();
        assert_eq!(back, value);
    }
}
