use std::io::{BufRead, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed PLY: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<[f32; 3]>>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Checks index range, normal count and vertex finiteness.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.vertices.len();
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(format!("triangle {t:?} indexes past {n} vertices"));
        }
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err("non-finite vertex".into());
        }
        if self.normals.as_ref().is_some_and(|normals| normals.len() != n) {
            return Err("normal count differs from vertex count".into());
        }
        Ok(())
    }
}

/// Binary little-endian PLY: float x y z (plus nx ny nz when present),
/// faces as uchar count + int32 indices.
pub fn write_ply(mesh: &TriangleMesh, mut out: impl Write) -> Result<(), PlyError> {
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        mesh.vertices.len()
    );
    if mesh.normals.is_some() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    header.push_str(&format!(
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.triangles.len()
    ));
    let mut buf = header.into_bytes();
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        if let Some(normals) = &mesh.normals {
            for c in normals[i] {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    for t in &mesh.triangles {
        buf.push(3);
        for &i in t {
            let i = i32::try_from(i).map_err(|_| PlyError::Format(format!("index {i} exceeds int32")))?;
            buf.extend_from_slice(&i.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_f32(input: &mut impl Read) -> Result<f32, PlyError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// Reads the layout produced by [`write_ply`].
pub fn read_ply(input: impl Read) -> Result<TriangleMesh, PlyError> {
    let mut input = std::io::BufReader::new(input);
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            return Err(PlyError::Format("missing end_header".into()));
        }
        let line = line.trim_end().to_string();
        if line == "end_header" {
            break;
        }
        lines.push(line);
    }
    if lines.first().map(String::as_str) != Some("ply") {
        return Err(PlyError::Format("missing ply magic".into()));
    }
    if lines.get(1).map(String::as_str) != Some("format binary_little_endian 1.0") {
        return Err(PlyError::Format("only binary_little_endian 1.0 is supported".into()));
    }
    let mut vertex_count = None;
    let mut face_count = None;
    let mut vertex_props = Vec::new();
    let mut current = "";
    for line in &lines[2..] {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse::<usize>().map_err(|e| PlyError::Format(e.to_string()))?);
                current = "vertex";
            }
            ["element", "face", n] => {
                face_count = Some(n.parse::<usize>().map_err(|e| PlyError::Format(e.to_string()))?);
                current = "face";
            }
            ["property", "float", name] if current == "vertex" => vertex_props.push(name.to_string()),
            ["property", "list", "uchar", "int", _] if current == "face" => {}
            _ => return Err(PlyError::Format(format!("unsupported header line `{line}`"))),
        }
    }
    let with_normals = match vertex_props.join(" ").as_str() {
        "x y z" => false,
        "x y z nx ny nz" => true,
        other => return Err(PlyError::Format(format!("unsupported vertex properties `{other}`"))),
    };
    let vertex_count = vertex_count.ok_or_else(|| PlyError::Format("no vertex element".into()))?;
    let face_count = face_count.ok_or_else(|| PlyError::Format("no face element".into()))?;
    let mut mesh = TriangleMesh {
        vertices: Vec::with_capacity(vertex_count),
        triangles: Vec::with_capacity(face_count),
        normals: with_normals.then(|| Vec::with_capacity(vertex_count)),
    };
    for _ in 0..vertex_count {
        mesh.vertices.push([read_f32(&mut input)?, read_f32(&mut input)?, read_f32(&mut input)?]);
        if let Some(normals) = &mut mesh.normals {
            normals.push([read_f32(&mut input)?, read_f32(&mut input)?, read_f32(&mut input)?]);
        }
    }
    for _ in 0..face_count {
        let mut count = [0u8; 1];
        input.read_exact(&mut count)?;
        if count[0] != 3 {
            return Err(PlyError::Format(format!("face with {} vertices", count[0])));
        }
        let mut t = [0u32; 3];
        for slot in &mut t {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *slot = u32::try_from(i32::from_le_bytes(b))
                .map_err(|_| PlyError::Format("negative vertex index".into()))?;
        }
        mesh.triangles.push(t);
    }
    mesh.validate().map_err(PlyError::Format)?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.5], [0.0, 1.0, -0.25]],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            normals: None,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let mut mesh = quad();
        let mut bytes = Vec::new();
        write_ply(&mesh, &mut bytes).unwrap();
        assert_eq!(read_ply(bytes.as_slice()).unwrap(), mesh);
        mesh.normals = Some(vec![[0.0, 0.0, 1.0]; 4]);
        bytes.clear();
        write_ply(&mesh, &mut bytes).unwrap();
        assert_eq!(read_ply(bytes.as_slice()).unwrap(), mesh);
    }

    #[test]
    fn body_size_matches_layout() {
        let mut bytes = Vec::new();
        write_ply(&quad(), &mut bytes).unwrap();
        let header_end = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        assert_eq!(bytes.len() - header_end, 4 * 12 + 2 * 13);
    }

    #[test]
    fn empty_mesh_is_valid_ply() {
        let mut bytes = Vec::new();
        write_ply(&TriangleMesh::default(), &mut bytes).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("element vertex 0\n") && text.contains("element face 0\n"));
        assert!(read_ply(bytes.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn truncated_body_fails() {
        let mut bytes = Vec::new();
        write_ply(&quad(), &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 5);
        assert!(matches!(read_ply(bytes.as_slice()), Err(PlyError::Io(_))));
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let mut mesh = quad();
        mesh.triangles.push([0, 1, 9]);
        assert!(mesh.validate().is_err());
        let mut bytes = Vec::new();
        write_ply(&mesh, &mut bytes).unwrap();
        assert!(matches!(read_ply(bytes.as_slice()), Err(PlyError::Format(_))));
    }
}
