use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::map::{ClassId, InstanceId, LabelSchema, PanopticLabel};
use crate::registry::InstanceRegistry;

use super::LabeledMesh;

/// Integer encoding of panoptic labels in exported files:
/// `0` unknown, `1..=K` stuff classes in ascending ID order, `K + 1 + i` instance `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PanopticEncoding {
    stuff: Vec<ClassId>,
}

impl PanopticEncoding {
    pub fn new(schema: &LabelSchema) -> Self {
        let mut stuff: Vec<ClassId> = schema.stuff_classes().collect();
        stuff.sort_unstable();
        PanopticEncoding { stuff }
    }

    pub fn stuff_count(&self) -> usize {
        self.stuff.len()
    }

    pub fn encode(&self, label: PanopticLabel) -> Result<i32> {
        match label {
            PanopticLabel::Unknown => Ok(0),
            PanopticLabel::Stuff(c) => self
                .stuff
                .binary_search(&c)
                .map(|i| i as i32 + 1)
                .map_err(|_| Error::invalid(format!("class {c} is not a stuff class"))),
            PanopticLabel::Instance(id) => i32::try_from(self.stuff.len() as u64 + 1 + u64::from(id.0))
                .map_err(|_| Error::invalid(format!("instance {id} does not fit the encoding"))),
        }
    }

    pub fn decode(&self, code: i32) -> Result<PanopticLabel> {
        let k = self.stuff.len() as i64;
        let code = i64::from(code);
        match code {
            0 => Ok(PanopticLabel::Unknown),
            c if c >= 1 && c <= k => Ok(PanopticLabel::Stuff(self.stuff[(c - 1) as usize])),
            c if c > k + 1 => Ok(PanopticLabel::Instance(InstanceId((c - k - 1) as u32))),
            c => Err(Error::invalid(format!("invalid panoptic id {c}"))),
        }
    }
}

const HEADER_VERTEX: &str = "property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
property int panoptic_id
property int class_id
";

/// Binary little-endian PLY with color, `panoptic_id` and `class_id` per vertex.
pub fn export_ply(mesh: &LabeledMesh, encoding: &PanopticEncoding, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\ncomment panoptic_id 0=unknown 1..{k}=stuff {k}+1+i=instance i\n\
         element vertex {}\n{HEADER_VERTEX}element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len(),
        k = encoding.stuff_count(),
    )?;
    for i in 0..mesh.vertices.len() {
        for c in mesh.vertices[i] {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(&mesh.colors[i])?;
        w.write_all(&encoding.encode(mesh.labels[i])?.to_le_bytes())?;
        let class = mesh.classes[i].map_or(0, |c| i32::from(c.0));
        w.write_all(&class.to_le_bytes())?;
    }
    for t in &mesh.triangles {
        w.write_all(&[3u8])?;
        for i in t {
            w.write_all(&(*i as i32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a file written by [`export_ply`].
pub fn read_ply(path: &Path, encoding: &PanopticEncoding) -> Result<LabeledMesh> {
    let bad = |m: &str| Error::decode(path, m);
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("missing end_header"));
        }
        let l = line.trim_end().to_string();
        if l == "end_header" {
            break;
        }
        header.push(l);
    }
    if header.first().map(String::as_str) != Some("ply") || header.get(1).map(String::as_str) != Some("format binary_little_endian 1.0") {
        return Err(bad("not a binary little-endian PLY"));
    }
    let body: Vec<&str> = header.iter().skip(2).filter(|l| !l.starts_with("comment")).map(String::as_str).collect();
    let count = |l: Option<&&str>, name: &str| -> Result<usize> {
        l.and_then(|l| l.strip_prefix(&format!("element {name} ")))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad(&format!("missing element {name}")))
    };
    let nv = count(body.first(), "vertex")?;
    let props: Vec<&str> = HEADER_VERTEX.lines().collect();
    if body.len() != props.len() + 3 || body[1..=props.len()] != props[..] {
        return Err(bad("unexpected vertex properties"));
    }
    let nf = count(body.get(props.len() + 1), "face")?;
    if body[props.len() + 2] != "property list uchar int vertex_indices" {
        return Err(bad("unexpected face properties"));
    }

    let mut mesh = LabeledMesh::default();
    let mut buf = [0u8; 23];
    for _ in 0..nv {
        r.read_exact(&mut buf).map_err(|_| bad("truncated vertex data"))?;
        let f = |o: usize| f32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        let i = |o: usize| i32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        mesh.vertices.push([f(0), f(4), f(8)]);
        mesh.colors.push([buf[12], buf[13], buf[14]]);
        mesh.labels.push(encoding.decode(i(15))?);
        let class = i(19);
        mesh.classes.push(if class == 0 {
            None
        } else {
            Some(ClassId(u16::try_from(class).map_err(|_| bad("class id out of range"))?))
        });
    }
    let mut face = [0u8; 13];
    for _ in 0..nf {
        r.read_exact(&mut face).map_err(|_| bad("truncated face data"))?;
        if face[0] != 3 {
            return Err(bad("only triangles are supported"));
        }
        let idx = |o: usize| -> Result<u32> {
            let v = i32::from_le_bytes(face[o..o + 4].try_into().unwrap());
            u32::try_from(v).ok().filter(|&v| (v as usize) < nv).ok_or_else(|| bad("face index out of range"))
        };
        mesh.triangles.push([idx(1)?, idx(5)?, idx(9)?]);
    }
    Ok(mesh)
}

/// Text table `panoptic_id kind id class_name probability` for every label in the mesh.
pub fn write_sidecar(
    mesh: &LabeledMesh,
    registry: &InstanceRegistry,
    schema: &LabelSchema,
    encoding: &PanopticEncoding,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# panoptic_id kind id class_name probability")?;
    let name = |c: ClassId| schema.name(c).unwrap_or("?").to_string();
    for label in mesh.label_set() {
        let code = encoding.encode(label)?;
        match label {
            PanopticLabel::Unknown => writeln!(w, "{code} unknown 0 - 0")?,
            PanopticLabel::Stuff(c) => writeln!(w, "{code} stuff {} {} 1", c.0, name(c))?,
            PanopticLabel::Instance(id) => match registry.restore_thing_class(id) {
                Ok((c, p)) => writeln!(w, "{code} instance {} {} {p:.6}", id.0, name(c))?,
                Err(_) => writeln!(w, "{code} instance {} - 0", id.0)?,
            },
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{ClassInfo, ClassKind};

    fn schema() -> LabelSchema {
        LabelSchema::new([
            ClassInfo { id: ClassId(5), name: "floor".into(), kind: ClassKind::Stuff },
            ClassInfo { id: ClassId(2), name: "wall".into(), kind: ClassKind::Stuff },
            ClassInfo { id: ClassId(7), name: "chair".into(), kind: ClassKind::Thing },
        ])
        .unwrap()
    }

    #[test]
    fn encoding_table() {
        let e = PanopticEncoding::new(&schema());
        assert_eq!(e.encode(PanopticLabel::Unknown).unwrap(), 0);
        assert_eq!(e.encode(PanopticLabel::Stuff(ClassId(2))).unwrap(), 1);
        assert_eq!(e.encode(PanopticLabel::Stuff(ClassId(5))).unwrap(), 2);
        assert_eq!(e.encode(PanopticLabel::Instance(InstanceId(1))).unwrap(), 4);
        assert!(e.encode(PanopticLabel::Stuff(ClassId(7))).is_err());
        for code in [0, 1, 2, 4, 99] {
            assert_eq!(e.encode(e.decode(code).unwrap()).unwrap(), code);
        }
        assert!(e.decode(3).is_err());
        assert!(e.decode(-1).is_err());
    }

    #[test]
    fn empty_and_single_triangle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let e = PanopticEncoding::new(&schema());
        let path = dir.path().join("empty.ply");
        export_ply(&LabeledMesh::default(), &e, &path).unwrap();
        assert_eq!(read_ply(&path, &e).unwrap(), LabeledMesh::default());

        let mesh = LabeledMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.5, -2.25]],
            triangles: vec![[0, 1, 2]],
            colors: vec![[255, 0, 0], [0, 255, 0], [1, 2, 3]],
            labels: vec![
                PanopticLabel::Unknown,
                PanopticLabel::Stuff(ClassId(5)),
                PanopticLabel::Instance(InstanceId(9)),
            ],
            classes: vec![None, Some(ClassId(5)), Some(ClassId(7))],
        };
        let path = dir.path().join("tri.ply");
        export_ply(&mesh, &e, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("element vertex 3\n") && text.contains("element face 1\n"));
        assert_eq!(read_ply(&path, &e).unwrap(), mesh);

        let side = dir.path().join("tri.txt");
        write_sidecar(&mesh, &InstanceRegistry::new(), &schema(), &e, &side).unwrap();
        let s = std::fs::read_to_string(&side).unwrap();
        assert!(s.contains("0 unknown") && s.contains("2 stuff 5 floor 1") && s.contains("12 instance 9 - 0"));
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        std::fs::write(&path, "ply\nformat ascii 1.0\nend_header\n").unwrap();
        assert!(read_ply(&path, &PanopticEncoding::new(&schema())).is_err());
    }
}
