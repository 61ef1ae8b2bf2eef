use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{cross, dot3, sub, Vec3};

/// Smallest accepted |tet volume| in m³.
const MIN_VOLUME: f64 = 1e-15;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("tet {tet} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange { tet: usize, index: usize, count: usize },
    #[error("tet {tet} is degenerate (volume {volume:e} m^3)")]
    Degenerate { tet: usize, volume: f64 },
    #[error("invalid density {0}")]
    Density(f64),
}

/// Tetrahedral body with lumped vertex masses.
#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    pub vertices: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    pub density: f64,
    pub masses: Vec<f64>,
}

/// Signed volume of the tet (a, b, c, d); positive for right-handed ordering.
pub fn tet_volume(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> f64 {
    dot3(sub(b, a), cross(sub(c, a), sub(d, a))) / 6.0
}

impl TetMesh {
    /// Validates tets, reorients negative ones and lumps masses.
    pub fn new(vertices: Vec<Vec3>, tets: Vec<[usize; 4]>, density: f64) -> Result<Self, MeshError> {
        if !(density > 0.0 && density.is_finite()) {
            return Err(MeshError::Density(density));
        }
        let mut tets = tets;
        let mut masses = vec![0.0; vertices.len()];
        for (t, tet) in tets.iter_mut().enumerate() {
            for &i in tet.iter() {
                if i >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        tet: t,
                        index: i,
                        count: vertices.len(),
                    });
                }
            }
            let mut v = tet_volume(vertices[tet[0]], vertices[tet[1]], vertices[tet[2]], vertices[tet[3]]);
            if !(v.abs() >= MIN_VOLUME) {
                return Err(MeshError::Degenerate { tet: t, volume: v });
            }
            if v < 0.0 {
                tet.swap(2, 3);
                v = -v;
            }
            for &i in tet.iter() {
                masses[i] += density * v / 4.0;
            }
        }
        Ok(TetMesh {
            vertices,
            tets,
            density,
            masses,
        })
    }

    pub fn volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tets[t];
        tet_volume(self.vertices[a], self.vertices[b], self.vertices[c], self.vertices[d])
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|t| self.volume(t)).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Axis-aligned bounding box (min, max).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .tets
            .iter()
            .flat_map(|t| {
                [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
                    .map(|(a, b)| (t[a].min(t[b]), t[a].max(t[b])))
            })
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }
}

struct Lines<'a> {
    path: &'a Path,
    items: Vec<(usize, Vec<&'a str>)>,
}

fn tokenize<'a>(path: &'a Path, text: &'a str) -> Lines<'a> {
    let items = text
        .lines()
        .enumerate()
        .filter_map(|(n, l)| {
            let l = l.split('#').next().unwrap_or("");
            let toks: Vec<&str> = l.split_whitespace().collect();
            (!toks.is_empty()).then_some((n + 1, toks))
        })
        .collect();
    Lines { path, items }
}

impl Lines<'_> {
    fn err(&self, line: usize, msg: impl Into<String>) -> MeshError {
        MeshError::Parse {
            path: self.path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, line: usize, tok: &str, what: &str) -> Result<T, MeshError> {
        tok.parse()
            .map_err(|_| self.err(line, format!("cannot parse {what} from {tok:?}")))
    }
}

fn read(path: &Path) -> Result<String, MeshError> {
    fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a TetGen `.node`/`.ele` pair. Index base (0 or 1) is taken from the
/// first vertex index.
pub fn load_mesh(node_path: &Path, ele_path: &Path, density: f64) -> Result<TetMesh, MeshError> {
    let node_text = read(node_path)?;
    let ele_text = read(ele_path)?;
    let nodes = tokenize(node_path, &node_text);
    let (hline, header) = nodes.items.first().ok_or_else(|| nodes.err(1, "empty node file"))?;
    let count: usize = nodes.parse(*hline, header[0], "vertex count")?;
    if header.len() > 1 && header[1] != "3" {
        return Err(nodes.err(*hline, "only 3D meshes are supported"));
    }
    let body = &nodes.items[1..];
    if body.len() < count {
        return Err(nodes.err(*hline, format!("expected {count} vertices, found {}", body.len())));
    }
    let mut base = 0usize;
    let mut vertices = Vec::with_capacity(count);
    for (k, (line, toks)) in body.iter().take(count).enumerate() {
        if toks.len() < 4 {
            return Err(nodes.err(*line, "expected: index x y z"));
        }
        let idx: usize = nodes.parse(*line, toks[0], "vertex index")?;
        if k == 0 {
            if idx > 1 {
                return Err(nodes.err(*line, "first vertex index must be 0 or 1"));
            }
            base = idx;
        }
        if idx != k + base {
            return Err(nodes.err(*line, format!("expected vertex index {}", k + base)));
        }
        let mut p = [0.0; 3];
        for c in 0..3 {
            p[c] = nodes.parse(*line, toks[1 + c], "coordinate")?;
        }
        vertices.push(p);
    }

    let eles = tokenize(ele_path, &ele_text);
    let (hline, header) = eles.items.first().ok_or_else(|| eles.err(1, "empty element file"))?;
    let count: usize = eles.parse(*hline, header[0], "tet count")?;
    if header.len() > 1 && header[1] != "4" {
        return Err(eles.err(*hline, "only linear (4-node) tets are supported"));
    }
    let body = &eles.items[1..];
    if body.len() < count {
        return Err(eles.err(*hline, format!("expected {count} tets, found {}", body.len())));
    }
    let mut tets = Vec::with_capacity(count);
    for (line, toks) in body.iter().take(count) {
        if toks.len() < 5 {
            return Err(eles.err(*line, "expected: index v1 v2 v3 v4"));
        }
        let mut t = [0usize; 4];
        for c in 0..4 {
            let i: usize = eles.parse(*line, toks[1 + c], "vertex index")?;
            if i < base {
                return Err(eles.err(*line, format!("vertex index {i} below base {base}")));
            }
            t[c] = i - base;
        }
        tets.push(t);
    }
    TetMesh::new(vertices, tets, density)
}

/// Writes a 0-based `.node`/`.ele` pair. Coordinates use shortest round-trip
/// formatting, so loading the files back reproduces them bit for bit.
pub fn save_mesh(mesh: &TetMesh, node_path: &Path, ele_path: &Path) -> Result<(), MeshError> {
    let mut s = format!("{} 3 0 0\n", mesh.vertices.len());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = writeln!(s, "{i} {:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    fs::write(node_path, s).map_err(|source| MeshError::Io {
        path: node_path.to_path_buf(),
        source,
    })?;
    let mut s = format!("{} 4 0\n", mesh.tets.len());
    for (i, t) in mesh.tets.iter().enumerate() {
        let _ = writeln!(s, "{i} {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    fs::write(ele_path, s).map_err(|source| MeshError::Io {
        path: ele_path.to_path_buf(),
        source,
    })
}
