//! Periodic tori and flattened half-strips, plus grid-function serialization.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{Graph, Vec2};

/// Uniform grid on the unit torus `[0,1)^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusGrid {
    pub dim: usize,
    pub n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) || n < 3 {
            return Err(Error::Dimension(format!("torus grid needs dim in 1..=2 and n >= 3, got {dim}, {n}")));
        }
        Ok(TorusGrid { dim, n })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node index of `(i, j)`, both wrapped periodically.
    pub fn index(&self, i: isize, j: isize) -> usize {
        let n = self.n as isize;
        let i = i.rem_euclid(n) as usize;
        if self.dim == 1 {
            return i;
        }
        let j = j.rem_euclid(n) as usize;
        j * self.n + i
    }

    pub fn ij(&self, node: usize) -> (usize, usize) {
        if self.dim == 1 {
            (node, 0)
        } else {
            (node % self.n, node / self.n)
        }
    }

    pub fn coords(&self, node: usize) -> Vec2 {
        let (i, j) = self.ij(node);
        [i as f64 * self.h(), if self.dim == 2 { j as f64 * self.h() } else { 0.0 }]
    }

    /// Periodic (bi)linear interpolation of nodal values at an arbitrary point.
    pub fn interpolate(&self, values: &[f64], y: &[f64]) -> f64 {
        let n = self.n as f64;
        let s = y[0] * n;
        let i0 = s.floor();
        let tx = s - i0;
        if self.dim == 1 {
            let a = values[self.index(i0 as isize, 0)];
            let b = values[self.index(i0 as isize + 1, 0)];
            return a + tx * (b - a);
        }
        let r = y[1] * n;
        let j0 = r.floor();
        let ty = r - j0;
        let (i0, j0) = (i0 as isize, j0 as isize);
        let v00 = values[self.index(i0, j0)];
        let v10 = values[self.index(i0 + 1, j0)];
        let v01 = values[self.index(i0, j0 + 1)];
        let v11 = values[self.index(i0 + 1, j0 + 1)];
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
    }

    /// Central-difference gradient of a nodal field.
    pub fn gradient(&self, values: &[f64], node: usize) -> Vec2 {
        let (i, j) = self.ij(node);
        let (i, j) = (i as isize, j as isize);
        let h2 = 2.0 * self.h();
        let gx = (values[self.index(i + 1, j)] - values[self.index(i - 1, j)]) / h2;
        if self.dim == 1 {
            return [gx, 0.0];
        }
        let gy = (values[self.index(i, j + 1)] - values[self.index(i, j - 1)]) / h2;
        [gx, gy]
    }
}

/// Classes of strip nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Bottom,
    Lid,
}

/// Half-strip above a periodic graph, flattened by `z = y_N - ψ(y')`.
///
/// The tangential direction (2D only) is periodic with `nt` nodes over a
/// period `width` (one unless given); the normal direction has `nz` nodes on `[0, height]`. The
/// graph values and its first two derivatives are stored per tangential node,
/// the derivatives being central differences with the grid spacing.
#[derive(Debug, Clone)]
pub struct StripGrid {
    pub dim: usize,
    pub nt: usize,
    pub nz: usize,
    pub height: f64,
    pub ht: f64,
    pub hz: f64,
    pub psi: Vec<f64>,
    pub dpsi: Vec<f64>,
    pub d2psi: Vec<f64>,
}

impl StripGrid {
    /// Cell-scale strip over `graph` with `nt` tangential nodes per period.
    pub fn new(dim: usize, nt: usize, nz: usize, height: f64, graph: &Graph) -> Result<Self> {
        Self::scaled(dim, nt, nz, height, graph, 1.0, 1.0)
    }

    /// Strip over the graph `ε ψ(t/ε)` with tangential period `width`, which must be a multiple of `ε`.
    pub fn scaled(dim: usize, nt: usize, nz: usize, height: f64, graph: &Graph, eps: f64, width: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) || nz < 3 || (dim == 2 && nt < 3) || height <= 0.0 || width <= 0.0 {
            return Err(Error::Dimension(format!(
                "strip grid needs dim in 1..=2, nz >= 3, nt >= 3 in 2D, positive height; got {dim}, {nt}, {nz}, {height}"
            )));
        }
        let nt = if dim == 1 { 1 } else { nt };
        let ht = width / nt as f64;
        let hz = height / (nz - 1) as f64;
        let mut psi = vec![0.0; nt];
        let mut dpsi = vec![0.0; nt];
        let mut d2psi = vec![0.0; nt];
        if dim == 2 {
            let b = |t: f64| -> Result<f64> { Ok(eps * graph.value(t / eps)?) };
            for i in 0..nt {
                let t = i as f64 * ht;
                let c = b(t)?;
                let r = b(t + ht)?;
                let l = b(t - ht)?;
                psi[i] = c;
                dpsi[i] = (r - l) / (2.0 * ht);
                d2psi[i] = (r - 2.0 * c + l) / (ht * ht);
            }
        }
        Ok(StripGrid {
            dim,
            nt,
            nz,
            height,
            ht,
            hz,
            psi,
            dpsi,
            d2psi,
        })
    }

    pub fn len(&self) -> usize {
        self.nt * self.nz
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, i: isize, j: usize) -> usize {
        let i = i.rem_euclid(self.nt as isize) as usize;
        j * self.nt + i
    }

    /// Tangential and normal indices.
    pub fn ij(&self, node: usize) -> (usize, usize) {
        (node % self.nt, node / self.nt)
    }

    pub fn class(&self, node: usize) -> NodeClass {
        let (_, j) = self.ij(node);
        if j == 0 {
            NodeClass::Bottom
        } else if j + 1 == self.nz {
            NodeClass::Lid
        } else {
            NodeClass::Interior
        }
    }

    /// Physical coordinates `(y', z + ψ(y'))`; in 1D `[z, 0]`.
    pub fn coords(&self, node: usize) -> Vec2 {
        let (i, j) = self.ij(node);
        let z = j as f64 * self.hz;
        if self.dim == 1 {
            [z, 0.0]
        } else {
            [i as f64 * self.ht, z + self.psi[i]]
        }
    }

    /// Outward unit normal at tangential node `i` (`[-1, 0]` in 1D).
    pub fn normal(&self, i: usize) -> Vec2 {
        if self.dim == 1 {
            return [-1.0, 0.0];
        }
        let d = self.dpsi[i];
        let s = (1.0 + d * d).sqrt();
        [d / s, -1.0 / s]
    }

    pub fn bottom_nodes(&self) -> impl Iterator<Item = usize> {
        0..self.nt
    }

    /// Interpolated value at a physical point; `z` is clamped to the strip.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        if self.dim == 1 {
            let z = x[0].clamp(0.0, self.height);
            let s = (z / self.hz).min((self.nz - 1) as f64 - 1e-12);
            let j = s.floor() as usize;
            let t = s - j as f64;
            return values[j] * (1.0 - t) + values[j + 1] * t;
        }
        let s = x[0] / self.ht;
        let i0 = s.floor();
        let tx = s - i0;
        let i0 = i0 as isize;
        // Graph height interpolated between the bracketing tangential nodes.
        let p0 = self.psi[i0.rem_euclid(self.nt as isize) as usize];
        let p1 = self.psi[(i0 + 1).rem_euclid(self.nt as isize) as usize];
        let z = (x[1] - (p0 + tx * (p1 - p0))).clamp(0.0, self.height);
        let r = (z / self.hz).min((self.nz - 1) as f64 - 1e-12);
        let j0 = r.floor() as usize;
        let ty = r - j0 as f64;
        let v00 = values[self.index(i0, j0)];
        let v10 = values[self.index(i0 + 1, j0)];
        let v01 = values[self.index(i0, j0 + 1)];
        let v11 = values[self.index(i0 + 1, j0 + 1)];
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
    }
}

/// A torus or a strip.
#[derive(Debug, Clone)]
pub enum Mesh {
    Torus(TorusGrid),
    Strip(StripGrid),
}

impl Mesh {
    pub fn dim(&self) -> usize {
        match self {
            Mesh::Torus(t) => t.dim,
            Mesh::Strip(s) => s.dim,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Mesh::Torus(t) => t.len(),
            Mesh::Strip(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coords(&self, node: usize) -> Vec2 {
        match self {
            Mesh::Torus(t) => t.coords(node),
            Mesh::Strip(s) => s.coords(node),
        }
    }

    /// Array shape, slowest index first.
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Mesh::Torus(t) => vec![t.n; t.dim],
            Mesh::Strip(s) => {
                if s.dim == 1 {
                    vec![s.nz]
                } else {
                    vec![s.nz, s.nt]
                }
            }
        }
    }

    /// Mesh spacing along the coefficient axes.
    pub fn spacing(&self) -> Vec2 {
        match self {
            Mesh::Torus(t) => [t.h(), t.h()],
            Mesh::Strip(s) => {
                if s.dim == 1 {
                    [s.hz, s.hz]
                } else {
                    [s.ht, s.hz]
                }
            }
        }
    }

    /// Neighbor of `node` by offsets along the coefficient axes; `None` past the strip ends.
    pub fn neighbor(&self, node: usize, d0: isize, d1: isize) -> Option<usize> {
        match self {
            Mesh::Torus(t) => {
                let (i, j) = t.ij(node);
                Some(t.index(i as isize + d0, j as isize + d1))
            }
            Mesh::Strip(s) => {
                let (i, j) = s.ij(node);
                if s.dim == 1 {
                    let jj = j as isize + d0;
                    if jj < 0 || jj >= s.nz as isize {
                        return None;
                    }
                    return Some(jj as usize);
                }
                let jj = j as isize + d1;
                if jj < 0 || jj >= s.nz as isize {
                    return None;
                }
                Some(s.index(i as isize + d0, jj as usize))
            }
        }
    }

    pub fn class(&self, node: usize) -> NodeClass {
        match self {
            Mesh::Torus(_) => NodeClass::Interior,
            Mesh::Strip(s) => s.class(node),
        }
    }

    /// `(ψ', ψ'')` of the flattening at the node's tangential position.
    pub fn slope(&self, node: usize) -> (f64, f64) {
        match self {
            Mesh::Strip(s) if s.dim == 2 => {
                let (i, _) = s.ij(node);
                (s.dpsi[i], s.d2psi[i])
            }
            _ => (0.0, 0.0),
        }
    }
}

/// Writes `coords..., value` rows preceded by a `#` provenance line.
pub fn write_csv<W: Write>(mut w: W, mesh: &Mesh, values: &[f64], header: &str) -> Result<()> {
    writeln!(w, "# {header}")?;
    match mesh.dim() {
        1 => writeln!(w, "y1,value")?,
        _ => writeln!(w, "y1,y2,value")?,
    }
    for (k, v) in values.iter().enumerate() {
        let c = mesh.coords(k);
        if mesh.dim() == 1 {
            writeln!(w, "{:.12e},{:.17e}", c[0], v)?;
        } else {
            writeln!(w, "{:.12e},{:.12e},{:.17e}", c[0], c[1], v)?;
        }
    }
    Ok(())
}

/// Compact dump: `u32` rank, `u64` extents (slowest first), then `f64` values, all little-endian.
pub fn write_binary<W: Write>(mut w: W, shape: &[usize], values: &[f64]) -> Result<()> {
    let count: usize = shape.iter().product();
    if count != values.len() {
        return Err(Error::Dimension(format!("shape holds {count} values, got {}", values.len())));
    }
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &s in shape {
        w.write_all(&(s as u64).to_le_bytes())?;
    }
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Inverse of [`write_binary`].
pub fn read_binary(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    let bad = || Error::Io("truncated grid dump".into());
    let rank = u32::from_le_bytes(bytes.get(0..4).ok_or_else(bad)?.try_into().unwrap()) as usize;
    let mut off = 4;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let s = u64::from_le_bytes(bytes.get(off..off + 8).ok_or_else(bad)?.try_into().unwrap());
        shape.push(s as usize);
        off += 8;
    }
    let count: usize = shape.iter().product();
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(f64::from_le_bytes(bytes.get(off..off + 8).ok_or_else(bad)?.try_into().unwrap()));
        off += 8;
    }
    Ok((shape, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;

    #[test]
    fn torus_index_is_bijective() {
        let t = TorusGrid::new(2, 7).unwrap();
        let mut seen = vec![false; t.len()];
        for j in 0..7 {
            for i in 0..7 {
                let k = t.index(i, j);
                assert!(!seen[k]);
                seen[k] = true;
                assert_eq!(t.ij(k), (i as usize, j as usize));
            }
        }
        assert_eq!(t.index(-1, 7), t.index(6, 0));
    }

    #[test]
    fn strip_layout() {
        let g = Graph {
            psi: parse("0.2*sin(2*pi*y1)").unwrap(),
        };
        let s = StripGrid::new(2, 16, 9, 4.0, &g).unwrap();
        assert_eq!(s.class(3), NodeClass::Bottom);
        assert_eq!(s.class(s.index(3, 8)), NodeClass::Lid);
        assert_eq!(s.class(s.index(3, 4)), NodeClass::Interior);
        let c = s.coords(s.index(4, 0));
        assert!((c[1] - 0.2).abs() < 1e-12, "bottom nodes sit on the graph");
        let c = s.coords(s.index(4, 8));
        assert!((c[1] - 4.2).abs() < 1e-12);
        let mesh = Mesh::Strip(s);
        assert_eq!(mesh.neighbor(0, 0, -1), None);
        assert_eq!(mesh.neighbor(0, -1, 1), Some(16 + 15));
    }

    #[test]
    fn binary_round_trip() {
        let vals: Vec<f64> = (0..12).map(|k| k as f64 * 0.5 - 1.0).collect();
        let mut buf = Vec::new();
        write_binary(&mut buf, &[3, 4], &vals).unwrap();
        assert_eq!(buf.len(), 4 + 16 + 96);
        let (shape, back) = read_binary(&buf).unwrap();
        assert_eq!(shape, vec![3, 4]);
        assert_eq!(back, vals);
    }

    #[test]
    fn interpolation_reproduces_bilinear_fields() {
        let t = TorusGrid::new(2, 8).unwrap();
        let f = |y: Vec2| 1.0 + 0.5 * y[0] - 0.25 * y[1] + y[0] * y[1];
        let vals: Vec<f64> = (0..t.len()).map(|k| f(t.coords(k))).collect();
        let v = t.interpolate(&vals, &[0.3, 0.55]);
        assert!((v - f([0.3, 0.55])).abs() < 1e-12);
    }
}
