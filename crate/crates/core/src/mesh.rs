//! Coarse grid, fracture-conforming fine triangulation, and continuum DOF
//! indexing.
//!
//! The domain is a rectangle split into `nx × ny` coarse blocks; each block
//! is subdivided into `s × s` fine quads and each quad into two right
//! triangles (diagonal from the lower-left to the upper-right corner).
//! Fractures are axis-aligned segments that must lie on fine grid lines, so
//! every fracture is exactly covered by a chain of fine edges.
//!
//! Coarse unknowns ("continua") are one matrix average per block plus one
//! average per fracture piece, where a piece is the connected component of
//! (segment ∩ block). The global DOF order is: matrix DOFs `0..N` in block
//! order (row-major), then fracture-piece DOFs grouped by block and ordered
//! by segment id within a block.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FracError, Result};

/// Alignment tolerance (domain units) for fracture endpoints vs grid lines.
const ALIGN_TOL: f64 = 1e-12;

/// One axis-aligned fracture segment with its physical parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractureSpec {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    /// Aperture d (length units); scales the 1-D stiffness/mass of the line.
    pub aperture: f64,
    /// Fracture permeability κ_f (dimensionless conductivity).
    pub permeability: f64,
}

/// Serializable geometry description; the external JSON interface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    /// Domain extents: the rectangle [0, lx] × [0, ly].
    #[serde(default = "default_extent")]
    pub lx: f64,
    #[serde(default = "default_extent")]
    pub ly: f64,
    /// Coarse block counts.
    pub nx: usize,
    pub ny: usize,
    /// Fine subdivisions per block side.
    pub s: usize,
    /// Matrix permeability κ_m (uniform).
    #[serde(default = "default_perm")]
    pub kappa_matrix: f64,
    #[serde(default)]
    pub fractures: Vec<FractureSpec>,
}

fn default_extent() -> f64 {
    1.0
}

fn default_perm() -> f64 {
    1.0
}

impl GeometrySpec {
    pub fn unit_square(nx: usize, ny: usize, s: usize) -> Self {
        GeometrySpec {
            lx: 1.0,
            ly: 1.0,
            nx,
            ny,
            s,
            kappa_matrix: 1.0,
            fractures: Vec::new(),
        }
    }

    pub fn with_fractures(mut self, fractures: Vec<FractureSpec>) -> Self {
        self.fractures = fractures;
        self
    }

    /// Coarse block heights.
    pub fn block_h(&self) -> (f64, f64) {
        (self.lx / self.nx as f64, self.ly / self.ny as f64)
    }

    /// Translate one fracture segment vertically by `offset` coarse blocks,
    /// leaving all other segments unchanged. Rejects shifts that push the
    /// segment outside the domain (full validation happens on rebuild).
    pub fn shift_fracture(&self, segment: usize, offset: i64) -> Result<GeometrySpec> {
        let f = self.fractures.get(segment).ok_or_else(|| {
            FracError::InvalidGeometry(format!(
                "segment index {segment} out of range ({} segments)",
                self.fractures.len()
            ))
        })?;
        let (_, hy) = self.block_h();
        let dy = offset as f64 * hy;
        let ny0 = f.y0 + dy;
        let ny1 = f.y1 + dy;
        if ny0 < -ALIGN_TOL || ny0 > self.ly + ALIGN_TOL || ny1 < -ALIGN_TOL || ny1 > self.ly + ALIGN_TOL
        {
            return Err(FracError::InvalidGeometry(format!(
                "shifting segment {segment} by {offset} blocks moves it outside the domain \
                 (y would span [{ny0}, {ny1}])"
            )));
        }
        let mut out = self.clone();
        out.fractures[segment].y0 = ny0;
        out.fractures[segment].y1 = ny1;
        Ok(out)
    }

    /// Content hash of the spec (hex SHA-256 of its canonical JSON form).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("GeometrySpec serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex::encode(h.finalize())
    }
}

/// Kind of a continuum DOF.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DofKind {
    Matrix,
    /// Fracture piece of the given segment.
    Fracture { segment: usize },
}

/// A connected component of (fracture segment ∩ coarse block).
#[derive(Clone, Debug)]
pub struct FracturePiece {
    pub block: usize,
    pub segment: usize,
    /// Indices into `Geometry::fracture_edges`, ordered along the segment.
    pub edge_ids: Vec<usize>,
    /// Geometric length |f ∩ K| (no aperture factor).
    pub length: f64,
    pub aperture: f64,
}

/// Global coarse DOF numbering: matrix continua first (DOF = block id),
/// then fracture pieces grouped by block.
#[derive(Clone, Debug)]
pub struct ContinuumIndex {
    /// Total DOF count n = Σ_i (1 + L_i).
    pub n: usize,
    pub n_blocks: usize,
    /// Per block: the fracture-piece DOF ids inside it (count L_i).
    pub block_piece_dofs: Vec<Vec<usize>>,
    /// Piece metadata for DOF id `n_blocks + p`.
    pub pieces: Vec<FracturePiece>,
    /// Home block of every DOF.
    pub dof_block: Vec<usize>,
    pub dof_kind: Vec<DofKind>,
    /// Continuum measure: block area for matrix DOFs, aperture·length for
    /// fracture DOFs. These are the diagonal of the coarse mass matrix.
    pub measure: Vec<f64>,
}

impl ContinuumIndex {
    /// DOF ids homed in `block`: the matrix DOF followed by its pieces.
    pub fn dofs_of_block(&self, block: usize) -> Vec<usize> {
        let mut v = vec![block];
        v.extend_from_slice(&self.block_piece_dofs[block]);
        v
    }
}

/// One fine edge lying on a fracture segment.
#[derive(Clone, Debug)]
pub struct FractureEdge {
    pub v0: usize,
    pub v1: usize,
    pub segment: usize,
    pub block: usize,
    /// Piece DOF id this edge contributes to.
    pub dof: usize,
    pub length: f64,
    pub aperture: f64,
    pub permeability: f64,
}

/// Fully built geometry: coarse grid + fine mesh + continuum index.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub spec: GeometrySpec,
    /// Fine cells per direction (nx·s, ny·s).
    pub nxs: usize,
    pub nys: usize,
    /// Fine cell sizes.
    pub hx: f64,
    pub hy: f64,
    pub n_vertices: usize,
    /// Triangle vertex triples; triangle 2c and 2c+1 split fine cell c.
    pub triangles: Vec<[usize; 3]>,
    /// Coarse block of each triangle.
    pub tri_block: Vec<usize>,
    /// Area of one fine triangle (uniform over the mesh).
    pub tri_area: f64,
    /// Triangles of each coarse block.
    pub block_tris: Vec<Vec<usize>>,
    pub fracture_edges: Vec<FractureEdge>,
    pub index: ContinuumIndex,
    hash: String,
}

impl Geometry {
    pub fn n_blocks(&self) -> usize {
        self.spec.nx * self.spec.ny
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    #[inline]
    pub fn vertex_id(&self, i: usize, j: usize) -> usize {
        j * (self.nxs + 1) + i
    }

    #[inline]
    pub fn vertex_xy(&self, v: usize) -> [f64; 2] {
        let w = self.nxs + 1;
        let i = v % w;
        let j = v / w;
        [i as f64 * self.hx, j as f64 * self.hy]
    }

    pub fn tri_vertices_xy(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertex_xy(a), self.vertex_xy(b), self.vertex_xy(c)]
    }

    pub fn tri_centroid(&self, t: usize) -> [f64; 2] {
        let p = self.tri_vertices_xy(t);
        [
            (p[0][0] + p[1][0] + p[2][0]) / 3.0,
            (p[0][1] + p[1][1] + p[2][1]) / 3.0,
        ]
    }

    pub fn edge_midpoint(&self, e: &FractureEdge) -> [f64; 2] {
        let a = self.vertex_xy(e.v0);
        let b = self.vertex_xy(e.v1);
        [(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5]
    }

    /// (row, col) of a block id.
    #[inline]
    pub fn block_rc(&self, block: usize) -> (usize, usize) {
        (block / self.spec.nx, block % self.spec.nx)
    }

    #[inline]
    pub fn block_id(&self, row: usize, col: usize) -> usize {
        row * self.spec.nx + col
    }

    /// Coarse block containing point `p` (boundary points go below/left).
    pub fn block_of_point(&self, p: [f64; 2]) -> usize {
        let (bx, by) = self.spec.block_h();
        let col = ((p[0] / bx).floor() as isize).clamp(0, self.spec.nx as isize - 1) as usize;
        let row = ((p[1] / by).floor() as isize).clamp(0, self.spec.ny as isize - 1) as usize;
        self.block_id(row, col)
    }

    /// Chebyshev distance between two blocks in grid indices.
    pub fn block_distance(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.block_rc(a);
        let (rb, cb) = self.block_rc(b);
        ra.abs_diff(rb).max(ca.abs_diff(cb))
    }

    /// Continuum averages of a fine nodal field: exact P1 integration per
    /// block / per fracture piece, divided by the geometric measure.
    pub fn continuum_averages(&self, u_fine: &[f64]) -> Vec<f64> {
        assert_eq!(u_fine.len(), self.n_vertices);
        let idx = &self.index;
        let mut out = vec![0.0; idx.n];
        for b in 0..idx.n_blocks {
            let mut acc = 0.0;
            for &t in &self.block_tris[b] {
                let [a, c, d] = self.triangles[t];
                acc += (u_fine[a] + u_fine[c] + u_fine[d]) * (self.tri_area / 3.0);
            }
            out[b] = acc / (self.tri_area * self.block_tris[b].len() as f64);
        }
        for (p, piece) in idx.pieces.iter().enumerate() {
            let mut acc = 0.0;
            for &e in &piece.edge_ids {
                let edge = &self.fracture_edges[e];
                acc += (u_fine[edge.v0] + u_fine[edge.v1]) * (edge.length * 0.5);
            }
            out[idx.n_blocks + p] = acc / piece.length;
        }
        out
    }

    /// Translate one fracture and rebuild (validating the result).
    pub fn shift_fracture(&self, segment: usize, offset: i64) -> Result<Geometry> {
        build_geometry(&self.spec.shift_fracture(segment, offset)?)
    }
}

/// Snap a coordinate to the fine-grid index it lies on, or report
/// misalignment.
fn snap(coord: f64, h: f64, n: usize, seg: usize, what: &str) -> Result<usize> {
    let k = (coord / h).round();
    if (coord - k * h).abs() > ALIGN_TOL || k < 0.0 || k > n as f64 {
        return Err(FracError::MisalignedFracture {
            index: seg,
            detail: format!(
                "{what}={coord} does not lie on a fine grid line (h={h}, grid 0..{n})"
            ),
        });
    }
    Ok(k as usize)
}

/// Build the full geometry from a spec, validating fracture alignment.
pub fn build_geometry(spec: &GeometrySpec) -> Result<Geometry> {
    if spec.nx < 1 || spec.ny < 1 || spec.s < 1 {
        return Err(FracError::InvalidGeometry(format!(
            "nx, ny, s must be ≥ 1 (got {}, {}, {})",
            spec.nx, spec.ny, spec.s
        )));
    }
    if !(spec.lx > 0.0 && spec.ly > 0.0) {
        return Err(FracError::InvalidGeometry("domain extents must be positive".into()));
    }
    if !(spec.kappa_matrix > 0.0) {
        return Err(FracError::InvalidGeometry("matrix permeability must be positive".into()));
    }

    let nxs = spec.nx * spec.s;
    let nys = spec.ny * spec.s;
    let hx = spec.lx / nxs as f64;
    let hy = spec.ly / nys as f64;
    let n_vertices = (nxs + 1) * (nys + 1);
    let n_blocks = spec.nx * spec.ny;

    // Triangles: two per fine cell, cells in row-major order.
    let mut triangles = Vec::with_capacity(2 * nxs * nys);
    let mut tri_block = Vec::with_capacity(2 * nxs * nys);
    let mut block_tris = vec![Vec::new(); n_blocks];
    let vid = |i: usize, j: usize| j * (nxs + 1) + i;
    for j in 0..nys {
        for i in 0..nxs {
            let block = (j / spec.s) * spec.nx + (i / spec.s);
            let lower = [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)];
            let upper = [vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)];
            for tri in [lower, upper] {
                block_tris[block].push(triangles.len());
                triangles.push(tri);
                tri_block.push(block);
            }
        }
    }

    // Fracture edges, segment by segment, ordered along each segment.
    // Piece DOFs are assigned afterwards, once pieces are grouped per block.
    struct RawEdge {
        v0: usize,
        v1: usize,
        segment: usize,
        block: usize,
        length: f64,
    }
    let mut raw_edges: Vec<RawEdge> = Vec::new();
    for (sid, f) in spec.fractures.iter().enumerate() {
        if !(f.aperture > 0.0) || !(f.permeability > 0.0) {
            return Err(FracError::InvalidGeometry(format!(
                "segment {sid}: aperture and permeability must be positive"
            )));
        }
        let horizontal = (f.y0 - f.y1).abs() <= ALIGN_TOL;
        let vertical = (f.x0 - f.x1).abs() <= ALIGN_TOL;
        if horizontal == vertical {
            // both: zero length; neither: oblique
            return Err(FracError::MisalignedFracture {
                index: sid,
                detail: format!(
                    "segment must be axis-aligned with nonzero length \
                     (endpoints ({}, {}) – ({}, {}))",
                    f.x0, f.y0, f.x1, f.y1
                ),
            });
        }
        if horizontal {
            let j = snap(f.y0, hy, nys, sid, "y")?;
            let (xa, xb) = if f.x0 <= f.x1 { (f.x0, f.x1) } else { (f.x1, f.x0) };
            let i0 = snap(xa, hx, nxs, sid, "x0")?;
            let i1 = snap(xb, hx, nxs, sid, "x1")?;
            if i0 == i1 {
                return Err(FracError::MisalignedFracture {
                    index: sid,
                    detail: "segment has zero length".into(),
                });
            }
            // Edge on a coarse line belongs to the block below.
            let row = if j % spec.s == 0 {
                (j / spec.s).saturating_sub(1).min(spec.ny - 1)
            } else {
                j / spec.s
            };
            for i in i0..i1 {
                let block = row * spec.nx + i / spec.s;
                raw_edges.push(RawEdge {
                    v0: vid(i, j),
                    v1: vid(i + 1, j),
                    segment: sid,
                    block,
                    length: hx,
                });
            }
        } else {
            let i = snap(f.x0, hx, nxs, sid, "x")?;
            let (ya, yb) = if f.y0 <= f.y1 { (f.y0, f.y1) } else { (f.y1, f.y0) };
            let j0 = snap(ya, hy, nys, sid, "y0")?;
            let j1 = snap(yb, hy, nys, sid, "y1")?;
            if j0 == j1 {
                return Err(FracError::MisalignedFracture {
                    index: sid,
                    detail: "segment has zero length".into(),
                });
            }
            // Edge on a coarse line belongs to the block to the left.
            let col = if i % spec.s == 0 {
                (i / spec.s).saturating_sub(1).min(spec.nx - 1)
            } else {
                i / spec.s
            };
            for j in j0..j1 {
                let block = (j / spec.s) * spec.nx + col;
                raw_edges.push(RawEdge {
                    v0: vid(i, j),
                    v1: vid(i, j + 1),
                    segment: sid,
                    block,
                    length: hy,
                });
            }
        }
    }

    // Group edges into pieces = (block, segment) pairs. An axis-aligned
    // segment meets a rectangular block in one interval, so this grouping is
    // exactly the connected components of segment ∩ block.
    let mut per_block: Vec<Vec<(usize, Vec<usize>)>> = vec![Vec::new(); n_blocks];
    for (eid, e) in raw_edges.iter().enumerate() {
        let bucket = &mut per_block[e.block];
        match bucket.iter_mut().find(|(seg, _)| *seg == e.segment) {
            Some((_, ids)) => ids.push(eid),
            None => bucket.push((e.segment, vec![eid])),
        }
    }
    for bucket in per_block.iter_mut() {
        bucket.sort_by_key(|(seg, _)| *seg);
    }

    let mut pieces = Vec::new();
    let mut block_piece_dofs = vec![Vec::new(); n_blocks];
    let mut edge_dof = vec![usize::MAX; raw_edges.len()];
    for (b, bucket) in per_block.iter().enumerate() {
        for (seg, edge_ids) in bucket {
            let dof = n_blocks + pieces.len();
            block_piece_dofs[b].push(dof);
            for &e in edge_ids {
                edge_dof[e] = dof;
            }
            let length: f64 = edge_ids.iter().map(|&e| raw_edges[e].length).sum();
            pieces.push(FracturePiece {
                block: b,
                segment: *seg,
                edge_ids: edge_ids.clone(),
                length,
                aperture: spec.fractures[*seg].aperture,
            });
        }
    }

    let n = n_blocks + pieces.len();
    let mut dof_block = Vec::with_capacity(n);
    let mut dof_kind = Vec::with_capacity(n);
    let mut measure = Vec::with_capacity(n);
    let tri_area = 0.5 * hx * hy;
    for b in 0..n_blocks {
        dof_block.push(b);
        dof_kind.push(DofKind::Matrix);
        measure.push(tri_area * block_tris[b].len() as f64);
    }
    for piece in &pieces {
        dof_block.push(piece.block);
        dof_kind.push(DofKind::Fracture {
            segment: piece.segment,
        });
        measure.push(piece.aperture * piece.length);
    }

    let fracture_edges = raw_edges
        .into_iter()
        .enumerate()
        .map(|(eid, e)| FractureEdge {
            v0: e.v0,
            v1: e.v1,
            segment: e.segment,
            block: e.block,
            dof: edge_dof[eid],
            length: e.length,
            aperture: spec.fractures[e.segment].aperture,
            permeability: spec.fractures[e.segment].permeability,
        })
        .collect();

    let hash = spec.hash();
    Ok(Geometry {
        spec: spec.clone(),
        nxs,
        nys,
        hx,
        hy,
        n_vertices,
        triangles,
        tri_block,
        tri_area,
        block_tris,
        fracture_edges,
        index: ContinuumIndex {
            n,
            n_blocks,
            block_piece_dofs,
            pieces,
            dof_block,
            dof_kind,
            measure,
        },
        hash,
    })
}

/// Oversampled region K⁺: the center block widened by `k` layers of coarse
/// neighbors, clipped to the grid, with local node maps for the basis solve.
#[derive(Debug)]
pub struct OversampleRegion {
    pub center_block: usize,
    pub k: usize,
    /// Inclusive coarse index ranges.
    pub rows: (usize, usize),
    pub cols: (usize, usize),
    /// Member block ids, ascending.
    pub blocks: Vec<usize>,
    /// Fine vertices strictly inside the region (ascending global ids).
    /// These are the unknowns of the local Dirichlet problem.
    pub interior: Vec<usize>,
    /// Map global vertex id → local interior index (usize::MAX outside).
    pub local_of_vertex: Vec<usize>,
    /// Continuum DOFs homed in the region, ascending.
    pub dofs: Vec<usize>,
}

impl OversampleRegion {
    pub fn contains_block(&self, geo: &Geometry, block: usize) -> bool {
        let (r, c) = geo.block_rc(block);
        r >= self.rows.0 && r <= self.rows.1 && c >= self.cols.0 && c <= self.cols.1
    }
}

/// Build the oversample region of `block` with `k` layers.
pub fn oversample(geo: &Geometry, block: usize, k: usize) -> OversampleRegion {
    assert!(block < geo.n_blocks(), "block id out of range");
    let (row, col) = geo.block_rc(block);
    let rows = (row.saturating_sub(k), (row + k).min(geo.spec.ny - 1));
    let cols = (col.saturating_sub(k), (col + k).min(geo.spec.nx - 1));
    let mut blocks = Vec::new();
    for r in rows.0..=rows.1 {
        for c in cols.0..=cols.1 {
            blocks.push(geo.block_id(r, c));
        }
    }
    blocks.sort_unstable();

    let s = geo.spec.s;
    // Free fine vertices of the local problem. The zero-Dirichlet cut is
    // only the artificial part of ∂K⁺: where the region rectangle lies on
    // the physical boundary, the global no-flux condition applies and those
    // vertices stay free (otherwise boundary blocks would keep an O(1)
    // basis error no matter how many oversampling layers are added).
    let (i0, i1) = (cols.0 * s, (cols.1 + 1) * s);
    let (j0, j1) = (rows.0 * s, (rows.1 + 1) * s);
    let ilo = if cols.0 == 0 { i0 } else { i0 + 1 };
    let ihi = if cols.1 == geo.spec.nx - 1 { i1 } else { i1 - 1 };
    let jlo = if rows.0 == 0 { j0 } else { j0 + 1 };
    let jhi = if rows.1 == geo.spec.ny - 1 { j1 } else { j1 - 1 };
    let mut interior = Vec::new();
    let mut local_of_vertex = vec![usize::MAX; geo.n_vertices];
    for j in jlo..=jhi {
        for i in ilo..=ihi {
            let v = geo.vertex_id(i, j);
            local_of_vertex[v] = interior.len();
            interior.push(v);
        }
    }

    let mut dofs = Vec::new();
    for &b in &blocks {
        dofs.extend(geo.index.dofs_of_block(b));
    }
    dofs.sort_unstable();

    OversampleRegion {
        center_block: block,
        k,
        rows,
        cols,
        blocks,
        interior,
        local_of_vertex,
        dofs,
    }
}

/// Read a geometry spec from a JSON file.
pub fn read_spec(path: &std::path::Path) -> Result<GeometrySpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| FracError::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| FracError::MalformedFile {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Write a geometry spec as pretty JSON (full round-trip precision).
pub fn write_spec(spec: &GeometrySpec, path: &std::path::Path) -> Result<()> {
    let text = serde_json::to_string_pretty(spec).expect("GeometrySpec serializes");
    std::fs::write(path, text).map_err(|e| FracError::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn horizontal(y: f64, x0: f64, x1: f64) -> FractureSpec {
        FractureSpec {
            x0,
            y0: y,
            x1,
            y1: y,
            aperture: 0.01,
            permeability: 1000.0,
        }
    }

    #[test]
    fn counts_on_default_grid() {
        let geo = build_geometry(&GeometrySpec::unit_square(10, 10, 10)).unwrap();
        assert_eq!(geo.n_blocks(), 100);
        assert_eq!(geo.index.n, 100);
        assert_eq!(geo.triangles.len(), 20_000);
        assert!((geo.spec.block_h().0 - 0.1).abs() < 1e-15);
        assert_eq!(geo.n_vertices, 101 * 101);
    }

    #[test]
    fn one_fracture_spanning_eight_blocks_adds_eight_continua() {
        let spec = GeometrySpec::unit_square(10, 10, 10)
            .with_fractures(vec![horizontal(0.25, 0.1, 0.9)]);
        let geo = build_geometry(&spec).unwrap();
        assert_eq!(geo.index.n, 108);
        assert_eq!(geo.index.pieces.len(), 8);
        assert_eq!(geo.fracture_edges.len(), 80);
        // y = 0.25 is interior to block row 2; pieces live in columns 1..=8.
        for (p, piece) in geo.index.pieces.iter().enumerate() {
            let (r, c) = geo.block_rc(piece.block);
            assert_eq!(r, 2);
            assert_eq!(c, p + 1);
            assert!((piece.length - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn smallest_mesh() {
        let geo = build_geometry(&GeometrySpec::unit_square(1, 1, 1)).unwrap();
        assert_eq!(geo.triangles.len(), 2);
        assert_eq!(geo.index.n, 1);
        assert_eq!(geo.n_vertices, 4);
    }

    #[test]
    fn indexing_is_contiguous_and_complete() {
        // hy = 1/15; y = 2/15 lies on a fine grid line.
        let spec = GeometrySpec::unit_square(4, 3, 5)
            .with_fractures(vec![horizontal(2.0 / 15.0, 0.0, 0.75)]);
        let geo = build_geometry(&spec).unwrap();
        let idx = &geo.index;
        let total: usize = (0..idx.n_blocks)
            .map(|b| 1 + idx.block_piece_dofs[b].len())
            .sum();
        assert_eq!(total, idx.n);
        assert_eq!(idx.dof_block.len(), idx.n);
        // Every fracture edge maps to exactly one piece DOF.
        for e in &geo.fracture_edges {
            assert!(e.dof >= idx.n_blocks && e.dof < idx.n);
            let piece = &idx.pieces[e.dof - idx.n_blocks];
            assert_eq!(piece.block, e.block);
        }
    }

    #[test]
    fn fracture_edge_midpoints_lie_on_their_segments() {
        let spec = GeometrySpec::unit_square(10, 10, 10).with_fractures(vec![
            horizontal(0.25, 0.1, 0.9),
            FractureSpec {
                x0: 0.75,
                y0: 0.5,
                x1: 0.75,
                y1: 0.9,
                aperture: 0.01,
                permeability: 1000.0,
            },
        ]);
        let geo = build_geometry(&spec).unwrap();
        assert_eq!(geo.index.n, 100 + 8 + 4);
        for e in &geo.fracture_edges {
            let m = geo.edge_midpoint(e);
            let f = &geo.spec.fractures[e.segment];
            let on = if (f.y0 - f.y1).abs() < 1e-15 {
                (m[1] - f.y0).abs() <= 1e-12
                    && m[0] >= f.x0.min(f.x1) - 1e-12
                    && m[0] <= f.x0.max(f.x1) + 1e-12
            } else {
                (m[0] - f.x0).abs() <= 1e-12
                    && m[1] >= f.y0.min(f.y1) - 1e-12
                    && m[1] <= f.y0.max(f.y1) + 1e-12
            };
            assert!(on, "edge midpoint {m:?} off segment {}", e.segment);
        }
    }

    #[test]
    fn misaligned_and_oblique_fractures_are_rejected() {
        let base = GeometrySpec::unit_square(10, 10, 10);
        let oblique = base.clone().with_fractures(vec![FractureSpec {
            x0: 0.0,
            y0: 0.0,
            x1: 0.5,
            y1: 0.5,
            aperture: 0.01,
            permeability: 1.0,
        }]);
        assert!(matches!(
            build_geometry(&oblique),
            Err(FracError::MisalignedFracture { index: 0, .. })
        ));
        let off_grid = base.clone().with_fractures(vec![horizontal(0.2501, 0.1, 0.9)]);
        assert!(build_geometry(&off_grid).is_err());
        let outside = base.with_fractures(vec![horizontal(0.25, 0.5, 1.2)]);
        assert!(build_geometry(&outside).is_err());
    }

    #[test]
    fn oversample_membership_counts() {
        let geo = build_geometry(&GeometrySpec::unit_square(10, 10, 10)).unwrap();
        let interior = geo.block_id(5, 5);
        assert_eq!(oversample(&geo, interior, 1).blocks.len(), 9);
        assert_eq!(oversample(&geo, 0, 1).blocks.len(), 4);
        let r0 = oversample(&geo, interior, 0);
        assert_eq!(r0.blocks, vec![interior]);
        // k=0 interior nodes: strictly inside one block of s=10 → 9×9.
        assert_eq!(r0.interior.len(), 81);
    }

    #[test]
    fn oversample_is_monotone_in_k() {
        let geo = build_geometry(&GeometrySpec::unit_square(10, 10, 10)).unwrap();
        for &b in &[0usize, 7, 55, 99] {
            let mut prev: Vec<usize> = Vec::new();
            for k in 0..4 {
                let r = oversample(&geo, b, k);
                assert!(prev.iter().all(|x| r.blocks.contains(x)));
                prev = r.blocks;
            }
        }
    }

    #[test]
    fn shift_fracture_translates_and_rejects() {
        let spec = GeometrySpec::unit_square(10, 10, 10)
            .with_fractures(vec![horizontal(0.45, 0.2, 0.8)]);
        let up = spec.shift_fracture(0, 1).unwrap();
        assert!((up.fractures[0].y0 - 0.55).abs() < 1e-15);
        assert!((up.fractures[0].y1 - 0.55).abs() < 1e-15);
        let same = spec.shift_fracture(0, 0).unwrap();
        assert_eq!(same, spec);
        assert!(spec.shift_fracture(0, 6).is_err());
        assert!(spec.shift_fracture(0, -5).is_err());
        assert!(spec.shift_fracture(1, 1).is_err());
        // The shifted spec still builds and keeps its continuum count.
        let geo = build_geometry(&up).unwrap();
        assert_eq!(geo.index.n, 106);
    }

    #[test]
    fn build_is_deterministic() {
        let spec = GeometrySpec::unit_square(6, 6, 4).with_fractures(vec![
            horizontal(0.25, 0.0, 0.5),
            FractureSpec {
                x0: 0.5,
                y0: 0.25,
                x1: 0.5,
                y1: 0.75,
                aperture: 0.02,
                permeability: 500.0,
            },
        ]);
        let a = build_geometry(&spec).unwrap();
        let b = build_geometry(&spec).unwrap();
        assert_eq!(a.triangles, b.triangles);
        assert_eq!(a.tri_block, b.tri_block);
        assert_eq!(a.index.dof_block, b.index.dof_block);
        assert_eq!(a.index.measure, b.index.measure);
        assert_eq!(a.hash(), b.hash());
        let edges_a: Vec<_> = a.fracture_edges.iter().map(|e| (e.v0, e.v1, e.dof)).collect();
        let edges_b: Vec<_> = b.fracture_edges.iter().map(|e| (e.v0, e.v1, e.dof)).collect();
        assert_eq!(edges_a, edges_b);
    }

    #[test]
    fn spec_json_round_trip_is_exact() {
        let spec =
            GeometrySpec::unit_square(10, 10, 10).with_fractures(vec![horizontal(0.35, 0.1, 0.9)]);
        let json = serde_json::to_string(&spec).unwrap();
        let back: GeometrySpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.hash(), spec.hash());
    }

    #[test]
    fn continuum_averages_of_linear_field_are_exact() {
        let spec = GeometrySpec::unit_square(4, 4, 4)
            .with_fractures(vec![horizontal(0.25, 0.25, 0.75)]);
        let geo = build_geometry(&spec).unwrap();
        // u(x, y) = x: block averages equal block centers; fracture-piece
        // averages equal piece midpoints (P1 quadrature is exact here).
        let u: Vec<f64> = (0..geo.n_vertices).map(|v| geo.vertex_xy(v)[0]).collect();
        let avg = geo.continuum_averages(&u);
        for b in 0..geo.n_blocks() {
            let (_, c) = geo.block_rc(b);
            let center = (c as f64 + 0.5) * 0.25;
            assert!((avg[b] - center).abs() < 1e-13, "block {b}");
        }
        for (p, piece) in geo.index.pieces.iter().enumerate() {
            let xs: Vec<f64> = piece
                .edge_ids
                .iter()
                .map(|&e| geo.edge_midpoint(&geo.fracture_edges[e])[0])
                .collect();
            let mid = xs.iter().sum::<f64>() / xs.len() as f64;
            assert!((avg[geo.index.n_blocks + p] - mid).abs() < 1e-13);
        }
    }

    #[test]
    fn crossing_segments_in_one_block_yield_distinct_continua() {
        // Vertical and horizontal fractures crossing inside block (5, 7).
        let spec = GeometrySpec::unit_square(10, 10, 10).with_fractures(vec![
            horizontal(0.55, 0.2, 0.8),
            FractureSpec {
                x0: 0.75,
                y0: 0.5,
                x1: 0.75,
                y1: 0.9,
                aperture: 0.005,
                permeability: 800.0,
            },
        ]);
        let geo = build_geometry(&spec).unwrap();
        let shared = geo.block_id(5, 7);
        assert_eq!(geo.index.block_piece_dofs[shared].len(), 2);
        let kinds: Vec<usize> = geo.index.block_piece_dofs[shared]
            .iter()
            .map(|&d| match geo.index.dof_kind[d] {
                DofKind::Fracture { segment } => segment,
                DofKind::Matrix => unreachable!(),
            })
            .collect();
        assert_eq!(kinds, vec![0, 1]);
    }
}
