//! Non-local multi-continuum (NLMC) upscaling.
//!
//! Each coarse DOF (a continuum: block matrix average or fracture-piece
//! average) gets a multiscale basis function built on the oversampled region
//! K⁺ of its home block: the discrete energy minimizer in
//! V₀(K⁺) = {v : v = 0 on ∂K⁺} subject to average constraints
//!
//!   avg_{K_j}(ψ) = δ (its own continuum), avg over every other continuum = 0,
//!
//! solved as the saddle-point system [A_loc Cᵀ; C 0]·[ψ; μ] = [0; e].
//! With average-normalized constraints the coarse DOFs are continuum
//! averages, so the coarse mass matrix is the diagonal of continuum measures
//! and coarse states are directly comparable to averaged fine solutions.
//!
//! The transmissibility couplings are Galerkin energy products
//! G_pq = ψ_pᵀ A_f ψ_q; the coarse stiffness A_T keeps the off-diagonal
//! couplings and takes −Σ_{q≠p} G_pq on the diagonal, which preserves
//! constants exactly. Basis functions are built once from a mobility
//! snapshot (t = 0); when mobility is time dependent the coarse operator is
//! re-energized per step with the frozen basis.

use ndarray::Array2;

use crate::error::{FracError, Result};
use crate::fine::{assemble_stiffness, Mobility, Source, TimeStepper};
use crate::mesh::{oversample, DofKind, Geometry, OversampleRegion};
use crate::sparse::{CsrMatrix, LuFactor, TripletBuilder};

/// Tolerance on ‖Cψ − e‖_∞ for every basis solve.
pub const CONSTRAINT_TOL: f64 = 1e-9;

/// Identity of the mobility field a basis set was built against.
#[derive(Clone, Debug, PartialEq)]
pub struct MobilitySnapshot {
    pub time: f64,
    pub descriptor: String,
}

/// Basis functions for every coarse DOF, as columns of a dense fine-grid
/// matrix (entries outside each DOF's region are exact zeros).
pub struct BasisSet {
    pub k: usize,
    /// (n_vertices × n); column d is ψ for coarse DOF d.
    pub psi: Array2<f64>,
    /// Lagrange multipliers of each DOF's solve (diagnostics).
    pub multipliers: Vec<Vec<f64>>,
    pub snapshot: MobilitySnapshot,
    pub geometry_hash: String,
}

/// Basis vectors for the continua of one block (intermediate product).
pub struct BlockBasis {
    pub block: usize,
    /// (dof id, fine-grid vector, multipliers) per continuum of the block.
    pub vectors: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

/// Assemble the local stiffness A_loc restricted to the region's interior
/// nodes (zero-Dirichlet elimination of ∂K⁺).
fn local_stiffness(
    geo: &Geometry,
    region: &OversampleRegion,
    mobility: &Mobility,
    t: f64,
    builder: &mut TripletBuilder,
) -> Result<()> {
    let kappa_m = geo.spec.kappa_matrix;
    let loc = &region.local_of_vertex;
    for &b in &region.blocks {
        for &tid in &geo.block_tris[b] {
            let tri = geo.triangles[tid];
            let lam = mobility.eval(t, geo.tri_centroid(tid));
            if !(lam > 0.0) {
                return Err(FracError::InvalidConfig(format!(
                    "nonpositive mobility sample {lam} at triangle {tid}"
                )));
            }
            let k = crate::fine::p1_local_stiffness(geo.tri_vertices_xy(tid), kappa_m * lam);
            for a in 0..3 {
                let la = loc[tri[a]];
                if la == usize::MAX {
                    continue;
                }
                for c in a..3 {
                    let lc = loc[tri[c]];
                    if lc == usize::MAX {
                        continue;
                    }
                    builder.push_sym(la, lc, k[a][c]);
                }
            }
        }
    }
    for &dof in &region.dofs {
        if let DofKind::Fracture { .. } = geo.index.dof_kind[dof] {
            let piece = &geo.index.pieces[dof - geo.index.n_blocks];
            for &eid in &piece.edge_ids {
                let e = &geo.fracture_edges[eid];
                let lam = mobility.eval(t, geo.edge_midpoint(e));
                if !(lam > 0.0) {
                    return Err(FracError::InvalidConfig(format!(
                        "nonpositive mobility sample {lam} at fracture edge {eid}"
                    )));
                }
                let w = e.aperture * e.permeability * lam / e.length;
                let (l0, l1) = (loc[e.v0], loc[e.v1]);
                if l0 != usize::MAX {
                    builder.push_sym(l0, l0, w);
                }
                if l1 != usize::MAX {
                    builder.push_sym(l1, l1, w);
                }
                if l0 != usize::MAX && l1 != usize::MAX {
                    builder.push_sym(l0, l1, -w);
                }
            }
        }
    }
    Ok(())
}

/// Average-functional row of one continuum over the region's interior nodes:
/// pairs (local node, coefficient) with Σ coeff·ψ = avg over the continuum.
fn constraint_row(geo: &Geometry, region: &OversampleRegion, dof: usize) -> Vec<(usize, f64)> {
    let loc = &region.local_of_vertex;
    let mut row: Vec<(usize, f64)> = Vec::new();
    let mut add = |node: usize, w: f64| {
        let l = loc[node];
        if l != usize::MAX {
            row.push((l, w));
        }
    };
    match geo.index.dof_kind[dof] {
        DofKind::Matrix => {
            let b = dof;
            let area = geo.tri_area * geo.block_tris[b].len() as f64;
            let w = geo.tri_area / 3.0 / area;
            for &tid in &geo.block_tris[b] {
                for &v in &geo.triangles[tid] {
                    add(v, w);
                }
            }
        }
        DofKind::Fracture { .. } => {
            let piece = &geo.index.pieces[dof - geo.index.n_blocks];
            for &eid in &piece.edge_ids {
                let e = &geo.fracture_edges[eid];
                let w = e.length * 0.5 / piece.length;
                add(e.v0, w);
                add(e.v1, w);
            }
        }
    }
    // Merge duplicate node entries deterministically (vertices shared by
    // several triangles of the block).
    row.sort_by_key(|&(l, _)| l);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for (l, w) in row {
        match merged.last_mut() {
            Some((ml, mw)) if *ml == l => *mw += w,
            _ => merged.push((l, w)),
        }
    }
    merged
}

/// Build the NLMC basis vectors for all continua of `region.center_block`.
pub fn build_basis_for_block(
    geo: &Geometry,
    region: &OversampleRegion,
    mobility: &Mobility,
    t: f64,
) -> Result<BlockBasis> {
    let ni = region.interior.len();
    let center = region.center_block;

    // Constraint rows for every continuum in the region. Rows whose
    // functional has no interior support (a fracture piece lying exactly on
    // ∂K⁺) are vacuous — any V₀ function has zero average there — and are
    // dropped; a vacuous row can never belong to the center block's own
    // continua, which sit strictly inside the region.
    let mut kept_dofs: Vec<usize> = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for &dof in &region.dofs {
        let row = constraint_row(geo, region, dof);
        if row.is_empty() {
            if geo.index.dof_block[dof] == center {
                return Err(FracError::RankDeficientConstraints {
                    block: center,
                    continuum: dof,
                    detail: "target continuum has no interior support in its own region \
                             (fracture piece on the region boundary)"
                        .into(),
                });
            }
            continue;
        }
        kept_dofs.push(dof);
        rows.push(row);
    }
    let nc = rows.len();

    let mut builder = TripletBuilder::new(ni + nc, ni + nc);
    local_stiffness(geo, region, mobility, t, &mut builder)?;
    for (r, row) in rows.iter().enumerate() {
        for &(l, w) in row {
            builder.push_sym(ni + r, l, w);
        }
    }
    let saddle = builder.build();
    let factor = LuFactor::new(&saddle, "NLMC basis saddle system").map_err(|e| {
        FracError::RankDeficientConstraints {
            block: center,
            continuum: center,
            detail: format!("saddle factorization failed (duplicate or dependent constraints?): {e}"),
        }
    })?;

    let targets = geo.index.dofs_of_block(center);
    let rhs: Vec<Vec<f64>> = targets
        .iter()
        .map(|&dof| {
            let mut r = vec![0.0; ni + nc];
            let pos = kept_dofs
                .iter()
                .position(|&d| d == dof)
                .expect("center continuum is always kept");
            r[ni + pos] = 1.0;
            r
        })
        .collect();
    let sols = factor.solve_multi(&rhs);

    let mut vectors = Vec::with_capacity(targets.len());
    for (&dof, sol) in targets.iter().zip(&sols) {
        // Verify the constraints directly: ‖Cψ − e‖_∞ ≤ tolerance.
        let mut worst = 0.0f64;
        for (r, row) in rows.iter().enumerate() {
            let mut acc = 0.0;
            for &(l, w) in row {
                acc += w * sol[l];
            }
            let target = if kept_dofs[r] == dof { 1.0 } else { 0.0 };
            worst = worst.max((acc - target).abs());
        }
        if worst > CONSTRAINT_TOL {
            return Err(FracError::ConstraintResidual {
                block: center,
                continuum: dof,
                residual: worst,
                tol: CONSTRAINT_TOL,
            });
        }
        let mut global = vec![0.0; geo.n_vertices];
        for (l, &v) in region.interior.iter().enumerate() {
            global[v] = sol[l];
        }
        let mu = sol[ni..].to_vec();
        vectors.push((dof, global, mu));
    }
    Ok(BlockBasis {
        block: center,
        vectors,
    })
}

/// Build the complete basis set with `k` oversampling layers, one region per
/// coarse block, using the mobility state at time `t` as the energy snapshot.
pub fn build_basis(geo: &Geometry, k: usize, mobility: &Mobility, t: f64) -> Result<BasisSet> {
    let n = geo.index.n;
    let mut psi = Array2::zeros((geo.n_vertices, n));
    let mut multipliers: Vec<Vec<f64>> = vec![Vec::new(); n];
    for block in 0..geo.n_blocks() {
        let region = oversample(geo, block, k);
        let bb = build_basis_for_block(geo, &region, mobility, t)?;
        for (dof, vec, mu) in bb.vectors {
            for (i, &v) in vec.iter().enumerate() {
                psi[[i, dof]] = v;
            }
            multipliers[dof] = mu;
        }
    }
    Ok(BasisSet {
        k,
        psi,
        multipliers,
        snapshot: MobilitySnapshot {
            time: t,
            descriptor: mobility.descriptor(),
        },
        geometry_hash: geo.hash().to_string(),
    })
}

/// Galerkin transmissibility couplings G_pq = ψ_pᵀ A_f(t) ψ_q and the coarse
/// stiffness A_T (off-diagonal = G, diagonal = −Σ_{q≠p} G_pq). The basis must
/// have been built against the same geometry and mobility field; `t` may
/// differ from the snapshot time (frozen basis, re-energized operator).
pub fn assemble_transmissibility(
    geo: &Geometry,
    basis: &BasisSet,
    mobility: &Mobility,
    t: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if basis.geometry_hash != geo.hash() {
        return Err(FracError::InvalidConfig(
            "basis set was built for a different geometry".into(),
        ));
    }
    if basis.snapshot.descriptor != mobility.descriptor() {
        return Err(FracError::InvalidConfig(format!(
            "basis/mobility snapshot mismatch: basis built against {}, got {}",
            basis.snapshot.descriptor,
            mobility.descriptor()
        )));
    }
    let n = geo.index.n;
    let a_f = assemble_stiffness(geo, mobility, t)?;
    let mut w = Array2::zeros((geo.n_vertices, n));
    for q in 0..n {
        let col: Vec<f64> = basis.psi.column(q).to_vec();
        let av = a_f.matvec(&col);
        for (i, v) in av.into_iter().enumerate() {
            w[[i, q]] = v;
        }
    }
    let g = basis.psi.t().dot(&w);
    let mut a_t = g.clone();
    for p in 0..n {
        let mut offsum = 0.0;
        for q in 0..n {
            if q != p {
                offsum += g[[p, q]];
            }
        }
        // The diagonal is the exact floating-point negation of the ascending
        // off-diagonal sum, so Σ_{q≠p} t_pq + t_pp (same order) cancels
        // bit-for-bit. (An interleaved full-row sum can be off by ~1 ulp of
        // the partials — non-associativity — which no diagonal value fixes.)
        a_t[[p, p]] = -offsum;
    }
    Ok((g, a_t))
}

/// Coarse load vector for time interval `step`: midpoint quadrature of g
/// over each block's triangles. Sources act on the matrix continuum only,
/// mirroring the fine-scale load.
pub fn assemble_coarse_load(geo: &Geometry, source: &Source, step: usize) -> Vec<f64> {
    let mut b = vec![0.0; geo.index.n];
    for blk in 0..geo.n_blocks() {
        let mut acc = 0.0;
        for &tid in &geo.block_tris[blk] {
            let g = source.eval(geo, step, geo.tri_centroid(tid));
            if g != 0.0 {
                acc += g * geo.tri_area;
            }
        }
        b[blk] = acc;
    }
    b
}

/// Coarse mass diagonal: the continuum measures.
pub fn assemble_coarse_mass(geo: &Geometry) -> Vec<f64> {
    geo.index.measure.clone()
}

/// DOFs whose home block lies within Chebyshev distance `r` of `dof`'s home
/// block (the region of influence used for masked networks).
pub fn region_of_influence(geo: &Geometry, dof: usize, r: usize) -> Vec<usize> {
    let home = geo.index.dof_block[dof];
    (0..geo.index.n)
        .filter(|&q| geo.block_distance(home, geo.index.dof_block[q]) <= r)
        .collect()
}

fn dense_to_csr(a: &Array2<f64>) -> CsrMatrix {
    let (nr, nc) = a.dim();
    let mut b = TripletBuilder::new(nr, nc);
    for i in 0..nr {
        for j in 0..nc {
            let v = a[[i, j]];
            if v != 0.0 {
                b.push(i, j, v);
            }
        }
    }
    b.build()
}

/// A ready-to-run upscaled model: frozen basis, per-step coarse operators,
/// factorized backward-Euler steppers.
pub struct CoarseModel {
    pub geometry_hash: String,
    pub n: usize,
    pub k: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub m_t: Vec<f64>,
    /// Raw coupling matrix G at the first time level (for export/tests).
    pub g_first: Array2<f64>,
    /// A_T per time level (length 1 when mobility is time independent).
    pub a_t_steps: Vec<Array2<f64>>,
    pub basis: BasisSet,
    steppers: Vec<TimeStepper>,
}

/// Coarse trajectory: states u^1..u^{n_steps+1} plus the per-interval loads
/// (the source encodings consumed by the surrogate networks).
#[derive(Clone, Debug)]
pub struct CoarseTrajectory {
    pub states: Vec<Vec<f64>>,
    pub loads: Vec<Vec<f64>>,
}

impl CoarseModel {
    pub fn build(
        geo: &Geometry,
        k: usize,
        mobility: &Mobility,
        n_steps: usize,
        total_time: f64,
    ) -> Result<CoarseModel> {
        assert!(n_steps >= 1);
        let dt = total_time / n_steps as f64;
        let basis = build_basis(geo, k, mobility, 0.0)?;
        let m_t = assemble_coarse_mass(geo);
        let times: Vec<f64> = if mobility.is_time_dependent() {
            (0..n_steps).map(|j| (j + 1) as f64 * dt).collect()
        } else {
            vec![dt]
        };
        let mut g_first = None;
        let mut a_t_steps = Vec::with_capacity(times.len());
        let mut steppers = Vec::with_capacity(times.len());
        for &t in &times {
            let (g, a_t) = assemble_transmissibility(geo, &basis, mobility, t)?;
            if g_first.is_none() {
                g_first = Some(g);
            }
            steppers.push(TimeStepper::new(m_t.clone(), &dense_to_csr(&a_t), dt)?);
            a_t_steps.push(a_t);
        }
        Ok(CoarseModel {
            geometry_hash: geo.hash().to_string(),
            n: geo.index.n,
            k,
            dt,
            n_steps,
            m_t,
            g_first: g_first.expect("at least one time level"),
            a_t_steps,
            basis,
            steppers,
        })
    }

    fn stepper(&self, j: usize) -> &TimeStepper {
        if self.steppers.len() == 1 {
            &self.steppers[0]
        } else {
            &self.steppers[j]
        }
    }

    /// Advance one step (interval `j`): (M_T + Δt A_T) u' = Δt b_T + M_T u.
    pub fn coarse_step(&self, j: usize, u: &[f64], b_t: &[f64]) -> Result<Vec<f64>> {
        self.stepper(j).step(u, b_t)
    }

    /// Run the upscaled model for one source, returning states and loads.
    pub fn run(
        &self,
        geo: &Geometry,
        source: &Source,
        u1: Option<&[f64]>,
    ) -> Result<CoarseTrajectory> {
        if geo.hash() != self.geometry_hash {
            return Err(FracError::InvalidConfig(
                "coarse model was built for a different geometry".into(),
            ));
        }
        if let Some(avail) = source.steps_available() {
            if avail < self.n_steps {
                return Err(FracError::InvalidConfig(format!(
                    "source parameter record covers {avail} steps, need {}",
                    self.n_steps
                )));
            }
        }
        let u0 = match u1 {
            Some(v) => {
                if v.len() != self.n {
                    return Err(FracError::DimensionMismatch {
                        context: "initial coarse state".into(),
                        expected: self.n,
                        got: v.len(),
                    });
                }
                v.to_vec()
            }
            None => vec![0.0; self.n],
        };
        let mut states = Vec::with_capacity(self.n_steps + 1);
        let mut loads = Vec::with_capacity(self.n_steps);
        states.push(u0);
        for j in 0..self.n_steps {
            let b = assemble_coarse_load(geo, source, j);
            let u_next = self.coarse_step(j, &states[j], &b)?;
            states.push(u_next);
            loads.push(b);
        }
        Ok(CoarseTrajectory { states, loads })
    }
}

/// Write the coarse system as coordinate-format text files plus metadata.
pub fn export_coarse_system(model: &CoarseModel, geo: &Geometry, dir: &std::path::Path) -> Result<()> {
    use std::fmt::Write as _;
    std::fs::create_dir_all(dir).map_err(|e| FracError::io(dir.display().to_string(), e))?;
    let write_coo = |name: &str, m: &Array2<f64>| -> Result<()> {
        let mut text = String::new();
        let (nr, nc) = m.dim();
        let _ = writeln!(text, "# {nr} {nc}");
        for i in 0..nr {
            for j in 0..nc {
                if m[[i, j]] != 0.0 {
                    let _ = writeln!(text, "{i} {j} {}", m[[i, j]]);
                }
            }
        }
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| FracError::io(path.display().to_string(), e))
    };
    write_coo("T.txt", &model.g_first)?;
    write_coo("A_T.txt", &model.a_t_steps[0])?;
    {
        let mut text = String::new();
        let _ = writeln!(text, "# {0} {0}", model.n);
        for (i, v) in model.m_t.iter().enumerate() {
            let _ = writeln!(text, "{i} {i} {v}");
        }
        let path = dir.join("M_T.txt");
        std::fs::write(&path, text).map_err(|e| FracError::io(path.display().to_string(), e))?;
    }
    let dofs: Vec<serde_json::Value> = (0..geo.index.n)
        .map(|d| {
            let kind = match geo.index.dof_kind[d] {
                DofKind::Matrix => serde_json::json!("matrix"),
                DofKind::Fracture { segment } => serde_json::json!({ "fracture": segment }),
            };
            serde_json::json!({
                "dof": d,
                "block": geo.index.dof_block[d],
                "kind": kind,
                "measure": geo.index.measure[d],
            })
        })
        .collect();
    let meta = serde_json::json!({
        "n": model.n,
        "k": model.k,
        "dt": model.dt,
        "n_steps": model.n_steps,
        "geometry_hash": model.geometry_hash,
        "basis_snapshot_time": model.basis.snapshot.time,
        "time_levels": model.a_t_steps.len(),
        "dofs": dofs,
    });
    let path = dir.join("meta.json");
    std::fs::write(&path, serde_json::to_string_pretty(&meta).expect("meta serializes"))
        .map_err(|e| FracError::io(path.display().to_string(), e))
}
