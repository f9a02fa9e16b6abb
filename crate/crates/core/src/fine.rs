//! Fine-scale P1 finite-element solver for diffusion in fractured media.
//!
//! The bilinear form splits into a 2-D matrix part over triangles and a 1-D
//! part along fracture edges weighted by aperture:
//!
//! `a(u, v; t) = ∫ κ_m λ(t,·) ∇u·∇v dx + Σ_i d_i κ_i ∫_{f_i} λ(t,·) ∂u ∂v ds`
//!
//! Mass is row-lumped (diagonal): area/3 per triangle vertex plus `d·h/2`
//! per fracture-edge endpoint. Sources act on the porous matrix only (the
//! 2-D measure), which keeps two-well sources exactly balanced. Time
//! stepping is backward Euler with mobility and load evaluated at `t^{n+1}`;
//! the boundary condition is pure (zero) Neumann, regularized solely by the
//! `M + Δt·A` shift.

use serde::{Deserialize, Serialize};

use crate::error::{FracError, Result};
use crate::mesh::Geometry;
use crate::sparse::{CholFactor, CsrMatrix, TripletBuilder};

/// Mobility λ(t, x): a positive multiplier on permeability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mobility {
    Constant { value: f64 },
    /// Expanding front: λ = 1 + clamp(1 − |x − center| / (r0 + speed·t), 0, 1).
    Front {
        speed: f64,
        radius0: f64,
        center: [f64; 2],
    },
}

impl Mobility {
    pub fn constant(value: f64) -> Result<Mobility> {
        if !(value > 0.0) {
            return Err(FracError::InvalidConfig(format!(
                "constant mobility must be positive, got {value}"
            )));
        }
        Ok(Mobility::Constant { value })
    }

    /// Expanding-front mobility (see variant docs). `speed = 0` gives a
    /// time-independent field.
    pub fn front(speed: f64, radius0: f64, center: [f64; 2]) -> Result<Mobility> {
        if !(speed >= 0.0) || !(radius0 > 0.0) {
            return Err(FracError::InvalidConfig(format!(
                "front mobility needs speed ≥ 0 and radius0 > 0 (got {speed}, {radius0})"
            )));
        }
        Ok(Mobility::Front {
            speed,
            radius0,
            center,
        })
    }

    /// Re-check the constructor invariants on a deserialized value.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Mobility::Constant { value } => Mobility::constant(value).map(|_| ()),
            Mobility::Front {
                speed,
                radius0,
                center,
            } => Mobility::front(speed, radius0, center).map(|_| ()),
        }
    }

    pub fn eval(&self, t: f64, x: [f64; 2]) -> f64 {
        match *self {
            Mobility::Constant { value } => value,
            Mobility::Front {
                speed,
                radius0,
                center,
            } => {
                let dist = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt();
                let front = radius0 + speed * t;
                1.0 + (1.0 - dist / front).clamp(0.0, 1.0)
            }
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        match *self {
            Mobility::Constant { .. } => false,
            Mobility::Front { speed, .. } => speed > 0.0,
        }
    }

    /// Stable textual identity, used to detect snapshot mismatches.
    pub fn descriptor(&self) -> String {
        serde_json::to_string(self).expect("Mobility serializes")
    }
}

/// Axis-aligned rectangle [x0,x1]×[y0,y1] used for source supports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }
}

/// Source term g(t, x). `SinWells` carries per-time-step parameters; all
/// other variants are time independent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Zero,
    /// +magnitude on one coarse block, −magnitude on another.
    TwoWell {
        block_plus: usize,
        block_minus: usize,
        magnitude: f64,
    },
    /// `+m[(sin αₙx)² + (sin βₙy)²]` on `injection`, the negative on
    /// `production`; αₙ, βₙ indexed by time interval.
    SinWells {
        magnitude: f64,
        alphas: Vec<f64>,
        betas: Vec<f64>,
        injection: Rect,
        production: Rect,
    },
}

impl Source {
    /// Evaluate at a point during time interval `step` (0-based; interval
    /// `step` advances state `step` to `step + 1`).
    pub fn eval(&self, geo: &Geometry, step: usize, x: [f64; 2]) -> f64 {
        match self {
            Source::Zero => 0.0,
            Source::TwoWell {
                block_plus,
                block_minus,
                magnitude,
            } => {
                let b = geo.block_of_point(x);
                if b == *block_plus {
                    *magnitude
                } else if b == *block_minus {
                    -*magnitude
                } else {
                    0.0
                }
            }
            Source::SinWells {
                magnitude,
                alphas,
                betas,
                injection,
                production,
            } => {
                let a = alphas[step];
                let b = betas[step];
                let val = magnitude
                    * ((a * x[0]).sin().powi(2) + (b * x[1]).sin().powi(2));
                if injection.contains(x) {
                    val
                } else if production.contains(x) {
                    -val
                } else {
                    0.0
                }
            }
        }
    }

    /// Number of time intervals the parameter record covers (None: unlimited).
    pub fn steps_available(&self) -> Option<usize> {
        match self {
            Source::SinWells { alphas, betas, .. } => Some(alphas.len().min(betas.len())),
            _ => None,
        }
    }
}

/// P1 stiffness of one triangle with a constant coefficient.
pub fn p1_local_stiffness(p: [[f64; 2]; 3], coeff: f64) -> [[f64; 3]; 3] {
    let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
    let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
    let area = 0.5
        * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
            - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = coeff * (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
        }
    }
    k
}

/// Assemble the fine stiffness matrix at time `t`. Mobility is sampled at
/// triangle centroids and fracture-edge midpoints (midpoint quadrature).
pub fn assemble_stiffness(geo: &Geometry, mobility: &Mobility, t: f64) -> Result<CsrMatrix> {
    let mut b = TripletBuilder::new(geo.n_vertices, geo.n_vertices);
    let kappa_m = geo.spec.kappa_matrix;
    for (tid, tri) in geo.triangles.iter().enumerate() {
        let lam = mobility.eval(t, geo.tri_centroid(tid));
        if !(lam > 0.0) {
            return Err(FracError::InvalidConfig(format!(
                "nonpositive mobility sample {lam} at triangle {tid}"
            )));
        }
        let k = p1_local_stiffness(geo.tri_vertices_xy(tid), kappa_m * lam);
        for a in 0..3 {
            for c in a..3 {
                b.push_sym(tri[a], tri[c], k[a][c]);
            }
        }
    }
    for (eid, e) in geo.fracture_edges.iter().enumerate() {
        let lam = mobility.eval(t, geo.edge_midpoint(e));
        if !(lam > 0.0) {
            return Err(FracError::InvalidConfig(format!(
                "nonpositive mobility sample {lam} at fracture edge {eid}"
            )));
        }
        let w = e.aperture * e.permeability * lam / e.length;
        b.push_sym(e.v0, e.v0, w);
        b.push_sym(e.v1, e.v1, w);
        b.push_sym(e.v0, e.v1, -w);
    }
    Ok(b.build())
}

/// Row-lumped mass diagonal: area/3 per triangle vertex plus aperture·h/2
/// per fracture-edge endpoint.
pub fn assemble_lumped_mass(geo: &Geometry) -> Vec<f64> {
    let mut m = vec![0.0; geo.n_vertices];
    let third = geo.tri_area / 3.0;
    for tri in &geo.triangles {
        for &v in tri {
            m[v] += third;
        }
    }
    for e in &geo.fracture_edges {
        let half = e.aperture * e.length * 0.5;
        m[e.v0] += half;
        m[e.v1] += half;
    }
    m
}

/// Fine load vector for time interval `step`: one-point (centroid)
/// quadrature of g against P1 hats over the matrix; fractures carry no
/// source.
pub fn assemble_load(geo: &Geometry, source: &Source, step: usize) -> Vec<f64> {
    let mut b = vec![0.0; geo.n_vertices];
    let third = geo.tri_area / 3.0;
    for (tid, tri) in geo.triangles.iter().enumerate() {
        let g = source.eval(geo, step, geo.tri_centroid(tid));
        if g != 0.0 {
            let w = g * third;
            for &v in tri {
                b[v] += w;
            }
        }
    }
    b
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Factorized backward-Euler operator `M + Δt·A` for one time level.
pub struct TimeStepper {
    evolution: CsrMatrix,
    factor: CholFactor,
    mass: Vec<f64>,
    dt: f64,
}

impl TimeStepper {
    pub fn new(mass: Vec<f64>, stiffness: &CsrMatrix, dt: f64) -> Result<TimeStepper> {
        assert!(dt > 0.0, "time step must be positive");
        let evolution = stiffness.scaled_plus_diag(dt, &mass);
        let factor = CholFactor::new(&evolution, "backward Euler evolution operator")?;
        Ok(TimeStepper {
            evolution,
            factor,
            mass,
            dt,
        })
    }

    /// Advance one step: solve `(M + Δt A) u' = Δt b + M u`, verifying the
    /// residual to 1e-10 relative to the right-hand side.
    pub fn step(&self, u: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        let n = self.mass.len();
        assert_eq!(u.len(), n);
        assert_eq!(b.len(), n);
        let rhs: Vec<f64> = (0..n)
            .map(|i| self.dt * b[i] + self.mass[i] * u[i])
            .collect();
        let u_next = self.factor.solve(&rhs);
        let prod = self.evolution.matvec(&u_next);
        let res = l2(&prod
            .iter()
            .zip(&rhs)
            .map(|(a, b)| a - b)
            .collect::<Vec<f64>>());
        let scale = l2(&rhs);
        if res > 1e-10 * scale.max(1e-300) && scale > 0.0 {
            return Err(FracError::SolveFailure {
                context: "fine time step".into(),
                detail: format!("residual {res:.3e} exceeds 1e-10 × ‖rhs‖ = {:.3e}", scale),
            });
        }
        for (i, v) in u_next.iter().enumerate() {
            if !v.is_finite() {
                return Err(FracError::NonFinite {
                    context: format!("fine state entry {i}"),
                    step: 0,
                });
            }
        }
        Ok(u_next)
    }
}

/// Run the fine solver for `n_steps` backward-Euler steps of size
/// `total_time / n_steps`, returning the `n_steps + 1` states (the first is
/// the initial state). Operators are reassembled per step exactly when the
/// mobility is time dependent; the load is reassembled whenever the source
/// varies per step.
pub fn solve_fine(
    geo: &Geometry,
    mobility: &Mobility,
    source: &Source,
    u1: Option<&[f64]>,
    n_steps: usize,
    total_time: f64,
) -> Result<Vec<Vec<f64>>> {
    assert!(n_steps >= 1);
    if let Some(avail) = source.steps_available() {
        if avail < n_steps {
            return Err(FracError::InvalidConfig(format!(
                "source parameter record covers {avail} steps, need {n_steps}"
            )));
        }
    }
    let dt = total_time / n_steps as f64;
    let n = geo.n_vertices;
    let u0 = match u1 {
        Some(v) => {
            if v.len() != n {
                return Err(FracError::DimensionMismatch {
                    context: "initial fine state".into(),
                    expected: n,
                    got: v.len(),
                });
            }
            v.to_vec()
        }
        None => vec![0.0; n],
    };
    let mass = assemble_lumped_mass(geo);
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(u0);

    let cached = if mobility.is_time_dependent() {
        None
    } else {
        let a = assemble_stiffness(geo, mobility, dt)?;
        Some(TimeStepper::new(mass.clone(), &a, dt)?)
    };

    for j in 0..n_steps {
        let t_next = (j + 1) as f64 * dt;
        let b = assemble_load(geo, source, j);
        let u_next = match &cached {
            Some(st) => st.step(&states[j], &b)?,
            None => {
                let a = assemble_stiffness(geo, mobility, t_next)?;
                TimeStepper::new(mass.clone(), &a, dt)?.step(&states[j], &b)?
            }
        };
        states.push(u_next);
    }
    Ok(states)
}
