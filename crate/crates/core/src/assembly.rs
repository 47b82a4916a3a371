//! P1 stiffness and mass matrices of the pulled-back form
//! `Q(u) = ∫ a∇u·∇u g dx` on `L²(Ω, g dx)`.

use std::io::Write;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::mesh::TriangleMesh;
use crate::quadrature::{eval_off_interface, TriangleRule};
use crate::sparse::CsrMatrix;
use crate::transform::PullbackFields;
use crate::{Matrix, Point, Result, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

/// Free-node numbering after boundary-condition elimination.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    pub node_to_dof: Vec<Option<usize>>,
    pub dof_to_node: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &TriangleMesh, bc: BoundaryCondition) -> Self {
        let mut node_to_dof = vec![None; mesh.nodes.len()];
        let mut dof_to_node = Vec::with_capacity(mesh.nodes.len());
        for (i, slot) in node_to_dof.iter_mut().enumerate() {
            if bc == BoundaryCondition::Neumann || !mesh.boundary[i] {
                *slot = Some(dof_to_node.len());
                dof_to_node.push(i);
            }
        }
        DofMap {
            node_to_dof,
            dof_to_node,
        }
    }

    pub fn len(&self) -> usize {
        self.dof_to_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dof_to_node.is_empty()
    }

    /// Nodal values of a coefficient vector, zero at eliminated nodes.
    pub fn expand(&self, coeffs: &[f64]) -> Vec<f64> {
        self.node_to_dof
            .iter()
            .map(|d| d.map_or(0.0, |k| coeffs[k]))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub k: CsrMatrix,
    pub m: CsrMatrix,
    pub dof_map: DofMap,
    pub bc: BoundaryCondition,
}

impl AssembledSystem {
    pub fn dof(&self) -> usize {
        self.dof_map.len()
    }

    /// SHA-256 over the boundary condition and the exact bits of both
    /// matrices.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update([u8::from(self.bc == BoundaryCondition::Dirichlet)]);
        for m in [&self.k, &self.m] {
            h.update((m.n as u64).to_le_bytes());
            for &p in &m.row_ptr {
                h.update((p as u64).to_le_bytes());
            }
            for &c in &m.col_idx {
                h.update((c as u64).to_le_bytes());
            }
            for &v in &m.values {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A 3×3 element matrix.
pub type Local = [[f64; 3]; 3];

/// Element stiffness and mass matrices for one triangle.
pub fn element_matrices(
    mesh: &TriangleMesh,
    t: usize,
    fields: &PullbackFields,
    rule: &TriangleRule,
) -> Result<(Local, Local)> {
    let v = mesh.vertices(t);
    let area = mesh.signed_area(t);
    let jac = Matrix::new(v[1].x - v[0].x, v[2].x - v[0].x, v[1].y - v[0].y, v[2].y - v[0].y);
    let jinv_t = jac
        .try_inverse()
        .ok_or_else(|| crate::CuspError::Meshing(format!("degenerate element {t}")))?
        .transpose();
    let grads = [
        jinv_t * Vector::new(-1.0, -1.0),
        jinv_t * Vector::new(1.0, 0.0),
        jinv_t * Vector::new(0.0, 1.0),
    ];
    let centroid = mesh.centroid(t);
    let mut a_bar = Matrix::zeros();
    let mut mass = [[0.0; 3]; 3];
    for (b, w) in rule.points.iter().zip(&rule.weights) {
        let p = Point::from(v[0].coords * b[0] + v[1].coords * b[1] + v[2].coords * b[2]);
        let f = eval_off_interface(&p, &centroid, |q| fields.eval(q)).map_err(|e| e.in_element(t, p.x, p.y))?;
        let wg = w * area * f.g;
        a_bar += f.a * wg;
        for i in 0..3 {
            for j in i..3 {
                mass[i][j] += wg * b[i] * b[j];
            }
        }
    }
    let mut stiff = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            stiff[i][j] = grads[i].dot(&(a_bar * grads[j]));
        }
    }
    for i in 0..3 {
        for j in 0..i {
            stiff[i][j] = stiff[j][i];
            mass[i][j] = mass[j][i];
        }
    }
    Ok((stiff, mass))
}

/// Assembles K and M with a `quad_points`-point rule (3 or 7). Element
/// matrices are computed in parallel and summed in element order.
pub fn assemble(
    mesh: &TriangleMesh,
    fields: &PullbackFields,
    bc: BoundaryCondition,
    quad_points: usize,
) -> Result<AssembledSystem> {
    let rule = TriangleRule::with_points(quad_points)?;
    let locals: Vec<_> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|t| element_matrices(mesh, t, fields, &rule))
        .collect::<Result<_>>()?;
    let dof_map = DofMap::new(mesh, bc);
    let mut kt = Vec::with_capacity(9 * locals.len());
    let mut mt = Vec::with_capacity(9 * locals.len());
    for (t, (ke, me)) in locals.iter().enumerate() {
        let dofs = mesh.triangles[t].map(|n| dof_map.node_to_dof[n]);
        for i in 0..3 {
            let Some(di) = dofs[i] else { continue };
            for j in 0..3 {
                let Some(dj) = dofs[j] else { continue };
                kt.push((di, dj, ke[i][j]));
                mt.push((di, dj, me[i][j]));
            }
        }
    }
    let n = dof_map.len();
    Ok(AssembledSystem {
        k: CsrMatrix::from_triplets(n, kt),
        m: CsrMatrix::from_triplets(n, mt),
        dof_map,
        bc,
    })
}

/// Writes the lower triangle as `<row> <col> <value>` lines.
pub fn write_matrix(m: &CsrMatrix, mut w: impl Write) -> Result<()> {
    for (i, j, v) in m.lower_triangle() {
        writeln!(w, "{i} {j} {v:e}")?;
    }
    Ok(())
}
