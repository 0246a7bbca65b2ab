//! Skew-symmetric linear algebra: block normal form, exponentials,
//! null/range projectors and the eigenspace decomposition of a rotation
//! generator.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative tolerance used to decide that two frequencies coincide.
pub const FREQ_REL_TOL: f64 = 1e-9;
/// Largest denominator accepted when testing frequency ratios for rationality.
pub const RESONANCE_MAX_DENOM: u64 = 64;

/// An invariant plane `E_j`: `A u = omega w`, `A w = -omega u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plane {
    pub omega: f64,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
}

/// Eigenspace `F_k` of `-A^2` belonging to one distinct frequency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Eigenspace {
    pub omega: f64,
    /// Indices into [`SkewSpectrum::planes`].
    pub planes: Vec<usize>,
    /// Columns `u_1, w_1, u_2, w_2, ...` spanning `F_k`.
    pub basis: DMatrix<f64>,
    /// `Omega_k^{-1} A` restricted to `F_k`, in the coordinates of `basis`.
    pub complex_structure: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Resonance {
    /// No rotation at all.
    Trivial,
    /// `omega_j = p_j * base` for coprime positive integers `p_j`.
    Commensurate { base: f64, multiples: Vec<u64> },
    /// Planes grouped into mutually commensurate subsets.
    Incommensurate { groups: Vec<Vec<usize>> },
}

impl Resonance {
    pub fn is_resonant(&self) -> bool {
        !matches!(self, Resonance::Incommensurate { .. })
    }
}

/// Normal-form data of a skew matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkewSpectrum {
    dim: usize,
    matrix: DMatrix<f64>,
    planes: Vec<Plane>,
    null_basis: DMatrix<f64>,
    eigenspaces: Vec<Eigenspace>,
    resonance: Resonance,
}

/// Build the skew matrix with the given `(omega, i, j)` blocks:
/// `A e_i = omega e_j`, `A e_j = -omega e_i`.
pub fn skew_from_planes(dim: usize, planes: &[(f64, usize, usize)]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(dim, dim);
    let mut used = vec![false; dim];
    for &(omega, i, j) in planes {
        if i >= dim || j >= dim || i == j || used[i] || used[j] {
            return Err(Error::InvalidParams(format!(
                "axis pair ({i}, {j}) invalid or reused in dimension {dim}"
            )));
        }
        used[i] = true;
        used[j] = true;
        m[(j, i)] = omega;
        m[(i, j)] = -omega;
    }
    Ok(m)
}

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Decompose a skew matrix into invariant planes and its null space.
pub fn skew_normal_form(m: &DMatrix<f64>) -> Result<SkewSpectrum> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    let n = rows;
    let scale = frobenius(m);
    let defect = frobenius(&(m + m.transpose()));
    let allowed = if scale > 1.0 { 1e-12 * scale } else { 1e-12 };
    if defect > allowed {
        return Err(Error::NotSkew { defect });
    }
    let a = (m - m.transpose()) * 0.5;

    if n == 0 {
        return Err(Error::Dimension { expected: 1, got: 0 });
    }

    // -A^2 = A^T A is symmetric positive semidefinite with eigenvalues omega^2.
    let s = a.transpose() * &a;
    let eig = SymmetricEigen::new(s.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let s_norm = vals.last().copied().unwrap_or(0.0);
    let abs_tol = 1e3 * f64::EPSILON * s_norm.max(f64::MIN_POSITIVE);

    // Cluster eigenvalues of -A^2; the first cluster may be the null space.
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (k, &lam) in vals.iter().enumerate() {
        let join = match clusters.last() {
            Some(c) => {
                let prev = vals[*c.last().unwrap()];
                let first = vals[c[0]];
                let close = |x: f64| (lam - x).abs() <= 2.0 * FREQ_REL_TOL * lam + abs_tol;
                close(prev) || close(first)
            }
            None => false,
        };
        if join {
            clusters.last_mut().unwrap().push(k);
        } else {
            clusters.push(vec![k]);
        }
    }

    let column = |k: usize| eig.eigenvectors.column(order[k]).into_owned();
    let mut planes: Vec<Plane> = Vec::new();
    let mut eigenspaces: Vec<Eigenspace> = Vec::new();
    let mut null_vectors: Vec<DVector<f64>> = Vec::new();

    for cluster in clusters {
        let lam = cluster.iter().map(|&k| vals[k]).sum::<f64>() / cluster.len() as f64;
        let vectors: Vec<DVector<f64>> = cluster.iter().map(|&k| column(k)).collect();
        if lam <= abs_tol {
            null_vectors.extend(canonical_basis(n, &vectors));
            continue;
        }
        if cluster.len() % 2 == 1 {
            // A genuine eigenspace of -A^2 has even dimension; an odd cluster
            // means the tolerances above are too tight for this input.
            return Err(Error::InvalidParams(format!(
                "frequency cluster near omega^2 = {lam:e} has odd dimension {}",
                cluster.len()
            )));
        }
        let start = planes.len();
        let span = canonical_basis(n, &vectors);
        let mut chosen: Vec<DVector<f64>> = Vec::new();
        let d = span.len() / 2;
        for _ in 0..d {
            let u = pick_canonical(n, &span, &chosen);
            let au = &a * &u;
            // keep w inside the cluster; nearby clusters would otherwise leak in at ~1e-12
            let mut w = span.iter().fold(DVector::zeros(n), |acc, e| acc + e * e.dot(&au));
            for c in &chosen {
                let p = c.dot(&w);
                w -= c * p;
            }
            w -= &u * u.dot(&w);
            let wn = w.norm();
            w /= wn;
            let omega = w.dot(&(&a * &u));
            chosen.push(u.clone());
            chosen.push(w.clone());
            planes.push(Plane { omega, u, w });
        }
        let idx: Vec<usize> = (start..planes.len()).collect();
        let omega = idx.iter().map(|&i| planes[i].omega).sum::<f64>() / idx.len() as f64;
        let basis = DMatrix::from_columns(&chosen);
        let complex_structure = basis.transpose() * &a * &basis / omega;
        eigenspaces.push(Eigenspace {
            omega,
            planes: idx,
            basis,
            complex_structure,
        });
    }

    let null_basis = if null_vectors.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&null_vectors)
    };
    let resonance = detect_resonance(&planes);
    Ok(SkewSpectrum {
        dim: n,
        matrix: a,
        planes,
        null_basis,
        eigenspaces,
        resonance,
    })
}

/// Orthonormal basis of `span(vectors)` built from projected standard basis
/// vectors, so that the result does not depend on the eigen-solver's choice.
fn canonical_basis(n: usize, vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for _ in 0..vectors.len() {
        out.push(pick_canonical(n, vectors, &out));
    }
    out
}

/// Project each `e_i` onto `span(space) ⊖ span(taken)` and normalize the
/// first one whose residual is at least half the largest.
fn pick_canonical(n: usize, space: &[DVector<f64>], taken: &[DVector<f64>]) -> DVector<f64> {
    let project = |i: usize| {
        let mut r = DVector::zeros(n);
        for q in space {
            r += q * q[i];
        }
        for t in taken {
            let c = t.dot(&r);
            r -= t * c;
        }
        // one more pass of Gram-Schmidt for stability
        for t in taken {
            let c = t.dot(&r);
            r -= t * c;
        }
        r
    };
    let residuals: Vec<DVector<f64>> = (0..n).map(project).collect();
    let max = residuals.iter().map(|r| r.norm()).fold(0.0, f64::max);
    let pick = residuals
        .into_iter()
        .find(|r| r.norm() >= 0.5 * max)
        .expect("nonempty remaining space");
    let norm = pick.norm();
    pick / norm
}

/// Best rational approximation `p/q` with `q <= max_denom` (continued fractions).
pub fn rational_approx(x: f64, max_denom: u64) -> (u64, u64) {
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut r = x;
    loop {
        let a = r.floor();
        if a > 1e15 {
            break;
        }
        let a = a as u64;
        let p2 = a.saturating_mul(p1).saturating_add(p0);
        let q2 = a.saturating_mul(q1).saturating_add(q0);
        if q2 > max_denom {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        let frac = r - a as f64;
        if frac.abs() < 1e-12 {
            break;
        }
        r = 1.0 / frac;
    }
    (p1, q1.max(1))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn ratio_is_rational(x: f64) -> Option<(u64, u64)> {
    let (p, q) = rational_approx(x, RESONANCE_MAX_DENOM);
    ((x - p as f64 / q as f64).abs() <= FREQ_REL_TOL * x.max(1.0)).then_some((p, q))
}

fn detect_resonance(planes: &[Plane]) -> Resonance {
    if planes.is_empty() {
        return Resonance::Trivial;
    }
    let w1 = planes[0].omega;
    let ratios: Option<Vec<(u64, u64)>> = planes.iter().map(|p| ratio_is_rational(p.omega / w1)).collect();
    if let Some(ratios) = ratios {
        let lcm = ratios.iter().fold(1u64, |l, &(_, q)| l / gcd(l, q) * q);
        let ints: Vec<u64> = ratios.iter().map(|&(p, q)| p * (lcm / q)).collect();
        let g = ints.iter().fold(0u64, |g, &m| gcd(g, m));
        let multiples: Vec<u64> = ints.iter().map(|m| m / g).collect();
        let base = w1 / multiples[0] as f64;
        return Resonance::Commensurate { base, multiples };
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (j, p) in planes.iter().enumerate() {
        match groups
            .iter_mut()
            .find(|g| ratio_is_rational(p.omega / planes[g[0]].omega).is_some())
        {
            Some(g) => g.push(j),
            None => groups.push(vec![j]),
        }
    }
    Resonance::Incommensurate { groups }
}

impl SkewSpectrum {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The (exactly antisymmetrized) input matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn null_basis(&self) -> &DMatrix<f64> {
        &self.null_basis
    }

    pub fn null_dim(&self) -> usize {
        self.null_basis.ncols()
    }

    pub fn eigenspaces(&self) -> &[Eigenspace] {
        &self.eigenspaces
    }

    pub fn resonance(&self) -> &Resonance {
        &self.resonance
    }

    pub fn is_zero(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn max_frequency(&self) -> f64 {
        self.planes.last().map_or(0.0, |p| p.omega)
    }

    /// Orthogonal matrix `[u_1 w_1 ... u_m w_m  null]`.
    pub fn basis(&self) -> DMatrix<f64> {
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(self.dim);
        for p in &self.planes {
            cols.push(p.u.clone());
            cols.push(p.w.clone());
        }
        cols.extend(self.null_basis.column_iter().map(|c| c.into_owned()));
        DMatrix::from_columns(&cols)
    }

    /// Block-diagonal matrix of `A` in the coordinates of [`Self::basis`].
    pub fn normal_form(&self) -> DMatrix<f64> {
        let planes: Vec<(f64, usize, usize)> = self
            .planes
            .iter()
            .enumerate()
            .map(|(j, p)| (p.omega, 2 * j, 2 * j + 1))
            .collect();
        skew_from_planes(self.dim, &planes).expect("valid block layout")
    }

    /// `sum_j omega_j (w_j u_j^T - u_j w_j^T)`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for p in &self.planes {
            m += (&p.w * p.u.transpose() - &p.u * p.w.transpose()) * p.omega;
        }
        m
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    pub fn null_projector(&self) -> DMatrix<f64> {
        &self.null_basis * self.null_basis.transpose()
    }

    pub fn range_projector(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for p in &self.planes {
            m += &p.u * p.u.transpose() + &p.w * p.w.transpose();
        }
        m
    }

    /// `e^{theta A}`, assembled from per-plane rotations.
    pub fn rotation_exp(&self, theta: f64) -> DMatrix<f64> {
        let mut m = self.null_projector();
        for p in &self.planes {
            let (s, c) = (p.omega * theta).sin_cos();
            let sym = &p.u * p.u.transpose() + &p.w * p.w.transpose();
            let rot = &p.w * p.u.transpose() - &p.u * p.w.transpose();
            m += sym * c + rot * s;
        }
        m
    }

    /// `e^{sigma (alpha + A)} = e^{alpha sigma} e^{sigma A}`.
    pub fn dilate_rotate_exp(&self, alpha: f64, sigma: f64) -> DMatrix<f64> {
        self.rotation_exp(sigma) * (alpha * sigma).exp()
    }

    /// Moore-Penrose pseudoinverse `A^+`.
    pub fn pseudoinverse(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for p in &self.planes {
            m += (&p.u * p.w.transpose() - &p.w * p.u.transpose()) / p.omega;
        }
        m
    }

    /// `(theta + A)^{-1}` for `theta != 0`.
    pub fn shifted_inverse(&self, theta: f64) -> Result<DMatrix<f64>> {
        if theta == 0.0 {
            return Err(Error::Domain("shifted inverse needs theta != 0".into()));
        }
        let mut m = self.null_projector() / theta;
        for p in &self.planes {
            let d = theta * theta + p.omega * p.omega;
            let sym = &p.u * p.u.transpose() + &p.w * p.w.transpose();
            let rot = &p.w * p.u.transpose() - &p.u * p.w.transpose();
            m += (sym * theta - rot * p.omega) / d;
        }
        Ok(m)
    }

    /// Operator norm of `alpha + A` (a normal matrix).
    pub fn shifted_norm(&self, alpha: f64) -> f64 {
        alpha.hypot(self.max_frequency())
    }
}
