//! Topological-insulator lattice Hamiltonian on an `nx × ny × nz` sample.
//!
//! Each site carries four orbital/spin components, so the operator dimension
//! is `N = 4·nx·ny·nz`. Nearest-neighbor hopping couples sites through
//! `-(Γ¹ - iΓ^{j+1})/2` blocks (direction j = x, y, z), and every site gets an
//! on-site block `V_n·Γ⁰ + 2·Γ¹` where `V_n` is an external potential.
//! Boundaries are periodic in x and y and open in z; a fully periodic torus
//! mode exists for validation runs. Energies are in units of the hopping
//! amplitude.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sparsemat::{CrsMatrix, SparseMatrix};

/// Number of internal (orbital ⊗ spin) components per lattice site.
pub const SITE_DOF: usize = 4;

type C = Complex64;

const ZERO: C = Complex64::new(0.0, 0.0);

/// Dense 4×4 complex block used during assembly and for the Dirac matrices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Block4(pub [[C; 4]; 4]);

impl Block4 {
    pub fn zeros() -> Self {
        Block4([[ZERO; 4]; 4])
    }

    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for i in 0..4 {
            m.0[i][i] = C::new(1.0, 0.0);
        }
        m
    }

    pub fn add(&self, other: &Block4) -> Block4 {
        let mut out = Self::zeros();
        for i in 0..4 {
            for j in 0..4 {
                out.0[i][j] = self.0[i][j] + other.0[i][j];
            }
        }
        out
    }

    pub fn scale(&self, f: C) -> Block4 {
        let mut out = Self::zeros();
        for i in 0..4 {
            for j in 0..4 {
                out.0[i][j] = self.0[i][j] * f;
            }
        }
        out
    }

    pub fn mul(&self, other: &Block4) -> Block4 {
        let mut out = Self::zeros();
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = ZERO;
                for k in 0..4 {
                    acc += self.0[i][k] * other.0[k][j];
                }
                out.0[i][j] = acc;
            }
        }
        out
    }

    pub fn adjoint(&self) -> Block4 {
        let mut out = Self::zeros();
        for i in 0..4 {
            for j in 0..4 {
                out.0[i][j] = self.0[j][i].conj();
            }
        }
        out
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let adj = self.adjoint();
        self.max_abs_diff(&adj) <= tol
    }

    pub fn max_abs_diff(&self, other: &Block4) -> f64 {
        let mut d = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                d = d.max((self.0[i][j] - other.0[i][j]).norm());
            }
        }
        d
    }
}

/// The five Dirac matrices Γ⁰..Γ⁴ in a fixed Hermitian representation.
///
/// Γ⁰ is the identity (the potential couples as a scalar), and Γ¹..Γ⁴ are
/// built from Pauli tensor products:
/// Γ¹ = σ_z⊗1, Γ² = σ_x⊗σ_x, Γ³ = σ_x⊗σ_y, Γ⁴ = σ_x⊗σ_z.
/// Γ¹..Γ⁴ mutually anticommute and square to the identity; any other valid
/// representation is unitarily equivalent and yields the same spectrum.
#[derive(Clone, Debug)]
pub struct GammaSet {
    matrices: [Block4; 5],
}

fn kron2(a: [[C; 2]; 2], b: [[C; 2]; 2]) -> Block4 {
    let mut out = Block4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out.0[2 * i + k][2 * j + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

impl GammaSet {
    pub fn standard() -> Self {
        let one = C::new(1.0, 0.0);
        let i = C::new(0.0, 1.0);
        let id2 = [[one, ZERO], [ZERO, one]];
        let sx = [[ZERO, one], [one, ZERO]];
        let sy = [[ZERO, -i], [i, ZERO]];
        let sz = [[one, ZERO], [ZERO, -one]];
        GammaSet {
            matrices: [
                Block4::identity(),
                kron2(sz, id2),
                kron2(sx, sx),
                kron2(sx, sy),
                kron2(sx, sz),
            ],
        }
    }

    /// Γ^a for a ∈ 0..=4.
    pub fn gamma(&self, a: usize) -> &Block4 {
        &self.matrices[a]
    }

    /// Hopping block attached to a bond in direction `j` (0 = x, 1 = y, 2 = z):
    /// `-t·(Γ¹ - iΓ^{j+2})/2` sits at (target, source) and its adjoint at
    /// (source, target). Directions map to Γ², Γ³, Γ⁴.
    pub fn hopping_block(&self, j: usize, t: f64) -> Block4 {
        let g1 = self.gamma(1);
        let gj = self.gamma(j + 2);
        g1.add(&gj.scale(C::new(0.0, -1.0)))
            .scale(C::new(-t / 2.0, 0.0))
    }

    /// On-site block `v·Γ⁰ + 2·Γ¹`.
    pub fn onsite_block(&self, v: f64) -> Block4 {
        self.gamma(0)
            .scale(C::new(v, 0.0))
            .add(&self.gamma(1).scale(C::new(2.0, 0.0)))
    }
}

/// External potential landscape over lattice sites.
#[derive(Clone, Debug, PartialEq)]
pub enum PotentialSpec {
    Zero,
    Uniform(f64),
    /// Periodically spaced cuboidal dots of side `dot_size` and depth `depth`;
    /// a site belongs to a dot when its coordinate modulo `spacing` is below
    /// `dot_size` along every axis.
    Superlattice {
        spacing: [usize; 3],
        depth: f64,
        dot_size: usize,
    },
}

impl PotentialSpec {
    pub fn value_at(&self, x: usize, y: usize, z: usize) -> f64 {
        match self {
            PotentialSpec::Zero => 0.0,
            PotentialSpec::Uniform(v) => *v,
            PotentialSpec::Superlattice {
                spacing,
                depth,
                dot_size,
            } => {
                let inside = x % spacing[0] < *dot_size
                    && y % spacing[1] < *dot_size
                    && z % spacing[2] < *dot_size;
                if inside {
                    *depth
                } else {
                    0.0
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let PotentialSpec::Superlattice {
            spacing, dot_size, ..
        } = self
        {
            if spacing.iter().any(|&s| s == 0) {
                return Err(Error::InvalidArgument(
                    "superlattice spacing must be positive".into(),
                ));
            }
            if *dot_size == 0 {
                return Err(Error::InvalidArgument(
                    "superlattice dot size must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Sample geometry and potential. `periodic_z` closes the z direction into a
/// torus; the physical sample is open in z.
#[derive(Clone, Debug)]
pub struct Domain {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub potential: PotentialSpec,
    pub periodic_z: bool,
}

impl Domain {
    pub fn new(nx: usize, ny: usize, nz: usize, potential: PotentialSpec) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidArgument(
                "lattice extents must be at least 1".into(),
            ));
        }
        potential.validate()?;
        Ok(Domain {
            nx,
            ny,
            nz,
            potential,
            periodic_z: false,
        })
    }

    /// Fully periodic variant (periodic in x, y, and z). Useful for
    /// validation: with distinct neighbors every row holds exactly 13
    /// entries.
    pub fn torus(nx: usize, ny: usize, nz: usize, potential: PotentialSpec) -> Result<Self> {
        let mut d = Self::new(nx, ny, nz, potential)?;
        d.periodic_z = true;
        Ok(d)
    }

    /// Matrix dimension `4·nx·ny·nz`, checked against the 32-bit local index
    /// space used by the kernels.
    pub fn dim(&self) -> Result<usize> {
        let n = 4u128 * self.nx as u128 * self.ny as u128 * self.nz as u128;
        if n > u32::MAX as u128 {
            return Err(Error::IndexOverflow(n));
        }
        Ok(n as usize)
    }

    fn site_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }
}

/// Shift/scale pair mapping the spectrum into the Chebyshev interval:
/// the rescaled operator is `scale·(H - shift·1)` with spectrum inside
/// `[-1+epsilon, 1-epsilon]`.
#[derive(Clone, Copy, Debug)]
pub struct SpectralBounds {
    pub scale: f64,
    pub shift: f64,
    pub epsilon: f64,
}

/// Assembles the sparse Hamiltonian for `domain` in CRS layout.
///
/// The matrix is complex Hermitian with roughly 13 entries per row; exact
/// zeros arising inside 4×4 blocks are dropped.
pub fn build_hamiltonian(domain: &Domain) -> Result<SparseMatrix> {
    let n = domain.dim()?;
    let gammas = GammaSet::standard();
    let t = 1.0;

    let hop: Vec<Block4> = (0..3).map(|j| gammas.hopping_block(j, t)).collect();
    let hop_adj: Vec<Block4> = hop.iter().map(|b| b.adjoint()).collect();

    let nsites = n / SITE_DOF;
    let mut row_ptrs = Vec::with_capacity(n + 1);
    let mut cols: Vec<u32> = Vec::with_capacity(13 * n);
    let mut vals: Vec<C> = Vec::with_capacity(13 * n);
    row_ptrs.push(0usize);

    // per-site scratch: (neighbor site, block), merged by column below
    let mut contribs: Vec<(usize, Block4)> = Vec::with_capacity(7);

    for site in 0..nsites {
        let x = site % domain.nx;
        let y = (site / domain.nx) % domain.ny;
        let z = site / (domain.nx * domain.ny);

        contribs.clear();
        let v = domain.potential.value_at(x, y, z);
        contribs.push((site, gammas.onsite_block(v)));

        // incoming bond (neighbor -> site) carries the hopping block,
        // outgoing bond (site -> neighbor) its adjoint
        let mut push_pair = |contribs: &mut Vec<(usize, Block4)>,
                             j: usize,
                             minus: Option<usize>,
                             plus: Option<usize>| {
            if let Some(s) = minus {
                contribs.push((s, hop[j]));
            }
            if let Some(s) = plus {
                contribs.push((s, hop_adj[j]));
            }
        };

        let xm = Some(domain.site_index((x + domain.nx - 1) % domain.nx, y, z));
        let xp = Some(domain.site_index((x + 1) % domain.nx, y, z));
        push_pair(&mut contribs, 0, xm, xp);

        let ym = Some(domain.site_index(x, (y + domain.ny - 1) % domain.ny, z));
        let yp = Some(domain.site_index(x, (y + 1) % domain.ny, z));
        push_pair(&mut contribs, 1, ym, yp);

        let (zm, zp) = if domain.periodic_z {
            (
                Some(domain.site_index(x, y, (z + domain.nz - 1) % domain.nz)),
                Some(domain.site_index(x, y, (z + 1) % domain.nz)),
            )
        } else {
            (
                (z > 0).then(|| domain.site_index(x, y, z - 1)),
                (z + 1 < domain.nz).then(|| domain.site_index(x, y, z + 1)),
            )
        };
        push_pair(&mut contribs, 2, zm, zp);

        // merge coincident columns (wrap-around on extents 1 and 2)
        contribs.sort_by_key(|&(s, _)| s);
        let mut merged: Vec<(usize, Block4)> = Vec::with_capacity(contribs.len());
        for &(s, ref b) in &contribs {
            match merged.last_mut() {
                Some((ls, lb)) if *ls == s => *lb = lb.add(b),
                _ => merged.push((s, *b)),
            }
        }

        for orb in 0..SITE_DOF {
            for &(nb, ref block) in &merged {
                for (oc, &val) in block.0[orb].iter().enumerate() {
                    if val != ZERO {
                        cols.push((SITE_DOF * nb + oc) as u32);
                        vals.push(val);
                    }
                }
            }
            row_ptrs.push(cols.len());
        }
    }

    Ok(SparseMatrix::Crs(CrsMatrix::from_parts(
        n, n, row_ptrs, cols, vals,
    )?))
}

/// Estimates shift/scale from the union of Gershgorin discs.
///
/// The shift is the interval midpoint and the scale `(1-epsilon)/halfwidth`,
/// so all eigenvalues of the rescaled operator fall inside
/// `[-1+epsilon, 1-epsilon]`. A matrix with zero-width enclosure (multiple of
/// the identity) yields `scale = 1-epsilon`.
pub fn estimate_bounds(matrix: &SparseMatrix, epsilon: f64) -> Result<SpectralBounds> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "bounds need a square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidArgument(
            "epsilon must lie in (0, 0.5)".into(),
        ));
    }

    let n = matrix.nrows();
    let mut center = vec![0.0f64; n];
    let mut radius = vec![0.0f64; n];
    matrix.for_each_entry(|i, j, v| {
        if i == j {
            center[i] += v.re;
        } else {
            radius[i] += v.norm();
        }
    });

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        lo = lo.min(center[i] - radius[i]);
        hi = hi.max(center[i] + radius[i]);
    }

    let shift = 0.5 * (lo + hi);
    let halfwidth = 0.5 * (hi - lo);
    let scale = if halfwidth > 0.0 {
        (1.0 - epsilon) / halfwidth
    } else {
        1.0 - epsilon
    };
    Ok(SpectralBounds {
        scale,
        shift,
        epsilon,
    })
}

/// Returns `scale·(H - shift·1)` with every diagonal entry stored explicitly,
/// even where the input had none. The output keeps the input layout.
pub fn apply_shift_scale(matrix: &SparseMatrix, bounds: &SpectralBounds) -> Result<SparseMatrix> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "shift/scale needs a square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let crs = matrix.to_crs();
    let n = crs.nrows();
    let a = C::new(bounds.scale, 0.0);
    let b = C::new(bounds.shift, 0.0);

    let mut row_ptrs = Vec::with_capacity(n + 1);
    let mut cols: Vec<u32> = Vec::with_capacity(crs.nnz() + n);
    let mut vals: Vec<C> = Vec::with_capacity(crs.nnz() + n);
    row_ptrs.push(0usize);

    for i in 0..n {
        let mut wrote_diag = false;
        for (j, v) in crs.row(i) {
            if j as usize == i {
                cols.push(j);
                vals.push(a * (v - b));
                wrote_diag = true;
            } else if j as usize > i && !wrote_diag {
                cols.push(i as u32);
                vals.push(a * (-b));
                wrote_diag = true;
                cols.push(j);
                vals.push(a * v);
            } else {
                cols.push(j);
                vals.push(a * v);
            }
        }
        if !wrote_diag {
            cols.push(i as u32);
            vals.push(a * (-b));
        }
        row_ptrs.push(cols.len());
    }

    let out = CrsMatrix::from_parts(n, n, row_ptrs, cols, vals)?;
    match matrix {
        SparseMatrix::Crs(_) => Ok(SparseMatrix::Crs(out)),
        SparseMatrix::Sell(s) => {
            SparseMatrix::Crs(out).to_sell(s.chunk_height(), s.sigma())
        }
    }
}
