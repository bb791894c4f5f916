//! Chebyshev-moment DOS solver in three optimization stages.
//!
//! All stages run the same recurrence
//! `ν_1 = H̃ν_0`, `ν_{m+1} = 2H̃ν_m - ν_{m-1}` with `H̃ = a(H - b·1)` applied
//! on the fly, collecting the two scalar products
//! `η_{2m} = ⟨ν_m|ν_m⟩`, `η_{2m+1} = ⟨ν_{m+1}|ν_m⟩` per sweep:
//!
//! * stage 0 (naive): one SpMV plus the unfused BLAS-1 chain per step,
//! * stage 1: one augmented SpMV per step,
//! * stage 2: all R random vectors advance in lockstep through augmented
//!   SpMMV, reading the matrix M/2 times in total.
//!
//! For a fixed seed and thread count the three stages produce identical
//! moment series up to summation-order effects. Counted runs charge only the
//! main recurrence loop, which is the region the traffic model describes;
//! setup (random fill plus the η₀/η₁ pass) stays outside.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernels::{self, ExecConfig};
use crate::lattice::SpectralBounds;
use crate::sparsemat::{random_block_vector, random_vector_column, BlockVector, SparseMatrix};
use crate::traffic::TrafficMeter;

type C = Complex64;

const ZERO: C = Complex64::new(0.0, 0.0);
const IMAG_TOL: f64 = 1e-10;

/// Optimization stage of the solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Naive,
    AugSpmv,
    AugSpmmv,
}

impl Stage {
    pub fn index(&self) -> u8 {
        match self {
            Stage::Naive => 0,
            Stage::AugSpmv => 1,
            Stage::AugSpmmv => 2,
        }
    }

    pub fn kernel_name(&self) -> &'static str {
        match self {
            Stage::Naive => "naive_chain",
            Stage::AugSpmv => "aug_spmv",
            Stage::AugSpmmv => "aug_spmmv",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        match s {
            "0" | "naive" => Ok(Stage::Naive),
            "1" | "aug_spmv" | "aug-spmv" => Ok(Stage::AugSpmv),
            "2" | "aug_spmmv" | "aug-spmmv" => Ok(Stage::AugSpmmv),
            other => Err(Error::InvalidArgument(format!("unknown stage '{other}'"))),
        }
    }
}

/// Solver configuration: moment count M (even), random-vector count R, seed,
/// stage, and the spectral map.
#[derive(Clone, Debug)]
pub struct KpmConfig {
    pub num_moments: usize,
    pub num_vectors: usize,
    pub seed: u64,
    pub stage: Stage,
    pub bounds: SpectralBounds,
}

impl KpmConfig {
    fn validate(&self) -> Result<()> {
        if self.num_moments < 2 || self.num_moments % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "moment count must be even and at least 2, got {}",
                self.num_moments
            )));
        }
        if self.num_vectors < 1 {
            return Err(Error::InvalidArgument(
                "need at least one random vector".into(),
            ));
        }
        Ok(())
    }
}

/// Raw per-vector scalar products `eta[r][m]` plus the averaged normalized
/// moments `mu[m]`.
#[derive(Clone, Debug)]
pub struct MomentSeries {
    pub eta: Vec<Vec<C>>,
    pub mu: Vec<f64>,
}

/// Reconstructed eigenvalue density: `rho[k]` states per unit energy at
/// `energies[k]`.
#[derive(Clone, Debug)]
pub struct DosCurve {
    pub energies: Vec<f64>,
    pub rho: Vec<f64>,
}

impl DosCurve {
    /// Trapezoid integral over the whole sampled range.
    pub fn integrate(&self) -> f64 {
        let mut total = 0.0;
        for k in 0..self.energies.len().saturating_sub(1) {
            total += 0.5
                * (self.rho[k] + self.rho[k + 1])
                * (self.energies[k + 1] - self.energies[k]);
        }
        total
    }

    /// Trapezoid integral clipped to `[lo, hi]` with linear interpolation at
    /// the cut points.
    pub fn integrate_between(&self, lo: f64, hi: f64) -> f64 {
        let e = &self.energies;
        let mut total = 0.0;
        for k in 0..e.len().saturating_sub(1) {
            let (x0, x1) = (e[k], e[k + 1]);
            if x1 <= lo || x0 >= hi || x1 <= x0 {
                continue;
            }
            let a = x0.max(lo);
            let b = x1.min(hi);
            let interp = |x: f64| {
                let t = (x - x0) / (x1 - x0);
                self.rho[k] * (1.0 - t) + self.rho[k + 1] * t
            };
            total += 0.5 * (interp(a) + interp(b)) * (b - a);
        }
        total
    }
}

fn check_operator(h: &SparseMatrix) -> Result<()> {
    if h.nrows() != h.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "solver needs a square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    Ok(())
}

// The counted kernel variants run serially; the plain ones honor `exec`.
// These helpers pick per call so drivers stay straight-line.

fn do_spmmv(
    h: &SparseMatrix,
    x: &BlockVector,
    y: &mut BlockVector,
    exec: &ExecConfig,
    meter: &mut Option<&mut TrafficMeter>,
) -> Result<()> {
    match meter {
        Some(m) => kernels::spmmv_counted(h, x, y, m),
        None => kernels::spmmv(h, x, y, exec),
    }
}

fn do_axpy(
    alpha: C,
    x: &BlockVector,
    y: &mut BlockVector,
    exec: &ExecConfig,
    meter: &mut Option<&mut TrafficMeter>,
) -> Result<()> {
    match meter {
        Some(m) => kernels::axpy_counted(alpha, x, y, m),
        None => kernels::axpy(alpha, x, y, exec),
    }
}

fn do_scal(
    alpha: C,
    x: &mut BlockVector,
    exec: &ExecConfig,
    meter: &mut Option<&mut TrafficMeter>,
) {
    match meter {
        Some(m) => kernels::scal_counted(alpha, x, m),
        None => kernels::scal(alpha, x, exec),
    }
}

fn do_nrm2(
    x: &BlockVector,
    exec: &ExecConfig,
    meter: &mut Option<&mut TrafficMeter>,
) -> Vec<f64> {
    match meter {
        Some(m) => kernels::nrm2_counted(x, m),
        None => kernels::nrm2(x, exec),
    }
}

fn do_dot(
    x: &BlockVector,
    y: &BlockVector,
    exec: &ExecConfig,
    meter: &mut Option<&mut TrafficMeter>,
) -> Result<Vec<C>> {
    match meter {
        Some(m) => kernels::dot_counted(x, y, m),
        None => kernels::dot(x, y, exec),
    }
}

fn do_aug(
    h: &SparseMatrix,
    scale: f64,
    shift: f64,
    v: &BlockVector,
    w: &mut BlockVector,
    exec: &ExecConfig,
    meter: &mut Option<&mut TrafficMeter>,
) -> Result<kernels::AugmentedResult> {
    match meter {
        Some(m) => kernels::aug_spmmv_counted(h, scale, shift, v, w, m),
        None => kernels::aug_spmmv(h, scale, shift, v, w, exec),
    }
}

fn naive_impl(
    h: &SparseMatrix,
    cfg: &KpmConfig,
    exec: &ExecConfig,
    mut meter: Option<&mut TrafficMeter>,
) -> Result<MomentSeries> {
    cfg.validate()?;
    check_operator(h)?;
    let n = h.nrows();
    let (a, b) = (cfg.bounds.scale, cfg.bounds.shift);
    let m_half = cfg.num_moments / 2;
    let neg_b = C::new(-b, 0.0);
    let neg_one = C::new(-1.0, 0.0);
    let two_a = C::new(2.0 * a, 0.0);

    let mut eta_all = Vec::with_capacity(cfg.num_vectors);
    let mut u = BlockVector::zeros(n, 1);
    for r in 0..cfg.num_vectors {
        let mut v = random_vector_column(n, cfg.seed, r);
        let mut eta = Vec::with_capacity(cfg.num_moments);

        // setup pass, outside the counted region: η₀ = ⟨ν₀|ν₀⟩,
        // ν₁ = a(H - b·1)ν₀, η₁ = ⟨ν₁|ν₀⟩
        let mut none = None;
        let eta0 = do_nrm2(&v, exec, &mut none)[0];
        do_spmmv(h, &v, &mut u, exec, &mut none)?;
        do_axpy(neg_b, &v, &mut u, exec, &mut none)?;
        let mut w = u.clone();
        do_scal(C::new(a, 0.0), &mut w, exec, &mut none);
        let eta1 = do_dot(&w, &v, exec, &mut none)?[0];
        eta.push(C::new(eta0, 0.0));
        eta.push(eta1);

        for m in 1..=m_half {
            std::mem::swap(&mut v, &mut w);
            do_spmmv(h, &v, &mut u, exec, &mut meter)?;
            do_axpy(neg_b, &v, &mut u, exec, &mut meter)?;
            do_scal(neg_one, &mut w, exec, &mut meter);
            do_axpy(two_a, &u, &mut w, exec, &mut meter)?;
            let even = do_nrm2(&v, exec, &mut meter)[0];
            let odd = do_dot(&w, &v, exec, &mut meter)?[0];
            if 2 * m < cfg.num_moments {
                eta.push(C::new(even, 0.0));
            }
            if 2 * m + 1 < cfg.num_moments {
                eta.push(odd);
            }
        }
        eta_all.push(eta);
    }

    let mu = average_moments(&eta_all)?;
    Ok(MomentSeries { eta: eta_all, mu })
}

fn stage1_impl(
    h: &SparseMatrix,
    cfg: &KpmConfig,
    exec: &ExecConfig,
    mut meter: Option<&mut TrafficMeter>,
) -> Result<MomentSeries> {
    cfg.validate()?;
    check_operator(h)?;
    let n = h.nrows();
    let (a, b) = (cfg.bounds.scale, cfg.bounds.shift);
    let m_half = cfg.num_moments / 2;

    let mut eta_all = Vec::with_capacity(cfg.num_vectors);
    for r in 0..cfg.num_vectors {
        let mut v = random_vector_column(n, cfg.seed, r);
        let mut w = BlockVector::zeros(n, 1);
        let mut eta = Vec::with_capacity(cfg.num_moments);

        // halved scale against a zero w turns the update into ν₁ = a(H-b·1)ν₀
        // and yields η₀, η₁ from the same fused pass (uncounted setup)
        let init = do_aug(h, 0.5 * a, b, &v, &mut w, exec, &mut None)?;
        eta.push(init.eta_even[0]);
        eta.push(init.eta_odd[0]);

        for m in 1..=m_half {
            std::mem::swap(&mut v, &mut w);
            let res = do_aug(h, a, b, &v, &mut w, exec, &mut meter)?;
            if 2 * m < cfg.num_moments {
                eta.push(res.eta_even[0]);
            }
            if 2 * m + 1 < cfg.num_moments {
                eta.push(res.eta_odd[0]);
            }
        }
        eta_all.push(eta);
    }

    let mu = average_moments(&eta_all)?;
    Ok(MomentSeries { eta: eta_all, mu })
}

fn stage2_impl(
    h: &SparseMatrix,
    cfg: &KpmConfig,
    exec: &ExecConfig,
    mut meter: Option<&mut TrafficMeter>,
) -> Result<MomentSeries> {
    cfg.validate()?;
    check_operator(h)?;
    let n = h.nrows();
    let r = cfg.num_vectors;
    let (a, b) = (cfg.bounds.scale, cfg.bounds.shift);
    let m_half = cfg.num_moments / 2;

    let mut v = random_block_vector(n, r, cfg.seed);
    let mut w = BlockVector::zeros(n, r);
    let mut eta_all = vec![Vec::with_capacity(cfg.num_moments); r];

    let init = do_aug(h, 0.5 * a, b, &v, &mut w, exec, &mut None)?;
    for c in 0..r {
        eta_all[c].push(init.eta_even[c]);
        eta_all[c].push(init.eta_odd[c]);
    }

    for m in 1..=m_half {
        std::mem::swap(&mut v, &mut w);
        let res = do_aug(h, a, b, &v, &mut w, exec, &mut meter)?;
        for c in 0..r {
            if 2 * m < cfg.num_moments {
                eta_all[c].push(res.eta_even[c]);
            }
            if 2 * m + 1 < cfg.num_moments {
                eta_all[c].push(res.eta_odd[c]);
            }
        }
    }

    let mu = average_moments(&eta_all)?;
    Ok(MomentSeries { eta: eta_all, mu })
}

/// Stage 0: literal SpMV + BLAS-1 chain with the two-vector swap scheme.
pub fn kpm_naive(h: &SparseMatrix, cfg: &KpmConfig, exec: &ExecConfig) -> Result<MomentSeries> {
    naive_impl(h, cfg, exec, None)
}

pub fn kpm_naive_counted(
    h: &SparseMatrix,
    cfg: &KpmConfig,
    meter: &mut TrafficMeter,
) -> Result<MomentSeries> {
    naive_impl(h, cfg, &ExecConfig::default(), Some(meter))
}

/// Stage 1: one augmented SpMV per inner step.
pub fn kpm_stage1(h: &SparseMatrix, cfg: &KpmConfig, exec: &ExecConfig) -> Result<MomentSeries> {
    stage1_impl(h, cfg, exec, None)
}

pub fn kpm_stage1_counted(
    h: &SparseMatrix,
    cfg: &KpmConfig,
    meter: &mut TrafficMeter,
) -> Result<MomentSeries> {
    stage1_impl(h, cfg, &ExecConfig::default(), Some(meter))
}

/// Stage 2: all R recurrences advance in lockstep through augmented SpMMV;
/// the matrix is swept M/2 times in total.
pub fn kpm_stage2(h: &SparseMatrix, cfg: &KpmConfig, exec: &ExecConfig) -> Result<MomentSeries> {
    stage2_impl(h, cfg, exec, None)
}

pub fn kpm_stage2_counted(
    h: &SparseMatrix,
    cfg: &KpmConfig,
    meter: &mut TrafficMeter,
) -> Result<MomentSeries> {
    stage2_impl(h, cfg, &ExecConfig::default(), Some(meter))
}

/// Dispatches on `cfg.stage`.
pub fn run_kpm(h: &SparseMatrix, cfg: &KpmConfig, exec: &ExecConfig) -> Result<MomentSeries> {
    match cfg.stage {
        Stage::Naive => kpm_naive(h, cfg, exec),
        Stage::AugSpmv => kpm_stage1(h, cfg, exec),
        Stage::AugSpmmv => kpm_stage2(h, cfg, exec),
    }
}

pub fn run_kpm_counted(
    h: &SparseMatrix,
    cfg: &KpmConfig,
    meter: &mut TrafficMeter,
) -> Result<MomentSeries> {
    match cfg.stage {
        Stage::Naive => kpm_naive_counted(h, cfg, meter),
        Stage::AugSpmv => kpm_stage1_counted(h, cfg, meter),
        Stage::AugSpmmv => kpm_stage2_counted(h, cfg, meter),
    }
}

fn check_imag(value: C, index: usize) -> Result<f64> {
    let tol = IMAG_TOL * (1.0 + value.re.abs());
    if value.im.abs() > tol {
        return Err(Error::ImaginaryResidue {
            index,
            residue: value.im.abs(),
        });
    }
    Ok(value.re)
}

/// Averages per-vector scalar products into normalized Chebyshev moments.
///
/// Each series is normalized by its own η₀ and the even/odd pairs are mapped
/// through the doubling identities
/// `T_{2m} = 2T_m² - T_0`, `T_{2m+1} = 2T_{m+1}T_m - T_1`:
/// `μ_{2m} = mean_r(2η̂_{2m}) - 1` and `μ_{2m+1} = mean_r(2η̂_{2m+1}) - μ_1`.
/// Imaginary residues are checked against 1e-10 and discarded.
pub fn average_moments(eta: &[Vec<C>]) -> Result<Vec<f64>> {
    if eta.is_empty() {
        return Err(Error::InvalidArgument("no moment series to average".into()));
    }
    let m_total = eta[0].len();
    if m_total < 2 || eta.iter().any(|e| e.len() != m_total) {
        return Err(Error::InvalidArgument(
            "moment series must share a length of at least 2".into(),
        ));
    }
    let r = eta.len();

    let mut norm = vec![vec![0.0f64; m_total]; r];
    for (c, series) in eta.iter().enumerate() {
        let eta0 = check_imag(series[0], 0)?;
        if eta0 <= 0.0 {
            return Err(Error::ZeroNorm(c));
        }
        for (m, &value) in series.iter().enumerate() {
            norm[c][m] = check_imag(value, m)? / eta0;
        }
    }
    let mean = |m: usize| norm.iter().map(|s| s[m]).sum::<f64>() / r as f64;

    let mut mu = vec![0.0f64; m_total];
    mu[0] = 1.0;
    mu[1] = mean(1);
    for m in 1..m_total.div_ceil(2) {
        if 2 * m < m_total {
            mu[2 * m] = 2.0 * mean(2 * m) - 1.0;
        }
        if 2 * m + 1 < m_total {
            mu[2 * m + 1] = 2.0 * mean(2 * m + 1) - mu[1];
        }
    }
    Ok(mu)
}

/// Gibbs-damping kernel applied to the truncated series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Damping {
    None,
    Jackson,
}

impl Damping {
    pub fn parse(s: &str) -> Result<Damping> {
        match s {
            "none" => Ok(Damping::None),
            "jackson" => Ok(Damping::Jackson),
            other => Err(Error::InvalidArgument(format!(
                "unknown damping kernel '{other}'"
            ))),
        }
    }
}

/// Jackson coefficients for an M-term series; g₀ = 1 and the damped series
/// is strictly non-negative.
pub fn jackson_coefficients(m_total: usize) -> Vec<f64> {
    let mp = (m_total + 1) as f64;
    let cot = (std::f64::consts::PI / mp).cos() / (std::f64::consts::PI / mp).sin();
    (0..m_total)
        .map(|m| {
            let arg = std::f64::consts::PI * m as f64 / mp;
            ((mp - m as f64) * arg.cos() + arg.sin() * cot) / mp
        })
        .collect()
}

/// Evaluates the damped Chebyshev series at Chebyshev nodes and maps it back
/// to the original energy axis.
///
/// At each node `x` the normalized density is
/// `ρ̃(x) = (g₀μ₀ + 2Σ_{m≥1} g_m μ_m T_m(x)) / (π√(1-x²))`; the energy axis
/// is `E = x/scale + shift` and the density picks up the Jacobian
/// `dim·scale`, so the curve integrates to the matrix dimension.
pub fn reconstruct_dos(
    mu: &[f64],
    bounds: &SpectralBounds,
    dim: usize,
    samples: usize,
    damping: Damping,
) -> Result<DosCurve> {
    if samples < 2 {
        return Err(Error::InvalidArgument(
            "need at least two sample points".into(),
        ));
    }
    if mu.len() < 2 {
        return Err(Error::InvalidArgument("need at least two moments".into()));
    }
    let m_total = mu.len();
    let g = match damping {
        Damping::None => vec![1.0; m_total],
        Damping::Jackson => jackson_coefficients(m_total),
    };

    let mut energies = Vec::with_capacity(samples);
    let mut rho = Vec::with_capacity(samples);
    for k in (0..samples).rev() {
        let x = (std::f64::consts::PI * (k as f64 + 0.5) / samples as f64).cos();
        // Chebyshev recurrence for the series value at x
        let mut series = g[0] * mu[0];
        let mut t_prev = 1.0;
        let mut t_cur = x;
        for m in 1..m_total {
            series += 2.0 * g[m] * mu[m] * t_cur;
            let t_next = 2.0 * x * t_cur - t_prev;
            t_prev = t_cur;
            t_cur = t_next;
        }
        let density = series / (std::f64::consts::PI * (1.0 - x * x).sqrt());
        energies.push(x / bounds.scale + bounds.shift);
        rho.push(dim as f64 * bounds.scale * density);
    }
    Ok(DosCurve { energies, rho })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::ExecConfig;
    use crate::lattice::{build_hamiltonian, estimate_bounds, Domain, PotentialSpec};
    use crate::oracle;
    use crate::sparsemat::CrsMatrix;

    fn unit_bounds() -> SpectralBounds {
        SpectralBounds {
            scale: 1.0,
            shift: 0.0,
            epsilon: 0.01,
        }
    }

    fn scalar_matrix(x: f64) -> SparseMatrix {
        SparseMatrix::Crs(CrsMatrix::from_diag(&[C::new(x, 0.0)]))
    }

    fn cfg(m: usize, r: usize, stage: Stage, bounds: SpectralBounds) -> KpmConfig {
        KpmConfig {
            num_moments: m,
            num_vectors: r,
            seed: 12345,
            stage,
            bounds,
        }
    }

    #[test]
    fn odd_moment_count_rejected() {
        let h = scalar_matrix(0.5);
        let c = cfg(7, 1, Stage::Naive, unit_bounds());
        assert!(kpm_naive(&h, &c, &ExecConfig::default()).is_err());
    }

    #[test]
    fn zero_matrix_eta_pattern() {
        // ν₁ = 0, ν₂ = -ν₀: η₂ = η₃ = 0 while η₄ returns to η₀
        let n = 16;
        let zero = SparseMatrix::Crs(
            CrsMatrix::from_parts(n, n, vec![0; n + 1], vec![], vec![]).unwrap(),
        );
        let c = cfg(8, 1, Stage::Naive, unit_bounds());
        let out = kpm_naive(&zero, &c, &ExecConfig::default()).unwrap();
        let eta = &out.eta[0];
        let eta0 = eta[0].re;
        assert!(eta0 > 0.0);
        assert_eq!(eta[1], ZERO);
        assert_eq!(eta[2], ZERO);
        assert_eq!(eta[3], ZERO);
        assert!((eta[4].re - eta0).abs() <= 1e-12 * eta0);
        assert_eq!(eta[5], ZERO);
        assert_eq!(eta[6], ZERO);
    }

    #[test]
    fn scalar_recurrence_matches_chebyshev_oracle() {
        let x = 0.3;
        let h = scalar_matrix(x);
        for stage in [Stage::Naive, Stage::AugSpmv, Stage::AugSpmmv] {
            let c = cfg(16, 1, stage, unit_bounds());
            let out = run_kpm(&h, &c, &ExecConfig::default()).unwrap();
            let eta = &out.eta[0];
            let eta0 = eta[0].re;
            let t = oracle::chebyshev_values(x, 10);
            for m in 0..8 {
                let want_even = t[m] * t[m] * eta0;
                let want_odd = t[m + 1] * t[m] * eta0;
                assert!(
                    (eta[2 * m].re - want_even).abs() <= 1e-12 * want_even.abs().max(1.0),
                    "{stage:?} eta[{}]",
                    2 * m
                );
                if 2 * m + 1 < 16 {
                    assert!(
                        (eta[2 * m + 1].re - want_odd).abs() <= 1e-12 * want_odd.abs().max(1.0),
                        "{stage:?} eta[{}]",
                        2 * m + 1
                    );
                }
            }
            // normalized moments reduce to T_m(x)
            for m in 0..16 {
                assert!((out.mu[m] - t[m]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn stages_agree_to_machine_precision() {
        let d = Domain::new(4, 4, 2, PotentialSpec::Zero).unwrap();
        let h = build_hamiltonian(&d).unwrap();
        let bounds = estimate_bounds(&h, 0.01).unwrap();
        let exec = ExecConfig::default();
        let m = 40;
        let r = 3;
        let naive = kpm_naive(&h, &cfg(m, r, Stage::Naive, bounds), &exec).unwrap();
        let s1 = kpm_stage1(&h, &cfg(m, r, Stage::AugSpmv, bounds), &exec).unwrap();
        let s2 = kpm_stage2(&h, &cfg(m, r, Stage::AugSpmmv, bounds), &exec).unwrap();
        for c in 0..r {
            for i in 0..m {
                let a = naive.eta[c][i];
                let b = s1.eta[c][i];
                let e = s2.eta[c][i];
                assert!((a - b).norm() <= 1e-12 * a.norm().max(1e-300));
                assert!((a - e).norm() <= 1e-12 * a.norm().max(1e-300));
            }
        }
    }

    #[test]
    fn stage2_with_one_vector_degenerates_to_stage1() {
        let d = Domain::new(3, 3, 2, PotentialSpec::Zero).unwrap();
        let h = build_hamiltonian(&d).unwrap();
        let bounds = estimate_bounds(&h, 0.01).unwrap();
        let exec = ExecConfig::default();
        let s1 = kpm_stage1(&h, &cfg(20, 1, Stage::AugSpmv, bounds), &exec).unwrap();
        let s2 = kpm_stage2(&h, &cfg(20, 1, Stage::AugSpmmv, bounds), &exec).unwrap();
        assert_eq!(s1.eta, s2.eta);
    }

    #[test]
    fn recurrence_vectors_match_dense_polynomial() {
        let d = Domain::new(2, 2, 2, PotentialSpec::Zero).unwrap();
        let h = build_hamiltonian(&d).unwrap();
        let bounds = estimate_bounds(&h, 0.01).unwrap();
        let exec = ExecConfig::default();
        let n = h.nrows();
        let v0 = random_vector_column(n, 7, 0);

        let scaled = crate::lattice::apply_shift_scale(&h, &bounds).unwrap();
        let dense = oracle::dense_from_sparse(&scaled);
        let dense_vecs = oracle::chebyshev_vectors(&dense, &v0.column(0), 10);

        let mut v = v0.clone();
        let mut w = BlockVector::zeros(n, 1);
        kernels::aug_spmv(&h, 0.5 * bounds.scale, bounds.shift, &v, &mut w, &exec).unwrap();
        for m in 1..=10usize {
            // w holds T_m(H̃)v0 here
            for i in 0..n {
                let want = dense_vecs[m][i];
                assert!(
                    (w.get(i, 0) - want).norm() <= 1e-10 * want.norm().max(1.0),
                    "vector mismatch at order {m}"
                );
            }
            std::mem::swap(&mut v, &mut w);
            kernels::aug_spmv(&h, bounds.scale, bounds.shift, &v, &mut w, &exec).unwrap();
        }
    }

    #[test]
    fn averaging_identical_columns_is_identity() {
        let series = vec![
            vec![C::new(2.0, 0.0), C::new(0.5, 0.0), C::new(1.0, 0.0), C::new(0.25, 0.0)];
            3
        ];
        let single = average_moments(&series[..1]).unwrap();
        let triple = average_moments(&series).unwrap();
        assert_eq!(single, triple);
    }

    #[test]
    fn averaging_rejects_zero_norm_and_large_residue() {
        let zero = vec![vec![ZERO, ZERO]];
        assert!(matches!(
            average_moments(&zero),
            Err(Error::ZeroNorm(0))
        ));
        let residue = vec![vec![C::new(1.0, 0.5), C::new(0.1, 0.0)]];
        assert!(matches!(
            average_moments(&residue),
            Err(Error::ImaginaryResidue { .. })
        ));
    }

    #[test]
    fn moments_stay_bounded_for_hermitian_operator() {
        let d = Domain::new(4, 4, 2, PotentialSpec::Uniform(0.3)).unwrap();
        let h = build_hamiltonian(&d).unwrap();
        let bounds = estimate_bounds(&h, 0.01).unwrap();
        let c = cfg(100, 2, Stage::AugSpmmv, bounds);
        let out = kpm_stage2(&h, &c, &ExecConfig::default()).unwrap();
        for (m, mu) in out.mu.iter().enumerate() {
            assert!(mu.abs() <= 1.0 + 1e-10, "mu[{m}] = {mu}");
        }
    }

    #[test]
    fn flat_moments_give_arcsine_density() {
        let mut mu = vec![0.0; 64];
        mu[0] = 1.0;
        let curve = reconstruct_dos(&mu, &unit_bounds(), 1, 101, Damping::None).unwrap();
        for (e, r) in curve.energies.iter().zip(&curve.rho) {
            let want = 1.0 / (std::f64::consts::PI * (1.0 - e * e).sqrt());
            assert!((r - want).abs() <= 1e-12 * want, "at {e}: {r} vs {want}");
        }
    }

    #[test]
    fn scalar_spectrum_reconstructs_unit_peak() {
        let h = scalar_matrix(0.3);
        let c = cfg(800, 1, Stage::AugSpmv, unit_bounds());
        let out = kpm_stage1(&h, &c, &ExecConfig::default()).unwrap();
        let curve = reconstruct_dos(&out.mu, &unit_bounds(), 1, 4096, Damping::Jackson).unwrap();
        let total = curve.integrate();
        assert!((total - 1.0).abs() <= 1e-3, "weight {total}");
        // peak location
        let (kmax, _) = curve
            .rho
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!((curve.energies[kmax] - 0.3).abs() < 0.01);
        // Jackson keeps the curve non-negative
        for r in &curve.rho {
            assert!(*r >= -1e-12);
        }
    }

    #[test]
    fn dos_normalizes_to_matrix_dimension() {
        let d = Domain::new(6, 6, 4, PotentialSpec::Zero).unwrap();
        let h = build_hamiltonian(&d).unwrap();
        let bounds = estimate_bounds(&h, 0.01).unwrap();
        let c = cfg(500, 1, Stage::AugSpmmv, bounds);
        let out = kpm_stage2(&h, &c, &ExecConfig::default()).unwrap();
        let curve = reconstruct_dos(&out.mu, &bounds, h.nrows(), 4096, Damping::Jackson).unwrap();
        let total = curve.integrate();
        let n = h.nrows() as f64;
        assert!(
            (total - n).abs() <= 0.01 * n,
            "integrated {total} for dimension {n}"
        );
    }

    #[test]
    fn reconstruct_rejects_tiny_inputs() {
        let mu = vec![1.0, 0.0];
        assert!(reconstruct_dos(&mu, &unit_bounds(), 1, 1, Damping::None).is_err());
        assert!(reconstruct_dos(&[1.0], &unit_bounds(), 1, 16, Damping::None).is_err());
    }

    #[test]
    fn jackson_coefficients_shape() {
        let g = jackson_coefficients(100);
        assert!((g[0] - 1.0).abs() < 1e-14);
        for w in g.windows(2) {
            assert!(w[1] <= w[0] + 1e-14);
        }
        assert!(g[99] > 0.0 && g[99] < 0.01);
    }
}
