//! Complex dense-matrix helpers and leading-eigenpair solvers.
//!
//! All tensor arithmetic in this crate runs on `nalgebra` dynamic matrices
//! over `Complex64`. The eigen machinery is intentionally small: a restarted
//! Arnoldi iteration for the dominant eigenpair of a matrix-free operator, a
//! plain power iteration kept as a second route for cross-checks, and a dense
//! fallback backed by `faer` for small or degenerate problems.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Real number as a complex scalar.
#[inline]
pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn frob(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Shannon entropy in bits, with the 0·log 0 := 0 convention.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.log2())
        .sum::<f64>()
}

/// Rotate a matrix by a global phase so its largest-magnitude entry is real
/// and positive. Fixes the phase freedom of eigenvectors reproducibly.
pub fn phase_fix(m: &mut CMat) {
    let mut best = 0.0;
    let mut ph = C64::new(1.0, 0.0);
    for z in m.iter() {
        let a = z.norm();
        if a > best {
            best = a;
            ph = z / a;
        }
    }
    if best > 0.0 {
        let rot = ph.conj();
        for z in m.iter_mut() {
            *z *= rot;
        }
    }
}

/// Project onto the Hermitian part after removing the global phase of the
/// trace. Leading eigenmatrices of unmixed transfer maps are Hermitian up to
/// phase and solver noise; this makes them exactly so.
pub fn hermitize(m: &CMat) -> CMat {
    let mut w = m.clone();
    let t = w.trace();
    if t.norm() > 1e-14 * frob(&w) {
        let rot = (t / t.norm()).conj();
        for z in w.iter_mut() {
            *z *= rot;
        }
    } else {
        phase_fix(&mut w);
    }
    let adj = w.adjoint();
    (w + adj).scale(0.5)
}

/// Complex matrix with i.i.d. standard-normal real and imaginary parts.
pub fn ginibre(rows: usize, cols: usize, rng: &mut impl Rng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| C64::new(randn(rng), randn(rng)))
}

/// Standard normal via Box-Muller.
pub fn randn(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn seeded_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Hermitian eigendecomposition with eigenvalues sorted in decreasing order.
pub struct HermEig {
    pub values: Vec<f64>,
    /// Unitary matrix whose columns are the eigenvectors, in `values` order.
    pub vectors: CMat,
}

pub fn hermitian_eigen_desc(m: &CMat) -> HermEig {
    let n = m.nrows();
    let se = nalgebra::SymmetricEigen::new(m.clone());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| se.eigenvalues[b].partial_cmp(&se.eigenvalues[a]).unwrap());
    let values: Vec<f64> = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        vectors.set_column(c, &se.eigenvectors.column(i));
    }
    HermEig { values, vectors }
}

/// Isometric factor of the polar decomposition `M = U P`, computed as
/// `U = W V†` from the SVD `M = W Σ V†`.
pub fn polar_isometry(m: &CMat) -> CMat {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let vt = svd.v_t.expect("svd requested v_t");
    u * vt
}

// ---------------------------------------------------------------------------
// Leading eigenpair machinery
// ---------------------------------------------------------------------------

/// Matrix-free complex linear operator.
pub trait LinOp {
    fn dim(&self) -> usize;
    fn apply(&self, v: &CVec) -> CVec;
}

pub struct DenseOp<'a>(pub &'a CMat);

impl LinOp for DenseOp<'_> {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply(&self, v: &CVec) -> CVec {
        self.0 * v
    }
}

#[derive(Clone, Debug)]
pub struct EigOptions {
    /// Residual tolerance: converged when ‖Av − ηv‖ ≤ tol·max(1, |η|).
    pub tol: f64,
    /// Hard cap on operator applications across restarts.
    pub max_applies: usize,
    /// Krylov subspace dimension per Arnoldi cycle.
    pub krylov_dim: usize,
    /// Warm-start vector; a deterministic pseudorandom start is used if absent.
    pub start: Option<CVec>,
    pub seed: u64,
}

impl Default for EigOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_applies: 100_000,
            krylov_dim: 24,
            start: None,
            seed: 0x51ab_17e3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LeadingEig {
    pub value: C64,
    pub vector: CVec,
    /// Second-largest eigenvalue estimate (Ritz), when the solve exposes one.
    pub subleading: Option<C64>,
    pub residual: f64,
    pub applies: usize,
    pub converged: bool,
}

fn start_vector(n: usize, opts: &EigOptions) -> CVec {
    match &opts.start {
        Some(v) if v.len() == n && v.norm() > 0.0 => v.normalize(),
        _ => {
            let mut rng = seeded_rng(opts.seed);
            let v = CVec::from_fn(n, |_, _| C64::new(randn(&mut rng), randn(&mut rng)));
            v.normalize()
        }
    }
}

/// Plain power iteration with a Rayleigh-quotient estimate. Second route used
/// by tests; `arnoldi_leading` is the workhorse.
pub fn power_leading(op: &dyn LinOp, opts: &EigOptions) -> LeadingEig {
    let n = op.dim();
    let mut v = start_vector(n, opts);
    let mut value = C64::new(1.0, 0.0);
    let mut residual = f64::INFINITY;
    let mut applies = 0;
    while applies < opts.max_applies {
        let w = op.apply(&v);
        applies += 1;
        value = v.dotc(&w);
        residual = (&w - &v * value).norm();
        let nrm = w.norm();
        if nrm == 0.0 {
            return LeadingEig {
                value: C64::new(0.0, 0.0),
                vector: v,
                subleading: None,
                residual: 0.0,
                applies,
                converged: true,
            };
        }
        v = w.unscale(nrm);
        if residual <= opts.tol * value.norm().max(1.0) {
            return LeadingEig {
                value,
                vector: v,
                subleading: None,
                residual,
                applies,
                converged: true,
            };
        }
    }
    LeadingEig {
        value,
        vector: v,
        subleading: None,
        residual,
        applies,
        converged: false,
    }
}

/// Dominant eigenpair by explicitly restarted Arnoldi iteration.
///
/// Each cycle builds a Krylov basis of dimension `krylov_dim`, extracts Ritz
/// pairs from the projected Hessenberg matrix, verifies the leading pair with
/// one explicit residual, and restarts from the leading Ritz vector.
pub fn arnoldi_leading(op: &dyn LinOp, opts: &EigOptions) -> LeadingEig {
    let n = op.dim();
    if n == 1 {
        let e = CVec::from_element(1, cr(1.0));
        let w = op.apply(&e);
        return LeadingEig {
            value: w[0],
            vector: e,
            subleading: None,
            residual: 0.0,
            applies: 1,
            converged: true,
        };
    }
    let m = opts.krylov_dim.clamp(2, n);
    let mut v0 = start_vector(n, opts);
    let mut applies = 0usize;
    let mut best = LeadingEig {
        value: C64::new(0.0, 0.0),
        vector: v0.clone(),
        subleading: None,
        residual: f64::INFINITY,
        applies: 0,
        converged: false,
    };
    loop {
        let mut vs: Vec<CVec> = Vec::with_capacity(m + 1);
        vs.push(v0.clone());
        let mut h = vec![vec![C64::new(0.0, 0.0); m]; m + 1];
        let mut kdim = m;
        let mut breakdown = false;
        for j in 0..m {
            let mut w = op.apply(&vs[j]);
            applies += 1;
            let scale = w.norm().max(1.0);
            for i in 0..=j {
                let hij = vs[i].dotc(&w);
                h[i][j] = hij;
                w.axpy(-hij, &vs[i], cr(1.0));
            }
            // one re-orthogonalization pass keeps the basis clean
            for i in 0..=j {
                let corr = vs[i].dotc(&w);
                h[i][j] += corr;
                w.axpy(-corr, &vs[i], cr(1.0));
            }
            let nrm = w.norm();
            h[j + 1][j] = cr(nrm);
            if nrm < 1e-14 * scale {
                kdim = j + 1;
                breakdown = true;
                break;
            }
            vs.push(w.unscale(nrm));
        }
        let hm = faer::Mat::from_fn(kdim, kdim, |i, j| h[i][j]);
        let Ok(eig) = hm.eigen() else {
            // extremely rare; fall back to the power route for this cycle
            let mut po = opts.clone();
            po.start = Some(v0.clone());
            po.max_applies = opts.max_applies.saturating_sub(applies);
            let mut r = power_leading(op, &po);
            r.applies += applies;
            return r;
        };
        let s = eig.S();
        let u = eig.U();
        let mut order: Vec<usize> = (0..kdim).collect();
        order.sort_by(|&a, &b| s[b].norm().partial_cmp(&s[a].norm()).unwrap());
        let lead = order[0];
        let value: C64 = s[lead];
        let subleading: Option<C64> = order.get(1).map(|&i| s[i]);
        let mut x = CVec::zeros(n);
        for i in 0..kdim {
            x.axpy(u[(i, lead)], &vs[i], cr(1.0));
        }
        let xn = x.norm();
        if xn == 0.0 {
            return LeadingEig {
                value: C64::new(0.0, 0.0),
                vector: vs[0].clone(),
                subleading,
                residual: 0.0,
                applies,
                converged: true,
            };
        }
        x = x.unscale(xn);
        let ax = op.apply(&x);
        applies += 1;
        let residual = (&ax - &x * value).norm();
        if residual < best.residual {
            best = LeadingEig {
                value,
                vector: x.clone(),
                subleading,
                residual,
                applies,
                converged: false,
            };
        }
        if residual <= opts.tol * value.norm().max(1.0) || breakdown {
            return LeadingEig {
                value,
                vector: x,
                subleading,
                residual,
                applies,
                converged: true,
            };
        }
        if applies >= opts.max_applies {
            best.applies = applies;
            return best;
        }
        v0 = x;
    }
}

/// Full dense eigendecomposition via `faer`, returning the two largest
/// eigenvalues by modulus and the leading eigenvector.
pub fn dense_leading(m: &CMat) -> Option<LeadingEig> {
    let n = m.nrows();
    let fm = faer::Mat::from_fn(n, n, |i, j| m[(i, j)]);
    let eig = fm.eigen().ok()?;
    let s = eig.S();
    let u = eig.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].norm().partial_cmp(&s[a].norm()).unwrap());
    let lead = order[0];
    let vector = CVec::from_fn(n, |i, _| u[(i, lead)]).normalize();
    let value: C64 = s[lead];
    let residual = (m * &vector - &vector * value).norm();
    Some(LeadingEig {
        value,
        vector,
        subleading: order.get(1).map(|&i| s[i]),
        residual,
        applies: 0,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_cmat(n: usize, seed: u64) -> CMat {
        let mut rng = seeded_rng(seed);
        ginibre(n, n, &mut rng)
    }

    #[test]
    fn arnoldi_matches_dense_on_random_matrices() {
        for seed in 0..6u64 {
            let m = random_cmat(13, seed);
            let op = DenseOp(&m);
            let a = arnoldi_leading(&op, &EigOptions::default());
            let d = dense_leading(&m).unwrap();
            assert!(a.converged, "seed {seed}");
            assert!(
                (a.value - d.value).norm() < 1e-9 * d.value.norm(),
                "seed {seed}: {} vs {}",
                a.value,
                d.value
            );
        }
    }

    #[test]
    fn power_and_arnoldi_agree_on_well_gapped_matrix() {
        // diagonal-dominant: clear spectral gap
        let mut m = random_cmat(10, 99).scale(0.05);
        m[(0, 0)] += cr(2.0);
        let op = DenseOp(&m);
        let p = power_leading(&op, &EigOptions::default());
        let a = arnoldi_leading(&op, &EigOptions::default());
        assert!(p.converged && a.converged);
        assert!((p.value - a.value).norm() < 1e-9);
    }

    #[test]
    fn arnoldi_handles_conjugate_pair_dominance() {
        // real rotation block: dominant eigenvalues e^{±iθ}, equal modulus
        let mut m = CMat::zeros(4, 4);
        let th = 0.7f64;
        m[(0, 0)] = cr(th.cos());
        m[(0, 1)] = cr(-th.sin());
        m[(1, 0)] = cr(th.sin());
        m[(1, 1)] = cr(th.cos());
        m[(2, 2)] = cr(0.3);
        m[(3, 3)] = cr(0.1);
        let a = arnoldi_leading(&DenseOp(&m), &EigOptions::default());
        assert!(a.converged);
        assert!((a.value.norm() - 1.0).abs() < 1e-10);
        let sub = a.subleading.unwrap();
        assert!((sub.norm() - 1.0).abs() < 1e-10, "pair partner has equal modulus");
    }

    #[test]
    fn hermitian_eigen_sorted_and_reconstructs() {
        let g = random_cmat(8, 5);
        let h = (&g + g.adjoint()).scale(0.5);
        let he = hermitian_eigen_desc(&h);
        for w in he.values.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let d = CMat::from_diagonal(&CVec::from_iterator(8, he.values.iter().map(|&x| cr(x))));
        let rec = &he.vectors * d * he.vectors.adjoint();
        assert!(frob(&(rec - h)) < 1e-10);
    }

    #[test]
    fn polar_isometry_is_unitary_for_square_input() {
        let m = random_cmat(6, 17);
        let u = polar_isometry(&m);
        let id = CMat::identity(6, 6);
        assert!(frob(&(u.adjoint() * &u - id)) < 1e-12);
    }

    #[test]
    fn entropy_conventions() {
        assert_eq!(entropy_bits(&[1.0, 0.0]), 0.0);
        assert!((entropy_bits(&[0.5, 0.5]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hermitize_removes_phase() {
        let g = random_cmat(5, 3);
        let h = (&g + g.adjoint()).scale(0.5);
        let rotated = h.scale(1.0) * C64::from_polar(1.0, 1.234);
        let fixed = hermitize(&rotated);
        assert!(frob(&(&fixed - &h)) < 1e-10 || frob(&(&fixed + &h)) < 1e-10);
    }
}
