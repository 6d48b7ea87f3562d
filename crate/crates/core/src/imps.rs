//! Infinite matrix product state (iMPS) tensors, transfer matrices, and
//! canonical forms.
//!
//! Index convention: for a site matrix `A^x`, the row index is the *updated*
//! bond (later in time) and the column index is the *incoming* bond, so the
//! matrix for a sequence `x_{0:L}` is the product `A^{x_{L-1}} ⋯ A^{x_1} A^{x_0}`
//! with later factors on the left. A reshaped `d_top×d_bottom` matrix `V`
//! stands for the row-major vectorization used by the dense transfer matrix.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    arnoldi_leading, cr, dense_leading, entropy_bits, frob, ginibre, hermitian_eigen_desc,
    hermitize, seeded_rng, CMat, CVec, EigOptions, LinOp,
};

/// Largest dimension for which a transfer matrix is materialized densely.
pub const DENSE_EIG_LIMIT: usize = 4096;
/// Relative gap below which a leading eigenvalue is flagged as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Site tensors
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
enum SiteData {
    Dense(Vec<CMat>),
    /// Per-symbol nonzero entries `(row, col, weight)`. Used for tensors built
    /// from unifilar models, which have at most one nonzero per column.
    Sparse {
        dim: usize,
        entries: Vec<Vec<(u32, u32, C64)>>,
    },
}

/// Per-symbol complex matrices `{A^x}` of a translationally-invariant iMPS.
#[derive(Clone, Debug)]
pub struct SiteTensor {
    symbols: Vec<String>,
    data: SiteData,
}

impl SiteTensor {
    pub fn new(symbols: Vec<String>, matrices: Vec<CMat>) -> Result<Self> {
        if symbols.is_empty() || symbols.len() != matrices.len() {
            return Err(Error::Structure(
                "site tensor needs one matrix per symbol".into(),
            ));
        }
        let d = matrices[0].nrows();
        if d == 0 {
            return Err(Error::Structure("bond dimension must be positive".into()));
        }
        for m in &matrices {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::Structure(format!(
                    "site matrices must all be {d}×{d}"
                )));
            }
            if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::Structure("site matrices must be finite".into()));
            }
        }
        Ok(Self {
            symbols,
            data: SiteData::Dense(matrices),
        })
    }

    pub(crate) fn from_sparse(
        symbols: Vec<String>,
        dim: usize,
        entries: Vec<Vec<(u32, u32, C64)>>,
    ) -> Result<Self> {
        if symbols.is_empty() || symbols.len() != entries.len() || dim == 0 {
            return Err(Error::Structure("malformed sparse site tensor".into()));
        }
        for es in &entries {
            for &(k, j, w) in es {
                if k as usize >= dim || j as usize >= dim {
                    return Err(Error::Structure("sparse entry out of range".into()));
                }
                if !w.re.is_finite() || !w.im.is_finite() {
                    return Err(Error::Structure("site matrices must be finite".into()));
                }
            }
        }
        Ok(Self {
            symbols,
            data: SiteData::Sparse { dim, entries },
        })
    }

    pub fn bond_dim(&self) -> usize {
        match &self.data {
            SiteData::Dense(m) => m[0].nrows(),
            SiteData::Sparse { dim, .. } => *dim,
        }
    }

    pub fn num_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.data, SiteData::Sparse { .. })
    }

    /// Materialize the matrix for symbol index `x`.
    pub fn matrix(&self, x: usize) -> CMat {
        match &self.data {
            SiteData::Dense(m) => m[x].clone(),
            SiteData::Sparse { dim, entries } => {
                let mut m = CMat::zeros(*dim, *dim);
                for &(k, j, w) in &entries[x] {
                    m[(k as usize, j as usize)] += w;
                }
                m
            }
        }
    }

    pub fn to_matrices(&self) -> Vec<CMat> {
        (0..self.num_symbols()).map(|x| self.matrix(x)).collect()
    }

    pub fn scaled(&self, s: C64) -> Self {
        let mut out = self.clone();
        match &mut out.data {
            SiteData::Dense(ms) => {
                for m in ms.iter_mut() {
                    *m *= s;
                }
            }
            SiteData::Sparse { entries, .. } => {
                for es in entries.iter_mut() {
                    for e in es.iter_mut() {
                        e.2 *= s;
                    }
                }
            }
        }
        out
    }

    /// `A^x · m`
    pub(crate) fn lmul(&self, x: usize, m: &CMat) -> CMat {
        match &self.data {
            SiteData::Dense(ms) => &ms[x] * m,
            SiteData::Sparse { dim, entries } => {
                let mut out = CMat::zeros(*dim, m.ncols());
                for &(k, j, w) in &entries[x] {
                    let (k, j) = (k as usize, j as usize);
                    for c in 0..m.ncols() {
                        out[(k, c)] += w * m[(j, c)];
                    }
                }
                out
            }
        }
    }

    /// `m · A^x`
    pub(crate) fn rmul(&self, x: usize, m: &CMat) -> CMat {
        match &self.data {
            SiteData::Dense(ms) => m * &ms[x],
            SiteData::Sparse { dim, entries } => {
                let mut out = CMat::zeros(m.nrows(), *dim);
                for &(k, j, w) in &entries[x] {
                    let (k, j) = (k as usize, j as usize);
                    for r in 0..m.nrows() {
                        out[(r, j)] += w * m[(r, k)];
                    }
                }
                out
            }
        }
    }

    /// `m · (A^x)†`
    pub(crate) fn rmul_dag(&self, x: usize, m: &CMat) -> CMat {
        match &self.data {
            SiteData::Dense(ms) => m * ms[x].adjoint(),
            SiteData::Sparse { dim, entries } => {
                let mut out = CMat::zeros(m.nrows(), *dim);
                for &(k, j, w) in &entries[x] {
                    let (k, j) = (k as usize, j as usize);
                    let wc = w.conj();
                    for r in 0..m.nrows() {
                        out[(r, k)] += wc * m[(r, j)];
                    }
                }
                out
            }
        }
    }

    /// `(A^x)† · m`
    pub(crate) fn lmul_dag(&self, x: usize, m: &CMat) -> CMat {
        match &self.data {
            SiteData::Dense(ms) => ms[x].adjoint() * m,
            SiteData::Sparse { dim, entries } => {
                let mut out = CMat::zeros(*dim, m.ncols());
                for &(k, j, w) in &entries[x] {
                    let (k, j) = (k as usize, j as usize);
                    let wc = w.conj();
                    for c in 0..m.ncols() {
                        out[(j, c)] += wc * m[(k, c)];
                    }
                }
                out
            }
        }
    }

    pub(crate) fn sparse_entries(&self) -> Option<&Vec<Vec<(u32, u32, C64)>>> {
        match &self.data {
            SiteData::Sparse { entries, .. } => Some(entries),
            SiteData::Dense(_) => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let d = self.bond_dim();
        let mut mats = BTreeMap::new();
        for (x, s) in self.symbols.iter().enumerate() {
            let m = self.matrix(x);
            let rows: Vec<Vec<[f64; 2]>> = (0..d)
                .map(|r| (0..d).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
                .collect();
            mats.insert(s.clone(), rows);
        }
        serde_json::to_value(SiteTensorJson {
            bond_dim: d,
            symbols: self.symbols.clone(),
            matrices: mats,
        })
        .expect("site tensor serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let js: SiteTensorJson = serde_json::from_value(v.clone())?;
        let d = js.bond_dim;
        let mut matrices = Vec::with_capacity(js.symbols.len());
        for s in &js.symbols {
            let rows = js
                .matrices
                .get(s)
                .ok_or_else(|| Error::Structure(format!("missing matrix for symbol {s:?}")))?;
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::Structure("matrix shape mismatch in JSON".into()));
            }
            matrices.push(CMat::from_fn(d, d, |r, c| {
                C64::new(rows[r][c][0], rows[r][c][1])
            }));
        }
        Self::new(js.symbols, matrices)
    }
}

#[derive(Serialize, Deserialize)]
struct SiteTensorJson {
    bond_dim: usize,
    symbols: Vec<String>,
    matrices: BTreeMap<String, Vec<Vec<[f64; 2]>>>,
}

/// Random complex iMPS, normalized so its transfer matrix has unit leading
/// eigenvalue. Random tensors are injective almost surely.
pub fn random_site_tensor(bond_dim: usize, num_symbols: usize, seed: u64) -> SiteTensor {
    let mut rng = seeded_rng(seed);
    let symbols = (0..num_symbols).map(|x| x.to_string()).collect();
    let scale = 1.0 / ((bond_dim * num_symbols) as f64).sqrt();
    let mats = (0..num_symbols)
        .map(|_| ginibre(bond_dim, bond_dim, &mut rng).scale(scale))
        .collect();
    let a = SiteTensor::new(symbols, mats).expect("random tensor is well formed");
    let (a, _) = normalize(&a).expect("random tensor normalizes");
    a
}

// ---------------------------------------------------------------------------
// Transfer matrices
// ---------------------------------------------------------------------------

/// Transfer matrix `E = Σ_x T^x ⊗ (B^x)*`, kept matrix-free. For the unmixed
/// case `T = B`; mixed transfer matrices pair a target with an ansatz.
pub struct TransferMatrix<'a> {
    top: &'a SiteTensor,
    bottom: &'a SiteTensor,
}

/// `E = Σ_x A^x ⊗ (A^x)*` for a single iMPS.
pub fn transfer_matrix(a: &SiteTensor) -> TransferMatrix<'_> {
    TransferMatrix { top: a, bottom: a }
}

impl<'a> TransferMatrix<'a> {
    pub fn mixed(top: &'a SiteTensor, bottom: &'a SiteTensor) -> Result<Self> {
        if top.symbols != bottom.symbols {
            return Err(Error::Structure(
                "mixed transfer matrix requires identical alphabets".into(),
            ));
        }
        Ok(Self { top, bottom })
    }

    /// `(d_top, d_bottom)`
    pub fn dims(&self) -> (usize, usize) {
        (self.top.bond_dim(), self.bottom.bond_dim())
    }

    pub fn dim(&self) -> usize {
        self.top.bond_dim() * self.bottom.bond_dim()
    }

    /// Action on a right (ket-side) environment: `V ↦ Σ_x T^x V (B^x)†`,
    /// with `V` of shape `d_top×d_bottom`.
    pub fn apply_ket(&self, v: &CMat) -> CMat {
        let mut out = CMat::zeros(self.top.bond_dim(), self.bottom.bond_dim());
        for x in 0..self.top.num_symbols() {
            out += self.bottom.rmul_dag(x, &self.top.lmul(x, v));
        }
        out
    }

    /// Action on a left (bra-side) environment: `G ↦ Σ_x (B^x)† G T^x`,
    /// with `G` of shape `d_bottom×d_top`.
    pub fn apply_bra(&self, g: &CMat) -> CMat {
        let mut out = CMat::zeros(self.bottom.bond_dim(), self.top.bond_dim());
        for x in 0..self.top.num_symbols() {
            out += self.top.rmul(x, &self.bottom.lmul_dag(x, g));
        }
        out
    }

    /// Dense matrix in the row-major Kronecker layout, when small enough.
    pub fn dense(&self) -> Option<CMat> {
        let (dt, db) = self.dims();
        if dt * db > DENSE_EIG_LIMIT {
            return None;
        }
        let mut e = CMat::zeros(dt * db, dt * db);
        for x in 0..self.top.num_symbols() {
            let t = self.top.matrix(x);
            let b = self.bottom.matrix(x);
            for i1 in 0..dt {
                for i2 in 0..db {
                    for j1 in 0..dt {
                        for j2 in 0..db {
                            e[(i1 * db + i2, j1 * db + j2)] += t[(i1, j1)] * b[(i2, j2)].conj();
                        }
                    }
                }
            }
        }
        Some(e)
    }

    /// Dense matrix of the bra-side action (the transpose of `dense` in the
    /// environment layout), used only as an eigensolver fallback.
    fn dense_bra(&self) -> Option<CMat> {
        let (dt, db) = self.dims();
        if dt * db > DENSE_EIG_LIMIT {
            return None;
        }
        let mut e = CMat::zeros(dt * db, dt * db);
        for x in 0..self.top.num_symbols() {
            let t = self.top.matrix(x);
            let b = self.bottom.matrix(x);
            // out[k2,k1] = Σ conj(B[j2,k2]) G[j2,j1] T[j1,k1]
            for k2 in 0..db {
                for k1 in 0..dt {
                    for j2 in 0..db {
                        for j1 in 0..dt {
                            e[(k2 * dt + k1, j2 * dt + j1)] += b[(j2, k2)].conj() * t[(j1, k1)];
                        }
                    }
                }
            }
        }
        Some(e)
    }
}

struct KetOp<'a, 'b>(&'b TransferMatrix<'a>);

impl LinOp for KetOp<'_, '_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, v: &CVec) -> CVec {
        let (dt, db) = self.0.dims();
        mat_to_vec(&self.0.apply_ket(&vec_to_mat(v, dt, db)))
    }
}

struct BraOp<'a, 'b>(&'b TransferMatrix<'a>);

impl LinOp for BraOp<'_, '_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, v: &CVec) -> CVec {
        let (dt, db) = self.0.dims();
        mat_to_vec(&self.0.apply_bra(&vec_to_mat(v, db, dt)))
    }
}

pub(crate) fn mat_to_vec(m: &CMat) -> CVec {
    CVec::from_fn(m.nrows() * m.ncols(), |i, _| {
        m[(i / m.ncols(), i % m.ncols())]
    })
}

pub(crate) fn vec_to_mat(v: &CVec, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |r, c| v[r * cols + c])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Leading eigenpair of a transfer matrix, reshaped to its environment matrix.
#[derive(Clone, Debug)]
pub struct TransferEig {
    pub value: C64,
    /// `d_top×d_bottom` for `Side::Right`, `d_bottom×d_top` for `Side::Left`.
    pub matrix: CMat,
    pub subleading: Option<C64>,
    pub residual: f64,
    /// Relative gap `(|μ0|−|μ1|)/|μ0|` fell below [`DEGENERACY_GAP`]; the
    /// input violates injectivity and downstream results carry this flag.
    pub degenerate: bool,
}

/// Leading eigenpair of `E`, by restarted Arnoldi iteration with a dense
/// fallback for small problems.
pub fn leading_eig(e: &TransferMatrix<'_>, side: Side) -> Result<TransferEig> {
    leading_eig_opts(e, side, &EigOptions::default())
}

pub fn leading_eig_opts(
    e: &TransferMatrix<'_>,
    side: Side,
    opts: &EigOptions,
) -> Result<TransferEig> {
    let (dt, db) = e.dims();
    let mut opts = opts.clone();
    if opts.start.is_none() && dt == db {
        // the identity environment always overlaps the dominant eigenmatrix
        // of an unmixed transfer map
        opts.start = Some(mat_to_vec(&CMat::identity(dt, db)));
    }
    let lead = match side {
        Side::Right => arnoldi_leading(&KetOp(e), &opts),
        Side::Left => arnoldi_leading(&BraOp(e), &opts),
    };
    let lead = if lead.converged {
        lead
    } else {
        let dense = match side {
            Side::Right => e.dense(),
            Side::Left => e.dense_bra(),
        };
        match dense.as_ref().and_then(|m| dense_leading(m)) {
            Some(d) => d,
            None => {
                return Err(Error::Convergence {
                    applies: lead.applies,
                    residual: lead.residual,
                })
            }
        }
    };
    let (rows, cols) = match side {
        Side::Right => (dt, db),
        Side::Left => (db, dt),
    };
    let mut matrix = vec_to_mat(&lead.vector, rows, cols);
    crate::linalg::phase_fix(&mut matrix);
    let degenerate = match lead.subleading {
        Some(mu1) if lead.value.norm() > 0.0 => {
            (lead.value.norm() - mu1.norm()) / lead.value.norm() < DEGENERACY_GAP
        }
        _ => false,
    };
    Ok(TransferEig {
        value: lead.value,
        matrix,
        subleading: lead.subleading,
        residual: lead.residual,
        degenerate,
    })
}

/// Rescale so the transfer matrix has unit leading eigenvalue. Returns the
/// scaled tensor and the original eigenvalue.
pub fn normalize(a: &SiteTensor) -> Result<(SiteTensor, C64)> {
    let e = transfer_matrix(a);
    let eig = leading_eig(&e, Side::Right)?;
    let eta = eig.value;
    if eta.norm() < 1e-300 {
        return Err(Error::InvalidState(
            "transfer matrix has zero leading eigenvalue".into(),
        ));
    }
    Ok((a.scaled(cr(1.0 / eta.norm().sqrt())), eta))
}

// ---------------------------------------------------------------------------
// Canonical forms
// ---------------------------------------------------------------------------

/// Schmidt spectrum across a bond: eigenvalues of the memory steady state,
/// non-negative, sorted in decreasing order, summing to one.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchmidtSpectrum {
    values: Vec<f64>,
}

impl SchmidtSpectrum {
    pub fn new(mut values: Vec<f64>) -> Self {
        for v in values.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        values.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let s: f64 = values.iter().sum();
        if s > 0.0 {
            for v in values.iter_mut() {
                *v /= s;
            }
        }
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `H(λ)` in bits.
    pub fn entropy(&self) -> f64 {
        entropy_bits(&self.values)
    }
}

#[derive(Clone, Debug)]
pub struct CanonicalOptions {
    /// Gauge-factor singular values below `rank_tol` (relative to the largest)
    /// are dropped, shrinking the effective bond dimension.
    pub rank_tol: f64,
    pub eig: EigOptions,
}

impl Default for CanonicalOptions {
    fn default() -> Self {
        Self {
            rank_tol: 1e-12,
            eig: EigOptions::default(),
        }
    }
}

/// Left/right canonical forms, mixed gauge, and Schmidt spectrum of an iMPS.
///
/// Canonical tensors are stored in factored form — `A_l^x = L_l · A^x · R_l`
/// against the normalized source tensor — so large sparse tensors never have
/// to be materialized densely. The accessors build dense tensors on demand.
#[derive(Clone, Debug)]
pub struct CanonicalBundle {
    source: SiteTensor,
    lcan_left: CMat,
    lcan_right: CMat,
    rcan_left: CMat,
    rcan_right: CMat,
    c: CMat,
    c_scale: f64,
    spectrum: SchmidtSpectrum,
    pub degenerate: bool,
    pub rank_reduced: bool,
    pub original_dim: usize,
}

impl CanonicalBundle {
    pub fn effective_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Normalized source tensor (original gauge, original bond dimension).
    pub fn source(&self) -> &SiteTensor {
        &self.source
    }

    /// Left-canonical tensor, materialized densely.
    pub fn a_l(&self) -> SiteTensor {
        self.sandwich(&self.lcan_left, &self.lcan_right)
    }

    /// Right-canonical tensor, materialized densely.
    pub fn a_r(&self) -> SiteTensor {
        self.sandwich(&self.rcan_left, &self.rcan_right)
    }

    /// Center-site tensors `A_c^x = A_l^x C = C A_r^x`.
    pub fn a_c(&self) -> Vec<CMat> {
        let scale = cr(1.0 / self.c_scale);
        (0..self.source.num_symbols())
            .map(|x| (self.source.rmul(x, &self.lcan_left) * &self.rcan_right) * scale)
            .collect()
    }

    /// `A_c^x = (left · A^x · right) / scale` in factored form.
    pub(crate) fn ac_factors(&self) -> (&CMat, &CMat, f64) {
        (&self.lcan_left, &self.rcan_right, self.c_scale)
    }

    pub(crate) fn lcan_factors(&self) -> (&CMat, &CMat) {
        (&self.lcan_left, &self.lcan_right)
    }

    pub(crate) fn rcan_factors(&self) -> (&CMat, &CMat) {
        (&self.rcan_left, &self.rcan_right)
    }

    fn sandwich(&self, left: &CMat, right: &CMat) -> SiteTensor {
        let mats = (0..self.source.num_symbols())
            .map(|x| self.source.rmul(x, left) * right)
            .collect();
        SiteTensor::new(self.source.symbols().to_vec(), mats)
            .expect("sandwiched tensor is well formed")
    }

    /// Bond matrix with `‖C‖_F = 1`.
    pub fn c(&self) -> &CMat {
        &self.c
    }

    /// Memory steady state of the left-canonical channel, `ρ = C C†`.
    pub fn rho(&self) -> CMat {
        &self.c * self.c.adjoint()
    }

    pub fn spectrum(&self) -> &SchmidtSpectrum {
        &self.spectrum
    }

    /// `(C_q, D_q)`: entropy of the Schmidt spectrum and log2 of the
    /// effective memory dimension, both in (qu)bits.
    pub fn memory_costs(&self) -> (f64, f64) {
        (self.spectrum.entropy(), (self.effective_dim() as f64).log2())
    }
}

/// `(C_q, D_q)` of a canonicalized iMPS.
pub fn memory_costs(bundle: &CanonicalBundle) -> (f64, f64) {
    bundle.memory_costs()
}

/// Bring an iMPS into canonical form: normalize, drop linearly-dependent
/// directions, compute gauge factors `W_l, W_r`, canonical tensors, mixed
/// gauge `{A_c, C}`, and the Schmidt spectrum.
pub fn canonicalize(a: &SiteTensor) -> Result<CanonicalBundle> {
    canonicalize_opts(a, &CanonicalOptions::default())
}

pub fn canonicalize_opts(a: &SiteTensor, opts: &CanonicalOptions) -> Result<CanonicalBundle> {
    let original_dim = a.bond_dim();
    let mut source = a.clone();
    // accumulated reduction sandwich: current = m_left · source · m_right
    let mut m_left = CMat::identity(original_dim, original_dim);
    let mut m_right = CMat::identity(original_dim, original_dim);
    let mut reduced_dim = original_dim;
    let mut rank_reduced = false;
    let mut degenerate = false;

    for _round in 0..4 {
        // leading eigenpairs of the (possibly reduced) transfer matrix
        let current = ReducedTensor {
            source: &source,
            left: &m_left,
            right: &m_right,
        };
        let (eta, v_r, v_l, degen) = current.fixed_points(opts)?;
        degenerate |= degen;
        if eta.norm() < 1e-300 {
            return Err(Error::InvalidState(
                "transfer matrix has zero leading eigenvalue".into(),
            ));
        }
        // fold normalization into the source so sandwiches stay exact
        source = source.scaled(cr(1.0 / eta.norm().sqrt()));

        let v_l = hermitize(&v_l);
        let v_r = hermitize(&v_r);
        let el = hermitian_eigen_desc(&v_l);
        let er = hermitian_eigen_desc(&v_r);
        let keep = |vals: &[f64]| -> usize {
            let top = vals[0].max(0.0).sqrt();
            vals.iter()
                .filter(|&&v| v > 0.0 && v.sqrt() > opts.rank_tol * top)
                .count()
        };
        let kl = keep(&el.values).max(1);
        let kr = keep(&er.values).max(1);
        if kl < reduced_dim {
            rank_reduced = true;
            let (w, w_inv) = gauge_factors(&el, kl);
            m_left = &w * &m_left;
            m_right = &m_right * &w_inv;
            reduced_dim = kl;
            continue;
        }
        if kr < reduced_dim {
            rank_reduced = true;
            // right reduction: current ← W_r⁻¹ · current · W_r
            let (w_r, w_r_inv) = right_gauge_factors(&er, kr);
            m_left = &w_r_inv * &m_left;
            m_right = &m_right * &w_r;
            reduced_dim = kr;
            continue;
        }

        // full rank: assemble gauges
        let (w_l, w_l_inv) = gauge_factors(&el, reduced_dim);
        let (w_r, w_r_inv) = right_gauge_factors(&er, reduced_dim);

        let c_raw = &w_l * &w_r;
        let c_scale = frob(&c_raw);
        if c_scale < 1e-300 {
            return Err(Error::InvalidState("bond matrix vanished".into()));
        }
        let c = c_raw.unscale(c_scale);
        let svd = c.clone().svd(false, false);
        let spectrum =
            SchmidtSpectrum::new(svd.singular_values.iter().map(|&s| s * s).collect());

        return Ok(CanonicalBundle {
            lcan_left: &w_l * &m_left,
            lcan_right: &m_right * &w_l_inv,
            rcan_left: &w_r_inv * &m_left,
            rcan_right: &m_right * &w_r,
            c,
            c_scale,
            spectrum,
            degenerate,
            rank_reduced,
            original_dim,
            source,
        });
    }
    Err(Error::Numerical(
        "rank reduction did not stabilize after 4 rounds".into(),
    ))
}

/// `W_l = D^{1/2} U†` (rows restricted to `keep`) and its pseudo-inverse
/// `W_l⁺ = U D^{-1/2}`, from a Hermitian eigendecomposition, so that
/// `W_l† W_l = V_l` on the kept subspace.
fn gauge_factors(eig: &crate::linalg::HermEig, keep: usize) -> (CMat, CMat) {
    let d_sqrt = CMat::from_diagonal(&CVec::from_iterator(
        keep,
        eig.values[..keep].iter().map(|&v| cr(v.max(0.0).sqrt())),
    ));
    let d_isqrt = CMat::from_diagonal(&CVec::from_iterator(
        keep,
        eig.values[..keep].iter().map(|&v| cr(1.0 / v.max(1e-300).sqrt())),
    ));
    let u = eig.vectors.columns(0, keep);
    (&d_sqrt * u.adjoint(), u * &d_isqrt)
}

/// `W_r = U D^{1/2}` and `W_r⁻¹ = D^{-1/2} U†`, so that `W_r W_r† = V_r`.
fn right_gauge_factors(eig: &crate::linalg::HermEig, keep: usize) -> (CMat, CMat) {
    let d_sqrt = CMat::from_diagonal(&CVec::from_iterator(
        keep,
        eig.values[..keep].iter().map(|&v| cr(v.max(0.0).sqrt())),
    ));
    let d_isqrt = CMat::from_diagonal(&CVec::from_iterator(
        keep,
        eig.values[..keep].iter().map(|&v| cr(1.0 / v.max(1e-300).sqrt())),
    ));
    let u = eig.vectors.columns(0, keep);
    (u * &d_sqrt, &d_isqrt * u.adjoint())
}

/// Reduced view `m_left · A · m_right` used during canonicalization.
struct ReducedTensor<'a> {
    source: &'a SiteTensor,
    left: &'a CMat,
    right: &'a CMat,
}

impl ReducedTensor<'_> {
    fn dim(&self) -> usize {
        self.left.nrows()
    }

    fn apply_ket(&self, v: &CMat) -> CMat {
        // Σ (L A R) V (L A R)†
        let mut out = CMat::zeros(self.dim(), self.dim());
        let rv = self.right * v * self.right.adjoint();
        for x in 0..self.source.num_symbols() {
            let t = self.source.rmul_dag(x, &self.source.lmul(x, &rv));
            out += self.left * t * self.left.adjoint();
        }
        out
    }

    fn apply_bra(&self, g: &CMat) -> CMat {
        // Σ (L A R)† G (L A R)
        let mut out = CMat::zeros(self.dim(), self.dim());
        let lg = self.left.adjoint() * g * self.left;
        for x in 0..self.source.num_symbols() {
            let t = self.source.rmul(x, &self.source.lmul_dag(x, &lg));
            out += self.right.adjoint() * t * self.right;
        }
        out
    }

    fn fixed_points(&self, opts: &CanonicalOptions) -> Result<(C64, CMat, CMat, bool)> {
        struct Ket<'b>(&'b ReducedTensor<'b>);
        impl LinOp for Ket<'_> {
            fn dim(&self) -> usize {
                self.0.dim() * self.0.dim()
            }
            fn apply(&self, v: &CVec) -> CVec {
                let d = self.0.dim();
                mat_to_vec(&self.0.apply_ket(&vec_to_mat(v, d, d)))
            }
        }
        struct Bra<'b>(&'b ReducedTensor<'b>);
        impl LinOp for Bra<'_> {
            fn dim(&self) -> usize {
                self.0.dim() * self.0.dim()
            }
            fn apply(&self, v: &CVec) -> CVec {
                let d = self.0.dim();
                mat_to_vec(&self.0.apply_bra(&vec_to_mat(v, d, d)))
            }
        }
        let d = self.dim();
        let mut eo = opts.eig.clone();
        eo.start = Some(mat_to_vec(&CMat::identity(d, d)));
        let ket = arnoldi_leading(&Ket(self), &eo);
        let ket = if ket.converged {
            ket
        } else {
            return Err(Error::Convergence {
                applies: ket.applies,
                residual: ket.residual,
            });
        };
        let bra = arnoldi_leading(&Bra(self), &eo);
        let bra = if bra.converged {
            bra
        } else {
            return Err(Error::Convergence {
                applies: bra.applies,
                residual: bra.residual,
            });
        };
        let degen = [&ket, &bra].iter().any(|e| match e.subleading {
            Some(mu1) if e.value.norm() > 0.0 => {
                (e.value.norm() - mu1.norm()) / e.value.norm() < DEGENERACY_GAP
            }
            _ => false,
        });
        let eta = ket.value;
        Ok((
            eta,
            vec_to_mat(&ket.vector, d, d),
            vec_to_mat(&bra.vector, d, d),
            degen,
        ))
    }
}

// ---------------------------------------------------------------------------
// Finite q-samples
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Stationary process: amplitudes are the square roots of the Born-rule
    /// sequence probabilities of the generated process.
    Steady,
    /// Conditional on an initial memory basis state (meaningful for tensors
    /// built from unifilar models, where it reproduces `√P(x_{0:L}|j)`).
    State(usize),
}

/// Amplitudes of an `L`-step q-sample, indexed by the base-`|X|` expansion of
/// the sequence with `x_0` as the most significant digit.
#[derive(Clone, Debug)]
pub struct FiniteQsample {
    pub symbols: Vec<String>,
    pub length: usize,
    pub amplitudes: Vec<C64>,
}

impl FiniteQsample {
    pub fn index(&self, seq: &[usize]) -> usize {
        let base = self.symbols.len();
        seq.iter().fold(0, |acc, &x| acc * base + x)
    }

    pub fn amplitude(&self, seq: &[usize]) -> C64 {
        self.amplitudes[self.index(seq)]
    }

    pub fn probability_sum(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }
}

const QSAMPLE_LIMIT: f64 = 1e7;

/// Amplitudes of the `L`-step q-sample by explicit contraction.
pub fn finite_qsample(a: &SiteTensor, length: usize, boundary: Boundary) -> Result<FiniteQsample> {
    let nx = a.num_symbols();
    let total = (nx as f64).powi(length as i32);
    if total > QSAMPLE_LIMIT {
        return Err(Error::Resource(format!(
            "|X|^L = {total:.3e} exceeds the brute-force limit {QSAMPLE_LIMIT:.0e}"
        )));
    }
    let total = total as usize;
    let mut amplitudes = vec![C64::new(0.0, 0.0); total];
    match boundary {
        Boundary::State(j) => {
            let d = a.bond_dim();
            if j >= d {
                return Err(Error::Precondition(format!(
                    "boundary state {j} out of range for bond dimension {d}"
                )));
            }
            let mut v0 = CMat::zeros(d, 1);
            v0[(j, 0)] = cr(1.0);
            let mut stack: Vec<(usize, usize, CMat)> = vec![(0, 0, v0)];
            while let Some((depth, prefix, v)) = stack.pop() {
                if depth == length {
                    amplitudes[prefix] = v.column(0).iter().sum();
                    continue;
                }
                for x in (0..nx).rev() {
                    stack.push((depth + 1, prefix * nx + x, a.lmul(x, &v)));
                }
            }
        }
        Boundary::Steady => {
            let bundle = canonicalize(a)?;
            let a_l = bundle.a_l();
            let rho = bundle.rho();
            let er = hermitian_eigen_desc(&rho);
            let d = bundle.effective_dim();
            let sqrt_rho = {
                let ds = CMat::from_diagonal(&CVec::from_iterator(
                    d,
                    er.values.iter().map(|&v| cr(v.max(0.0).sqrt())),
                ));
                &er.vectors * ds * er.vectors.adjoint()
            };
            let mut stack: Vec<(usize, usize, CMat)> = vec![(0, 0, sqrt_rho)];
            while let Some((depth, prefix, m)) = stack.pop() {
                if depth == length {
                    amplitudes[prefix] = cr(frob(&m));
                    continue;
                }
                for x in (0..nx).rev() {
                    stack.push((depth + 1, prefix * nx + x, a_l.lmul(x, &m)));
                }
            }
        }
    }
    Ok(FiniteQsample {
        symbols: a.symbols().to_vec(),
        length,
        amplitudes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseOp;
    use crate::testutil::{coin_tensor, golden_mean_tensor};

    #[test]
    fn transfer_of_coin_is_unit_scalar() {
        for p in [0.5, 0.3] {
            let a = coin_tensor(p);
            let e = transfer_matrix(&a).dense().unwrap();
            assert_eq!(e.nrows(), 1);
            assert!((e[(0, 0)] - cr(1.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn dense_transfer_matches_bruteforce_summation() {
        // independent oracle: elementwise Kronecker accumulation
        let a = golden_mean_tensor();
        let e = transfer_matrix(&a).dense().unwrap();
        let mats = a.to_matrices();
        let mut oracle = CMat::zeros(4, 4);
        for m in &mats {
            for i1 in 0..2 {
                for i2 in 0..2 {
                    for j1 in 0..2 {
                        for j2 in 0..2 {
                            oracle[(i1 * 2 + i2, j1 * 2 + j2)] +=
                                m[(i1, j1)] * m[(i2, j2)].conj();
                        }
                    }
                }
            }
        }
        assert!(frob(&(&e - &oracle)) < 1e-14);
    }

    #[test]
    fn matfree_and_dense_transfer_agree() {
        let a = random_site_tensor(3, 2, 42);
        let e = transfer_matrix(&a);
        let dense = e.dense().unwrap();
        let mut rng = seeded_rng(7);
        let v = ginibre(9, 1, &mut rng);
        let vv = CVec::from_iterator(9, v.iter().cloned());
        let lhs = KetOp(&e).apply(&vv);
        let rhs = &dense * &vv;
        assert!((lhs - rhs).norm() < 1e-12);
        let lhs_b = BraOp(&e).apply(&vv);
        let rhs_b = e.dense_bra().unwrap() * &vv;
        assert!((lhs_b - rhs_b).norm() < 1e-12);
    }

    #[test]
    fn leading_eig_of_golden_mean_is_one_and_matches_dense_oracle() {
        let a = golden_mean_tensor();
        let e = transfer_matrix(&a);
        let eig = leading_eig(&e, Side::Left).unwrap();
        assert!((eig.value - cr(1.0)).norm() < 1e-10);
        let dense = e.dense_bra().unwrap();
        let oracle = dense_leading(&dense).unwrap();
        assert!((eig.value - oracle.value).norm() < 1e-10);
        // eigenmatrices agree up to phase
        let v1 = mat_to_vec(&eig.matrix).normalize();
        let mut m2 = vec_to_mat(&oracle.vector, 2, 2);
        crate::linalg::phase_fix(&mut m2);
        let v2 = mat_to_vec(&m2).normalize();
        assert!((&v1 - &v2).norm() < 1e-8 || (&v1 + &v2).norm() < 1e-8);
    }

    #[test]
    fn leading_eig_of_random_imps_matches_dense_oracle() {
        let a = random_site_tensor(3, 2, 11);
        let e = transfer_matrix(&a);
        let eig = leading_eig(&e, Side::Right).unwrap();
        assert!((eig.value.norm() - 1.0).abs() < 1e-10, "normalized tensor");
        let oracle = dense_leading(&e.dense().unwrap()).unwrap();
        assert!((eig.value - oracle.value).norm() < 1e-10);
    }

    #[test]
    fn canonical_bundle_satisfies_completeness_and_gauge_consistency() {
        for seed in [1u64, 2, 3] {
            let a = random_site_tensor(4, 3, seed);
            let b = canonicalize(&a).unwrap();
            let d = b.effective_dim();
            let id = CMat::identity(d, d);
            let a_l = b.a_l().to_matrices();
            let a_r = b.a_r().to_matrices();
            let mut sl = CMat::zeros(d, d);
            let mut sr = CMat::zeros(d, d);
            for x in 0..a_l.len() {
                sl += a_l[x].adjoint() * &a_l[x];
                sr += &a_r[x] * a_r[x].adjoint();
            }
            assert!(frob(&(&sl - &id)) < 1e-10, "left completeness, seed {seed}");
            assert!(frob(&(&sr - &id)) < 1e-10, "right completeness, seed {seed}");
            // A_c = A_l C = C A_r
            let a_c = b.a_c();
            for x in 0..a_c.len() {
                let alc = &a_l[x] * b.c();
                let car = b.c() * &a_r[x];
                assert!(frob(&(&a_c[x] - &alc)) < 1e-10);
                assert!(frob(&(&a_c[x] - &car)) < 1e-10);
            }
        }
    }

    #[test]
    fn coin_canonicalizes_trivially() {
        let b = canonicalize(&coin_tensor(0.5)).unwrap();
        assert_eq!(b.effective_dim(), 1);
        assert!((b.spectrum().values()[0] - 1.0).abs() < 1e-12);
        let (cq, dq) = b.memory_costs();
        assert!(cq.abs() < 1e-12 && dq.abs() < 1e-12);
    }

    #[test]
    fn golden_mean_spectrum_matches_fixed_point_oracle() {
        // oracle: dense fixed point of the left-canonical channel
        let b = canonicalize(&golden_mean_tensor()).unwrap();
        assert_eq!(b.effective_dim(), 2);
        let s: f64 = b.spectrum().values().iter().sum();
        assert!((s - 1.0).abs() < 1e-10);
        let a_l = b.a_l().to_matrices();
        let mut chan = CMat::zeros(4, 4);
        for m in &a_l {
            for i1 in 0..2 {
                for i2 in 0..2 {
                    for j1 in 0..2 {
                        for j2 in 0..2 {
                            chan[(i1 * 2 + i2, j1 * 2 + j2)] += m[(i1, j1)] * m[(i2, j2)].conj();
                        }
                    }
                }
            }
        }
        let fp = dense_leading(&chan).unwrap();
        let mut rho = vec_to_mat(&fp.vector, 2, 2);
        rho = hermitize(&rho);
        rho = rho.clone().unscale(rho.trace().re);
        let he = hermitian_eigen_desc(&rho);
        for (a, b2) in b.spectrum().values().iter().zip(he.values.iter()) {
            assert!((a - b2).abs() < 1e-9);
        }
    }

    #[test]
    fn spectrum_entropy_matches_steady_state_entropy() {
        let a = random_site_tensor(4, 2, 23);
        let b = canonicalize(&a).unwrap();
        let rho = b.rho();
        let he = hermitian_eigen_desc(&rho);
        let h_rho = entropy_bits(&he.values.iter().map(|&v| v.max(0.0)).collect::<Vec<_>>());
        assert!((b.spectrum().entropy() - h_rho).abs() < 1e-8);
    }

    #[test]
    fn canonicalization_is_idempotent_on_spectrum() {
        let a = random_site_tensor(4, 3, 31);
        let b1 = canonicalize(&a).unwrap();
        let b2 = canonicalize(&b1.a_l()).unwrap();
        assert_eq!(b1.effective_dim(), b2.effective_dim());
        for (x, y) in b1.spectrum().values().iter().zip(b2.spectrum().values()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn memory_cost_entropy_bounded_by_dimension() {
        let a = random_site_tensor(5, 2, 77);
        let b = canonicalize(&a).unwrap();
        let (cq, dq) = b.memory_costs();
        assert!(cq <= dq + 1e-9);
    }

    #[test]
    fn finite_qsample_coin_is_uniform() {
        let q = finite_qsample(&coin_tensor(0.5), 2, Boundary::State(0)).unwrap();
        for a in &q.amplitudes {
            assert!((a - cr(0.5)).norm() < 1e-12);
        }
        assert!((q.probability_sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn finite_qsample_golden_mean_forbids_11() {
        let q = finite_qsample(&golden_mean_tensor(), 2, Boundary::State(0)).unwrap();
        assert!(q.amplitude(&[1, 1]).norm() < 1e-15, "word 11 is forbidden");
        assert!((q.probability_sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn finite_qsample_matches_per_sequence_oracle() {
        let a = random_site_tensor(3, 2, 5);
        let q = finite_qsample(&a, 5, Boundary::Steady).unwrap();
        assert!((q.probability_sum() - 1.0).abs() < 1e-9);
        // oracle: independent per-sequence multiplication against ρ
        let b = canonicalize(&a).unwrap();
        let a_l = b.a_l().to_matrices();
        let rho = b.rho();
        for seq_idx in [0usize, 7, 13, 31] {
            let mut seq = Vec::new();
            let mut rem = seq_idx;
            for _ in 0..5 {
                seq.push(rem % 2);
                rem /= 2;
            }
            seq.reverse();
            let mut prod = CMat::identity(b.effective_dim(), b.effective_dim());
            for &x in &seq {
                prod = &a_l[x] * prod;
            }
            let born = (&prod * &rho * prod.adjoint()).trace().re;
            let amp = q.amplitude(&seq).norm();
            assert!((amp * amp - born).abs() < 1e-10);
        }
    }

    #[test]
    fn finite_qsample_rejects_oversized_requests() {
        let a = coin_tensor(0.5);
        assert!(matches!(
            finite_qsample(&a, 64, Boundary::Steady),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn sparse_and_dense_primitives_agree() {
        let entries = vec![
            vec![(0u32, 0u32, cr(0.7)), (1, 2, cr(0.4))],
            vec![(2u32, 1u32, cr(0.9)), (0, 2, C64::new(0.1, 0.2))],
        ];
        let sp = SiteTensor::from_sparse(vec!["a".into(), "b".into()], 3, entries).unwrap();
        let de = SiteTensor::new(sp.symbols().to_vec(), sp.to_matrices()).unwrap();
        let mut rng = seeded_rng(3);
        let m = ginibre(3, 3, &mut rng);
        for x in 0..2 {
            assert!(frob(&(sp.lmul(x, &m) - de.lmul(x, &m))) < 1e-14);
            assert!(frob(&(sp.rmul(x, &m) - de.rmul(x, &m))) < 1e-14);
            assert!(frob(&(sp.rmul_dag(x, &m) - de.rmul_dag(x, &m))) < 1e-14);
            assert!(frob(&(sp.lmul_dag(x, &m) - de.lmul_dag(x, &m))) < 1e-14);
        }
    }

    #[test]
    fn site_tensor_json_roundtrip_is_bit_faithful() {
        let a = random_site_tensor(3, 2, 99);
        let v = a.to_json();
        let s = serde_json::to_string(&v).unwrap();
        let back = SiteTensor::from_json(&serde_json::from_str(&s).unwrap()).unwrap();
        for x in 0..a.num_symbols() {
            let ma = a.matrix(x);
            let mb = back.matrix(x);
            for (za, zb) in ma.iter().zip(mb.iter()) {
                assert_eq!(za.re.to_bits(), zb.re.to_bits());
                assert_eq!(za.im.to_bits(), zb.im.to_bits());
            }
        }
    }

    #[test]
    fn arnoldi_agrees_with_power_iteration_route() {
        let a = random_site_tensor(3, 3, 55);
        let e = transfer_matrix(&a);
        let dense = e.dense().unwrap();
        let arn = leading_eig(&e, Side::Right).unwrap();
        let pow = crate::linalg::power_leading(&DenseOp(&dense), &EigOptions::default());
        assert!(pow.converged);
        assert!((arn.value - pow.value).norm() < 1e-9);
    }
}
