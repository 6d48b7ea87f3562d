//! Unifilar classical generators and their q-sample iMPS representations,
//! including the two built-in process families: cyclic random walks and
//! Dyson-Ising spin chains.

use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::imps::SiteTensor;
use crate::linalg::{cr, seeded_rng, CMat};

const ROW_SUM_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;

/// Finite-state classical generator with deterministic memory update.
///
/// `emit[j][x]` is `P(x|j)`; `next[j][x]` the updated state after emitting
/// `x` from state `j`, defined wherever `P(x|j) > 0`.
#[derive(Clone, Debug)]
pub struct UnifilarModel {
    alphabet: Vec<String>,
    emit: Vec<Vec<f64>>,
    next: Vec<Vec<Option<usize>>>,
    stationary: Vec<f64>,
}

impl UnifilarModel {
    pub fn new(
        alphabet: Vec<String>,
        emit: Vec<Vec<f64>>,
        next: Vec<Vec<Option<usize>>>,
    ) -> Result<Self> {
        let stationary = stationary_distribution(&emit, &next)?;
        Self::with_stationary(alphabet, emit, next, stationary)
    }

    pub fn with_stationary(
        alphabet: Vec<String>,
        emit: Vec<Vec<f64>>,
        next: Vec<Vec<Option<usize>>>,
        stationary: Vec<f64>,
    ) -> Result<Self> {
        let d = emit.len();
        let nx = alphabet.len();
        if d == 0 || nx == 0 {
            return Err(Error::Structure("model needs states and symbols".into()));
        }
        if next.len() != d || stationary.len() != d {
            return Err(Error::Structure("field lengths disagree".into()));
        }
        for j in 0..d {
            if emit[j].len() != nx || next[j].len() != nx {
                return Err(Error::Structure("row lengths disagree".into()));
            }
            let s: f64 = emit[j].iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Structure(format!(
                    "emission row {j} sums to {s}, not 1"
                )));
            }
            for x in 0..nx {
                if emit[j][x] < 0.0 {
                    return Err(Error::Structure("negative emission probability".into()));
                }
                match next[j][x] {
                    Some(k) if k >= d => {
                        return Err(Error::Structure(format!("next({x},{j}) out of range")))
                    }
                    None if emit[j][x] > 0.0 => {
                        return Err(Error::Structure(format!(
                            "next({x},{j}) undefined on support"
                        )))
                    }
                    _ => {}
                }
            }
        }
        let ps: f64 = stationary.iter().sum();
        if (ps - 1.0).abs() > STATIONARY_TOL || stationary.iter().any(|&p| p < -1e-15) {
            return Err(Error::Structure("stationary distribution invalid".into()));
        }
        // fixed-point check of the induced state chain
        let mut image = vec![0.0; d];
        for j in 0..d {
            for x in 0..nx {
                if emit[j][x] > 0.0 {
                    image[next[j][x].unwrap()] += stationary[j] * emit[j][x];
                }
            }
        }
        for j in 0..d {
            if (image[j] - stationary[j]).abs() > STATIONARY_TOL {
                return Err(Error::Structure(
                    "stationary distribution is not a fixed point".into(),
                ));
            }
        }
        Ok(Self {
            alphabet,
            emit,
            next,
            stationary,
        })
    }

    /// I.i.d. binary process emitting `0` with probability `p`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain("probability outside [0,1]".into()));
        }
        Self::new(
            vec!["0".into(), "1".into()],
            vec![vec![p, 1.0 - p]],
            vec![vec![Some(0), Some(0)]],
        )
    }

    pub fn num_states(&self) -> usize {
        self.emit.len()
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn num_symbols(&self) -> usize {
        self.alphabet.len()
    }

    /// `P(x|j)`
    pub fn emit(&self, j: usize, x: usize) -> f64 {
        self.emit[j][x]
    }

    /// `λ(x,j)`
    pub fn next(&self, j: usize, x: usize) -> Option<usize> {
        self.next[j][x]
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Probability of a sequence under the stationary process.
    pub fn sequence_probability(&self, seq: &[usize]) -> f64 {
        let mut total = 0.0;
        for j0 in 0..self.num_states() {
            let mut p = self.stationary[j0];
            let mut j = j0;
            for &x in seq {
                if p == 0.0 {
                    break;
                }
                p *= self.emit[j][x];
                if p == 0.0 {
                    break;
                }
                j = self.next[j][x].expect("next defined on support");
            }
            total += p;
        }
        total
    }

    pub fn to_json(&self) -> serde_json::Value {
        let next: Vec<Vec<i64>> = self
            .next
            .iter()
            .map(|row| row.iter().map(|k| k.map_or(-1, |k| k as i64)).collect())
            .collect();
        serde_json::json!({
            "states": self.num_states(),
            "alphabet": self.alphabet,
            "emit": self.emit,
            "next": next,
            "stationary": self.stationary,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct ModelJson {
            states: usize,
            alphabet: Vec<String>,
            emit: Vec<Vec<f64>>,
            next: Vec<Vec<i64>>,
            stationary: Option<Vec<f64>>,
        }
        let js: ModelJson = serde_json::from_value(v.clone())?;
        if js.emit.len() != js.states {
            return Err(Error::Structure("states field disagrees with emit".into()));
        }
        let next: Vec<Vec<Option<usize>>> = js
            .next
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&k| if k < 0 { None } else { Some(k as usize) })
                    .collect()
            })
            .collect();
        match js.stationary {
            Some(pi) => Self::with_stationary(js.alphabet, js.emit, next, pi),
            None => Self::new(js.alphabet, js.emit, next),
        }
    }
}

/// Stationary distribution of the induced state chain by power iteration.
fn stationary_distribution(
    emit: &[Vec<f64>],
    next: &[Vec<Option<usize>>],
) -> Result<Vec<f64>> {
    let d = emit.len();
    if d == 0 {
        return Err(Error::Structure("empty model".into()));
    }
    let mut pi = vec![1.0 / d as f64; d];
    for _ in 0..1_000_000 {
        let mut out = vec![0.0; d];
        for j in 0..d {
            if pi[j] == 0.0 {
                continue;
            }
            for (x, &p) in emit[j].iter().enumerate() {
                if p > 0.0 {
                    let k = next[j][x].ok_or_else(|| {
                        Error::Structure(format!("next({x},{j}) undefined on support"))
                    })?;
                    out[k] += pi[j] * p;
                }
            }
        }
        let s: f64 = out.iter().sum();
        for v in out.iter_mut() {
            *v /= s;
        }
        let diff = out
            .iter()
            .zip(pi.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        pi = out;
        if diff < 1e-15 {
            return Ok(pi);
        }
    }
    Err(Error::Convergence {
        applies: 1_000_000,
        residual: f64::NAN,
    })
}

// ---------------------------------------------------------------------------
// q-sample construction (zero phases)
// ---------------------------------------------------------------------------

/// Threshold above which q-sample tensors use the sparse representation.
const SPARSE_DIM: usize = 16;

/// Site matrices of the q-sample of a unifilar model:
/// `A^x_{kj} = √P(x|j) · [λ(x,j)=k]`, all phases zero.
pub fn qsample_imps(m: &UnifilarModel) -> SiteTensor {
    let d = m.num_states();
    let nx = m.num_symbols();
    let mut entries: Vec<Vec<(u32, u32, C64)>> = vec![Vec::new(); nx];
    for j in 0..d {
        for x in 0..nx {
            let p = m.emit(j, x);
            if p > 0.0 {
                let k = m.next(j, x).expect("next defined on support");
                entries[x].push((k as u32, j as u32, cr(p.sqrt())));
            }
        }
    }
    if d >= SPARSE_DIM {
        SiteTensor::from_sparse(m.alphabet().to_vec(), d, entries)
            .expect("q-sample tensor is well formed")
    } else {
        let mats = entries
            .iter()
            .map(|es| {
                let mut mat = CMat::zeros(d, d);
                for &(k, j, w) in es {
                    mat[(k as usize, j as usize)] = w;
                }
                mat
            })
            .collect();
        SiteTensor::new(m.alphabet().to_vec(), mats).expect("q-sample tensor is well formed")
    }
}

// ---------------------------------------------------------------------------
// Cyclic random walks
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftDist {
    /// Shift uniform on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
    /// Zero-mean normal shift; `width` in the source text is read as the
    /// standard deviation.
    Normal { std: f64 },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WalkSpec {
    /// Number of ring segments (the construction assumes `N = 2^n`, but any
    /// `N ≥ 2` is accepted).
    pub segments: usize,
    pub dist: ShiftDist,
    #[serde(default = "default_quadrature_tol")]
    pub quadrature_tol: f64,
}

fn default_quadrature_tol() -> f64 {
    1e-12
}

impl WalkSpec {
    pub fn uniform(segments: usize, half_width: f64) -> Self {
        Self {
            segments,
            dist: ShiftDist::Uniform { half_width },
            quadrature_tol: default_quadrature_tol(),
        }
    }

    pub fn normal(segments: usize, std: f64) -> Self {
        Self {
            segments,
            dist: ShiftDist::Normal { std },
            quadrature_tol: default_quadrature_tol(),
        }
    }
}

/// Discretized cyclic random walk: states are the ring intervals, the emitted
/// symbol is the next interval, and `P(S_k|S_j)` integrates the shift
/// distribution over interval pairs (conditioning position uniform over the
/// source interval). Rows depend only on `(k−j) mod N`.
pub fn cyclic_walk_model(spec: &WalkSpec) -> Result<UnifilarModel> {
    let n = spec.segments;
    if n < 2 {
        return Err(Error::Domain("walk needs at least 2 segments".into()));
    }
    match spec.dist {
        ShiftDist::Uniform { half_width } if half_width <= 0.0 => {
            return Err(Error::Domain("half_width must be positive".into()))
        }
        ShiftDist::Normal { std } if std <= 0.0 => {
            return Err(Error::Domain("std must be positive".into()))
        }
        _ => {}
    }
    let kernel = match spec.dist {
        ShiftDist::Uniform { half_width } => uniform_kernel(n, half_width),
        ShiftDist::Normal { std } => normal_kernel(n, std, spec.quadrature_tol)?,
    };
    let total: f64 = kernel.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::Numerical(format!(
            "walk kernel mass {total} deviates from 1 beyond 1e-10"
        )));
    }
    let kernel: Vec<f64> = kernel.iter().map(|p| p / total).collect();
    let alphabet = (0..n).map(|k| k.to_string()).collect();
    let mut emit = Vec::with_capacity(n);
    let mut next = Vec::with_capacity(n);
    for j in 0..n {
        let row: Vec<f64> = (0..n).map(|x| kernel[(x + n - j) % n]).collect();
        emit.push(row);
        next.push((0..n).map(Some).collect());
    }
    let stationary = vec![1.0 / n as f64; n];
    UnifilarModel::with_stationary(alphabet, emit, next, stationary)
}

/// Closed-form kernel for uniform shifts: the displacement within one period
/// is the convolution of two centered uniforms (interval position and shift),
/// wrapped around the ring.
fn uniform_kernel(n: usize, w: f64) -> Vec<f64> {
    let h = 1.0 / (2.0 * n as f64);
    let (a, b) = if h <= w { (h, w) } else { (w, h) };
    // CDF of U[-a,a] * U[-b,b]
    let cdf = |u: f64| -> f64 {
        if u <= -(a + b) {
            0.0
        } else if u >= a + b {
            1.0
        } else if u <= -(b - a) {
            (u + a + b).powi(2) / (8.0 * a * b)
        } else if u <= b - a {
            0.5 + u / (2.0 * b)
        } else {
            1.0 - (a + b - u).powi(2) / (8.0 * a * b)
        }
    };
    let n_max = (a + b + h).ceil() as i64 + 1;
    (0..n)
        .map(|m| {
            let base = m as f64 / n as f64;
            let mut s = 0.0;
            for img in -n_max..=n_max {
                let c = base + img as f64;
                s += cdf(c + h) - cdf(c - h);
            }
            s
        })
        .collect()
}

fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Kernel for normal shifts: error-function differences for the inner
/// integral, adaptive Simpson quadrature over the conditioning position,
/// wrapped images summed until the tail mass is below 1e-15.
fn normal_kernel(n: usize, sigma: f64, tol: f64) -> Result<Vec<f64>> {
    let h = 1.0 / (2.0 * n as f64);
    // images beyond 8.5σ of the interval contribute < 1e-15 in total
    let reach = 8.5 * sigma + 2.0 * h;
    let n_max = reach.ceil() as i64 + 1;
    let mut out = Vec::with_capacity(n);
    for m in 0..n {
        let base = m as f64 / n as f64;
        let g = |a: f64| -> f64 {
            let mut s = 0.0;
            for img in -n_max..=n_max {
                let c = base + img as f64;
                if (c - a).abs() - h > 8.5 * sigma {
                    continue;
                }
                s += phi((c + h - a) / sigma) - phi((c - h - a) / sigma);
            }
            s
        };
        let integral = adaptive_simpson(&g, -h, h, tol / n as f64)?;
        out.push(n as f64 * integral);
    }
    Ok(out)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fb: f64,
        fc: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> (f64, f64) {
        let c = 0.5 * (a + b);
        let l = 0.5 * (a + c);
        let r = 0.5 * (c + b);
        let (fl, fr) = (f(l), f(r));
        let left = (c - a) / 6.0 * (fa + 4.0 * fl + fc);
        let right = (b - c) / 6.0 * (fc + 4.0 * fr + fb);
        let err = left + right - whole;
        if depth >= 48 || err.abs() < 15.0 * tol {
            (left + right + err / 15.0, err.abs() / 15.0)
        } else {
            let (v1, e1) = rec(f, a, c, fa, fc, fl, left, tol / 2.0, depth + 1);
            let (v2, e2) = rec(f, c, b, fc, fb, fr, right, tol / 2.0, depth + 1);
            (v1 + v2, e1 + e2)
        }
    }
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    let (value, err) = rec(f, a, b, fa, fb, fc, whole, tol, 0);
    if err > tol * 16.0 {
        return Err(Error::Numerical(format!(
            "quadrature reached error estimate {err:.3e}, requested {tol:.3e}"
        )));
    }
    Ok(value)
}

// ---------------------------------------------------------------------------
// Dyson-Ising chains
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DysonSpec {
    /// Interaction cutoff / Markov order `L`.
    pub interaction_range: usize,
    pub temperature: f64,
    /// Coupling strength `J0` in `J(k) = J0 / k^δ`.
    pub coupling: f64,
    /// Decay exponent `δ`.
    pub decay: f64,
    #[serde(default = "default_state_cap")]
    pub state_cap: usize,
}

fn default_state_cap() -> usize {
    4096
}

impl DysonSpec {
    pub fn new(interaction_range: usize, temperature: f64, coupling: f64, decay: f64) -> Self {
        Self {
            interaction_range,
            temperature,
            coupling,
            decay,
            state_cap: default_state_cap(),
        }
    }
}

/// Thermal sweep process of the truncated Dyson-Ising chain. States are the
/// last `L` spins (2^L causal states); conditionals come from stochasticizing
/// the Boltzmann transfer matrix with its leading right eigenvector.
///
/// Spin encoding: -1 ↦ symbol 0, +1 ↦ symbol 1. State bit `i` holds the spin
/// `L-1-i` steps in the past (bit `L-1` is the most recent spin).
pub fn dyson_ising_model(spec: &DysonSpec) -> Result<UnifilarModel> {
    let l = spec.interaction_range;
    if l < 1 {
        return Err(Error::Domain("interaction range must be ≥ 1".into()));
    }
    if spec.temperature <= 0.0 {
        return Err(Error::Domain("temperature must be positive".into()));
    }
    if l >= 63 || (1usize << l) > spec.state_cap {
        return Err(Error::Resource(format!(
            "2^{l} states exceed the cap of {}",
            spec.state_cap
        )));
    }
    let d = 1usize << l;
    let couplings: Vec<f64> = (1..=l)
        .map(|k| spec.coupling / (k as f64).powf(spec.decay))
        .collect();
    // weight[s][x]: Boltzmann factor for appending spin x to history s
    let weight = |s: usize, x: usize| -> f64 {
        let new_spin = 2.0 * x as f64 - 1.0;
        let mut field = 0.0;
        for (k, jk) in couplings.iter().enumerate() {
            // spin k+1 steps back is bit L-1-k
            let bit = (s >> (l - 1 - k)) & 1;
            field += jk * (2.0 * bit as f64 - 1.0);
        }
        (-new_spin * field / spec.temperature).exp()
    };
    let succ = |s: usize, x: usize| -> usize { (s >> 1) | (x << (l - 1)) };

    // leading Perron pair of M by power iteration
    let mut r = vec![1.0; d];
    let mut eta = 1.0;
    let mut converged = false;
    for _ in 0..1_000_000 {
        let mut out = vec![0.0; d];
        for s in 0..d {
            for x in 0..2 {
                out[s] += weight(s, x) * r[succ(s, x)];
            }
        }
        eta = out.iter().cloned().fold(0.0, f64::max);
        let mut diff: f64 = 0.0;
        for v in out.iter_mut() {
            *v /= eta;
        }
        for s in 0..d {
            diff = diff.max((out[s] - r[s]).abs());
        }
        r = out;
        if diff < 1e-15 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            applies: 1_000_000,
            residual: f64::NAN,
        });
    }
    // left Perron vector for the stationary distribution
    let mut lvec = vec![1.0; d];
    for _ in 0..1_000_000 {
        let mut out = vec![0.0; d];
        for s in 0..d {
            for x in 0..2 {
                out[succ(s, x)] += weight(s, x) * lvec[s];
            }
        }
        let mx = out.iter().cloned().fold(0.0, f64::max);
        let mut diff: f64 = 0.0;
        for v in out.iter_mut() {
            *v /= mx;
        }
        for s in 0..d {
            diff = diff.max((out[s] - lvec[s]).abs());
        }
        lvec = out;
        if diff < 1e-15 {
            break;
        }
    }

    let alphabet = vec!["0".to_string(), "1".to_string()];
    let mut emit = Vec::with_capacity(d);
    let mut next = Vec::with_capacity(d);
    for s in 0..d {
        let raw: Vec<f64> = (0..2)
            .map(|x| weight(s, x) * r[succ(s, x)] / (eta * r[s]))
            .collect();
        let sum: f64 = raw.iter().sum();
        emit.push(raw.iter().map(|p| p / sum).collect());
        next.push((0..2).map(|x| Some(succ(s, x))).collect());
    }
    let mut pi: Vec<f64> = (0..d).map(|s| lvec[s] * r[s]).collect();
    let z: f64 = pi.iter().sum();
    for p in pi.iter_mut() {
        *p /= z;
    }
    UnifilarModel::with_stationary(alphabet, emit, next, pi)
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Reproducible trajectory: initial state from the stationary distribution,
/// then emit/update. Identical seeds give identical sequences.
pub fn sample_sequence(m: &UnifilarModel, length: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded_rng(seed);
    let mut seq = Vec::with_capacity(length);
    let mut state = sample_index(m.stationary(), &mut rng);
    for _ in 0..length {
        let x = sample_index(&m_emit_row(m, state), &mut rng);
        seq.push(x);
        state = m.next(state, x).expect("sampled symbol has support");
    }
    seq
}

fn m_emit_row(m: &UnifilarModel, j: usize) -> Vec<f64> {
    (0..m.num_symbols()).map(|x| m.emit(j, x)).collect()
}

fn sample_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_support = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_support = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last_support
}
