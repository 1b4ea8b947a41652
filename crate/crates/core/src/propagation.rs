//! Central path, effective-noise moment recursion and the a-priori bound
//! recursion for the Euler-Maruyama scheme
//! `X_n = X_{n-1} + h u(X_{n-1}, t_{n-1}) + G(X_{n-1}, t_{n-1}) ΔW_n`.
//!
//! The state is split into the noise-free Euler path `x^c_n` and the
//! effective noise `z_n = X_n - x^c_n`. Expanding `u` and `G` around the
//! central path to order `N` gives, per component `k`, a polynomial in the
//! previous effective noise `z` and the increment `w = ΔW_n`:
//!
//! ```text
//! z_k + h Σ_{1<=|r|<=N} ∂^r u_k / r! z^r + Σ_{|r|<=N-1} Σ_j ∂^r G_kj / r! w_j z^r
//! ```
//!
//! Moments of `z_n` of order up to `N` then follow from those of `z_{n-1}`
//! and of the increments, because `w` is independent of `z`. Products of the
//! polynomials are truncated at combined degree `N` so the table of moments
//! stays closed.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::model::SdeModel;
use crate::multiindex::{enumerate_up_to, packed, MultiIndex, MAX_ORDER};
use crate::noise::NoiseModel;

/// One monomial `w^s z^r` packed into a single key: the `z` exponents
/// occupy the low `v` slots and the `w` exponents the following `d` slots.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Term {
    key: u64,
    degree: u32,
    coeff: f64,
}

/// Sparse polynomial in `(z, w)` sorted by key.
#[derive(Clone, Debug, Default, PartialEq)]
struct SparsePoly {
    terms: Vec<Term>,
}

impl SparsePoly {
    fn one() -> Self {
        SparsePoly {
            terms: vec![Term {
                key: 0,
                degree: 0,
                coeff: 1.0,
            }],
        }
    }

    fn from_unsorted(mut terms: Vec<Term>) -> Self {
        terms.sort_unstable_by_key(|t| t.key);
        let mut merged: Vec<Term> = Vec::with_capacity(terms.len());
        for t in terms {
            match merged.last_mut() {
                Some(last) if last.key == t.key => last.coeff += t.coeff,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.coeff != 0.0);
        SparsePoly { terms: merged }
    }

    /// Product with every monomial of degree above `max_degree` dropped.
    fn mul_truncated(&self, other: &SparsePoly, max_degree: u32, buf: &mut Vec<Term>) -> Self {
        buf.clear();
        for a in &self.terms {
            for b in &other.terms {
                let degree = a.degree + b.degree;
                if degree <= max_degree {
                    buf.push(Term {
                        key: a.key + b.key,
                        degree,
                        coeff: a.coeff * b.coeff,
                    });
                }
            }
        }
        Self::from_unsorted(std::mem::take(buf))
    }
}

/// Layout of a moment table: the multi-indices `|r| <= N` in graded-lex
/// order and a lookup from packed index to position.
#[derive(Debug)]
pub struct TableLayout {
    dim: usize,
    order: usize,
    indices: Vec<MultiIndex>,
    position: FxHashMap<u64, usize>,
}

impl TableLayout {
    pub fn new(dim: usize, order: usize) -> Result<Self> {
        if dim == 0 || dim > packed::MAX_SLOTS {
            return Err(Error::InvalidArgument(format!(
                "state dimension must be between 1 and {}, got {dim}",
                packed::MAX_SLOTS
            )));
        }
        if order > MAX_ORDER {
            return Err(Error::OrderTooLarge {
                requested: order,
                max: MAX_ORDER,
            });
        }
        let indices = enumerate_up_to(dim, order);
        let position = indices
            .iter()
            .enumerate()
            .map(|(i, r)| (packed::pack(r.entries()), i))
            .collect();
        Ok(TableLayout {
            dim,
            order,
            indices,
            position,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn position(&self, r: &MultiIndex) -> Option<usize> {
        if r.dim() != self.dim || r.entries().iter().any(|&e| e as usize > self.order) {
            return None;
        }
        self.position.get(&packed::pack(r.entries())).copied()
    }

    fn position_of_key(&self, key: u64) -> usize {
        self.position[&key]
    }
}

/// Moments `E[z^r]` of the effective noise for all `|r| <= N`.
#[derive(Clone, Debug)]
pub struct MomentTable {
    layout: Arc<TableLayout>,
    values: Vec<f64>,
}

impl PartialEq for MomentTable {
    fn eq(&self, other: &Self) -> bool {
        self.layout.dim == other.layout.dim
            && self.layout.order == other.layout.order
            && self.values == other.values
    }
}

impl MomentTable {
    /// Table of a deterministic effective noise: `1` at the zero index and
    /// `0` elsewhere.
    pub fn deterministic(layout: Arc<TableLayout>) -> Self {
        let mut values = vec![0.0; layout.len()];
        values[0] = 1.0;
        MomentTable { layout, values }
    }

    pub fn layout(&self) -> &Arc<TableLayout> {
        &self.layout
    }

    pub fn order(&self) -> usize {
        self.layout.order
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// Values in the order of [`TableLayout::indices`].
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: &MultiIndex) -> Option<f64> {
        self.layout.position(r).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64)> + '_ {
        self.layout.indices.iter().zip(self.values.iter().copied())
    }
}

/// Order-1 truncation of the effective noise: its mean and second-moment
/// matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearNoiseState {
    pub mean: DVector<f64>,
    pub second_moment: DMatrix<f64>,
}

impl LinearNoiseState {
    pub fn zero(dim: usize) -> Self {
        LinearNoiseState {
            mean: DVector::zeros(dim),
            second_moment: DMatrix::zeros(dim, dim),
        }
    }

    /// `S - m mᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.second_moment - &self.mean * self.mean.transpose()
    }
}

/// The order-`N` update polynomials, one per state component.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdatePolynomial {
    state_dim: usize,
    noise_dim: usize,
    order: usize,
    polys: Vec<SparsePoly>,
}

impl UpdatePolynomial {
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Coefficient of `w^s z^r` in the polynomial of component `k`.
    pub fn coefficient(&self, k: usize, s: &MultiIndex, r: &MultiIndex) -> f64 {
        let key = self.key(s, r);
        self.polys[k]
            .terms
            .binary_search_by_key(&key, |t| t.key)
            .map(|i| self.polys[k].terms[i].coeff)
            .unwrap_or(0.0)
    }

    /// Non-zero terms `(s, r, coefficient)` of component `k`.
    pub fn terms(&self, k: usize) -> Vec<(MultiIndex, MultiIndex, f64)> {
        self.polys[k]
            .terms
            .iter()
            .map(|t| {
                let (s, r) = self.split(t.key);
                (s, r, t.coeff)
            })
            .collect()
    }

    fn key(&self, s: &MultiIndex, r: &MultiIndex) -> u64 {
        packed::pack(r.entries())
            | (packed::pack(s.entries()) << (packed::SLOT_BITS as usize * self.state_dim))
    }

    fn split(&self, key: u64) -> (MultiIndex, MultiIndex) {
        let shift = packed::SLOT_BITS as usize * self.state_dim;
        let r = packed::unpack(key & packed::mask(self.state_dim), self.state_dim);
        let s = packed::unpack(key >> shift, self.noise_dim);
        (MultiIndex::new(s), MultiIndex::new(r))
    }
}

/// `x + h u(x, t)`.
pub fn central_step(x: &[f64], t: f64, h: f64, model: &dyn SdeModel) -> Result<Vec<f64>> {
    let mut u = vec![0.0; model.state_dim()];
    model.drift(x, t, &mut u)?;
    Ok(x.iter().zip(&u).map(|(x, u)| x + h * u).collect())
}

/// Reusable state for stepping the moment recursion of one model with a
/// fixed step size and order.
pub struct Stepper<'a> {
    model: &'a dyn SdeModel,
    noise: &'a dyn NoiseModel,
    h: f64,
    layout: Arc<TableLayout>,
    drift_indices: Vec<MultiIndex>,
    drift_scale: Vec<f64>,
    diffusion_indices: Vec<MultiIndex>,
    diffusion_scale: Vec<f64>,
    increment_moments: FxHashMap<u64, f64>,
    drift_jet: Vec<f64>,
    diffusion_jet: Vec<f64>,
    buf: Vec<Term>,
}

fn inverse_factorials(indices: &[MultiIndex]) -> Result<Vec<f64>> {
    indices
        .iter()
        .map(|r| r.factorial().map(|f| 1.0 / f as f64))
        .collect()
}

impl<'a> Stepper<'a> {
    pub fn new(
        model: &'a dyn SdeModel,
        noise: &'a dyn NoiseModel,
        h: f64,
        order: usize,
    ) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {h}"
            )));
        }
        if order == 0 {
            return Err(Error::InvalidArgument(
                "truncation order must be at least 1".into(),
            ));
        }
        let v = model.state_dim();
        let d = model.noise_dim();
        if v + d > packed::MAX_SLOTS {
            return Err(Error::InvalidArgument(format!(
                "state plus noise dimension must not exceed {}, got {}",
                packed::MAX_SLOTS,
                v + d
            )));
        }
        let layout = Arc::new(TableLayout::new(v, order)?);
        let drift_indices: Vec<MultiIndex> = layout.indices[1..].to_vec();
        let diffusion_indices: Vec<MultiIndex> = enumerate_up_to(v, order - 1);
        let drift_scale = inverse_factorials(&drift_indices)?
            .into_iter()
            .map(|f| f * h)
            .collect();
        let diffusion_scale = inverse_factorials(&diffusion_indices)?;
        let shift = packed::SLOT_BITS as usize * v;
        let increment_moments = enumerate_up_to(d, order)
            .into_iter()
            .map(|s| {
                (
                    packed::pack(s.entries()) << shift,
                    noise.increment_moment(&s, h),
                )
            })
            .collect();
        Ok(Stepper {
            model,
            noise,
            h,
            drift_jet: vec![0.0; v * drift_indices.len()],
            diffusion_jet: vec![0.0; v * d * diffusion_indices.len()],
            layout,
            drift_indices,
            drift_scale,
            diffusion_indices,
            diffusion_scale,
            increment_moments,
            buf: Vec::new(),
        })
    }

    pub fn layout(&self) -> &Arc<TableLayout> {
        &self.layout
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn order(&self) -> usize {
        self.layout.order
    }

    /// Taylor coefficients of the update map around `x_c` at time `t`.
    pub fn update_polynomial(&mut self, x_c: &[f64], t: f64) -> Result<UpdatePolynomial> {
        let v = self.model.state_dim();
        let d = self.model.noise_dim();
        if x_c.len() != v {
            return Err(Error::DimensionMismatch {
                expected: v,
                actual: x_c.len(),
            });
        }
        self.model
            .drift_jet(x_c, t, &self.drift_indices, &mut self.drift_jet)?;
        self.model
            .diffusion_jet(x_c, t, &self.diffusion_indices, &mut self.diffusion_jet)?;
        if let Some(bad) = self
            .drift_jet
            .iter()
            .chain(&self.diffusion_jet)
            .find(|x| !x.is_finite())
        {
            return Err(Error::NonFinite(format!("model derivative ({bad})")));
        }
        let order = self.layout.order as u32;
        let shift = packed::SLOT_BITS as usize * v;
        let nd = self.drift_indices.len();
        let ng = self.diffusion_indices.len();
        let mut polys = Vec::with_capacity(v);
        for k in 0..v {
            let mut terms = Vec::with_capacity(1 + nd + d * ng);
            terms.push(Term {
                key: packed::pack(MultiIndex::unit(v, k).entries()),
                degree: 1,
                coeff: 1.0,
            });
            for (i, r) in self.drift_indices.iter().enumerate() {
                let c = self.drift_jet[k * nd + i] * self.drift_scale[i];
                if c != 0.0 {
                    terms.push(Term {
                        key: packed::pack(r.entries()),
                        degree: r.total_order() as u32,
                        coeff: c,
                    });
                }
            }
            for j in 0..d {
                let w_key = 1u64 << (shift + packed::SLOT_BITS as usize * j);
                for (i, r) in self.diffusion_indices.iter().enumerate() {
                    let c = self.diffusion_jet[(k * d + j) * ng + i] * self.diffusion_scale[i];
                    if c != 0.0 {
                        let degree = r.total_order() as u32 + 1;
                        debug_assert!(degree <= order);
                        terms.push(Term {
                            key: packed::pack(r.entries()) + w_key,
                            degree,
                            coeff: c,
                        });
                    }
                }
            }
            polys.push(SparsePoly::from_unsorted(terms));
        }
        Ok(UpdatePolynomial {
            state_dim: v,
            noise_dim: d,
            order: self.layout.order,
            polys,
        })
    }

    /// Advances the table of effective-noise moments by one step.
    pub fn step_table(
        &mut self,
        table: &MomentTable,
        poly: &UpdatePolynomial,
    ) -> Result<MomentTable> {
        if table.layout.order != self.layout.order || table.layout.dim != self.layout.dim {
            return Err(Error::InvalidArgument(
                "moment table does not match the stepper's order or dimension".into(),
            ));
        }
        if poly.order != self.layout.order || poly.state_dim != self.layout.dim {
            return Err(Error::InvalidArgument(
                "update polynomial does not match the stepper's order or dimension".into(),
            ));
        }
        let v = self.layout.dim;
        let order = self.layout.order as u32;
        let z_mask = packed::mask(v);
        let w_mask = !z_mask;
        let n = self.layout.len();
        let mut products: Vec<SparsePoly> = Vec::with_capacity(n);
        let mut values = vec![0.0; n];
        products.push(SparsePoly::one());
        values[0] = 1.0;
        for idx in 1..n {
            let r = &self.layout.indices[idx];
            let k = r
                .entries()
                .iter()
                .position(|&e| e > 0)
                .expect("non-zero index has a positive entry");
            let prev = if r.total_order() == 1 {
                0
            } else {
                let mut lower = r.entries().to_vec();
                lower[k] -= 1;
                self.layout.position_of_key(packed::pack(&lower))
            };
            let product = products[prev].mul_truncated(&poly.polys[k], order, &mut self.buf);
            let mut acc = 0.0;
            for t in &product.terms {
                let w_moment = match t.key & w_mask {
                    0 => 1.0,
                    s => self.increment_moments[&s],
                };
                if w_moment == 0.0 {
                    continue;
                }
                let z_value = match t.key & z_mask {
                    0 => 1.0,
                    z => table.values[self.layout.position_of_key(z)],
                };
                acc += t.coeff * w_moment * z_value;
            }
            values[idx] = acc;
            products.push(product);
        }
        Ok(MomentTable {
            layout: self.layout.clone(),
            values,
        })
    }

    /// Advances the order-1 truncation by one step.
    pub fn step_linear(
        &self,
        state: &LinearNoiseState,
        x_c: &[f64],
        t: f64,
    ) -> Result<LinearNoiseState> {
        step_linear_noise(state, x_c, t, self.h, self.model, self.noise)
    }
}

/// Taylor update polynomials of order `order` around `x_c`.
pub fn build_update_polynomial(
    x_c: &[f64],
    t: f64,
    h: f64,
    model: &dyn SdeModel,
    noise: &dyn NoiseModel,
    order: usize,
) -> Result<UpdatePolynomial> {
    Stepper::new(model, noise, h, order)?.update_polynomial(x_c, t)
}

/// One step of the moment recursion for a table and polynomial of the same
/// order.
pub fn step_moment_table(
    table: &MomentTable,
    poly: &UpdatePolynomial,
    model: &dyn SdeModel,
    noise: &dyn NoiseModel,
    h: f64,
) -> Result<MomentTable> {
    Stepper::new(model, noise, h, table.order())?.step_table(table, poly)
}

/// One step of the order-1 truncation with `A = I + h J_u(x_c)` and
/// `B = G(x_c)`:
///
/// ```text
/// m' = A m + B E[w]
/// S' = A S Aᵀ + A m E[w]ᵀ Bᵀ + B E[w] mᵀ Aᵀ + B E[w wᵀ] Bᵀ
/// ```
///
/// For Wiener increments this reduces to `m' = A m`, `S' = A S Aᵀ + h B Bᵀ`.
pub fn step_linear_noise(
    state: &LinearNoiseState,
    x_c: &[f64],
    t: f64,
    h: f64,
    model: &dyn SdeModel,
    noise: &dyn NoiseModel,
) -> Result<LinearNoiseState> {
    let v = model.state_dim();
    let d = model.noise_dim();
    let first: Vec<MultiIndex> = (0..v).map(|i| MultiIndex::unit(v, i)).collect();
    let mut jac = vec![0.0; v * v];
    model.drift_jet(x_c, t, &first, &mut jac)?;
    let mut a = DMatrix::from_row_slice(v, v, &jac) * h;
    for i in 0..v {
        a[(i, i)] += 1.0;
    }
    let mut g = vec![0.0; v * d];
    model.diffusion(x_c, t, &mut g)?;
    let b = DMatrix::from_row_slice(v, d, &g);
    let m1 = noise.component_moment(1, h);
    let m2 = noise.component_moment(2, h);
    let ew = DVector::from_element(d, m1);
    let mut eww = DMatrix::from_element(d, d, m1 * m1);
    for j in 0..d {
        eww[(j, j)] = m2;
    }
    let am = &a * &state.mean;
    let bw = &b * &ew;
    let mean = &am + &bw;
    let cross = &am * bw.transpose();
    let second_moment = &a * &state.second_moment * a.transpose()
        + &cross
        + cross.transpose()
        + &b * eww * b.transpose();
    Ok(LinearNoiseState {
        mean,
        second_moment,
    })
}

/// `E[X^r] = Σ_{r' <= r} C(r, r') x_c^{r - r'} E[z^{r'}]`.
pub fn solution_moment(central: &[f64], table: &MomentTable, r: &MultiIndex) -> Result<f64> {
    if r.dim() != table.dim() {
        return Err(Error::DimensionMismatch {
            expected: table.dim(),
            actual: r.dim(),
        });
    }
    if r.total_order() > table.order() {
        return Err(Error::OrderTooLarge {
            requested: r.total_order(),
            max: table.order(),
        });
    }
    let mut acc = 0.0;
    for lower in r.lower_set() {
        let z = table.get(&lower).expect("lower set stays within the table");
        if z == 0.0 {
            continue;
        }
        let rest = r.checked_sub(&lower)?;
        acc += r.binomial(&lower)? as f64 * rest.monomial(central) * z;
    }
    Ok(acc)
}

/// Solution moments for every index of the table, in layout order.
pub fn solution_moments(central: &[f64], table: &MomentTable) -> Result<Vec<f64>> {
    table
        .layout
        .indices
        .iter()
        .map(|r| solution_moment(central, table, r))
        .collect()
}

/// Number of Euler steps covering `[t0, tn]`: `ceil((tn - t0) / h)`, with a
/// relative slack of `1e-9` so that an exact multiple is not rounded up by
/// floating-point noise.
pub fn step_count(t0: f64, tn: f64, h: f64) -> Result<usize> {
    if !(tn > t0) {
        return Err(Error::InvalidArgument(format!(
            "final time {tn} must exceed initial time {t0}"
        )));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {h}"
        )));
    }
    let ratio = (tn - t0) / h;
    let n = (ratio - 1e-9 * ratio.max(1.0)).ceil();
    if n > usize::MAX as f64 {
        return Err(Error::Overflow("step count"));
    }
    Ok((n as usize).max(1))
}

/// Snapshot of the three recursions at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub central: Vec<f64>,
    pub table: MomentTable,
    pub linear: LinearNoiseState,
}

/// Result of a propagation from a fixed initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct Propagation {
    pub steps: usize,
    pub final_state: Snapshot,
    /// Snapshots every `stride` steps (always including step 0 and the last
    /// step) when a trajectory was requested.
    pub trajectory: Option<Vec<Snapshot>>,
}

impl Propagation {
    /// `E[X^r]` at the final step.
    pub fn solution_moment(&self, r: &MultiIndex) -> Result<f64> {
        solution_moment(&self.final_state.central, &self.final_state.table, r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationSettings {
    pub h: f64,
    pub t0: f64,
    pub tn: f64,
    pub order: usize,
    /// Keep every `stride`-th step; `None` keeps only the final step.
    pub trajectory_stride: Option<usize>,
}

fn check_finite(step: usize, central: &[f64], table: &MomentTable) -> Result<()> {
    if central.iter().chain(&table.values).all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("propagated state".into()).at_step(step))
    }
}

/// Runs the central path, the order-`N` moment recursion and the order-1
/// truncation from a fixed `x0`.
pub fn propagate_fixed(
    x0: &[f64],
    model: &dyn SdeModel,
    noise: &dyn NoiseModel,
    settings: &PropagationSettings,
) -> Result<Propagation> {
    let v = model.state_dim();
    if x0.len() != v {
        return Err(Error::DimensionMismatch {
            expected: v,
            actual: x0.len(),
        });
    }
    if settings.trajectory_stride == Some(0) {
        return Err(Error::InvalidArgument(
            "trajectory stride must be positive".into(),
        ));
    }
    let h = settings.h;
    let steps = step_count(settings.t0, settings.tn, h)?;
    let mut stepper = Stepper::new(model, noise, h, settings.order)?;
    let mut central = x0.to_vec();
    let mut table = MomentTable::deterministic(stepper.layout().clone());
    let mut linear = LinearNoiseState::zero(v);
    let snapshot =
        |step: usize, central: &[f64], table: &MomentTable, linear: &LinearNoiseState| Snapshot {
            step,
            time: settings.t0 + step as f64 * h,
            central: central.to_vec(),
            table: table.clone(),
            linear: linear.clone(),
        };
    let mut trajectory = settings
        .trajectory_stride
        .map(|_| vec![snapshot(0, &central, &table, &linear)]);
    for n in 1..=steps {
        let t = settings.t0 + (n - 1) as f64 * h;
        let poly = stepper
            .update_polynomial(&central, t)
            .map_err(|e| e.at_step(n))?;
        table = stepper
            .step_table(&table, &poly)
            .map_err(|e| e.at_step(n))?;
        linear = stepper
            .step_linear(&linear, &central, t)
            .map_err(|e| e.at_step(n))?;
        central = central_step(&central, t, h, model).map_err(|e| e.at_step(n))?;
        check_finite(n, &central, &table)?;
        if n % 1000 == 0 {
            log::debug!("step {n}/{steps}");
        }
        if let (Some(stride), Some(traj)) = (settings.trajectory_stride, trajectory.as_mut()) {
            if n % stride == 0 || n == steps {
                traj.push(snapshot(n, &central, &table, &linear));
            }
        }
    }
    Ok(Propagation {
        steps,
        final_state: snapshot(steps, &central, &table, &linear),
        trajectory,
    })
}

/// A-priori bounds `Ã_n` on the effective noise, `n = 0..=steps`.
///
/// With `A_j` the half-width containing increment component `j` with
/// probability `p`,
///
/// ```text
/// Ã_n,k = Ã_{n-1},k + h Σ_{1<=|r|<=N} |∂^r u_k| / r! Ã^r
///                   + Σ_{|r|<=N-1} Σ_j |∂^r G_kj| / r! A_j Ã^r
/// ```
///
/// with derivatives taken on the central path and `Ã_0 = 0`.
pub fn bound_recursion(
    x0: &[f64],
    model: &dyn SdeModel,
    noise: &dyn NoiseModel,
    h: f64,
    steps: usize,
    order: usize,
    p: f64,
) -> Result<Vec<Vec<f64>>> {
    let v = model.state_dim();
    let d = model.noise_dim();
    if x0.len() != v {
        return Err(Error::DimensionMismatch {
            expected: v,
            actual: x0.len(),
        });
    }
    let mut stepper = Stepper::new(model, noise, h, order)?;
    let quantiles: Vec<f64> = (0..d)
        .map(|j| noise.quantile_bound(j, p, h))
        .collect::<Result<_>>()?;
    let mut bounds = vec![vec![0.0; v]];
    let mut central = x0.to_vec();
    for n in 1..=steps {
        let t0 = (n - 1) as f64 * h;
        let poly = stepper
            .update_polynomial(&central, t0)
            .map_err(|e| e.at_step(n))?;
        let prev = bounds
            .last()
            .expect("bounds start with the zero entry")
            .clone();
        let mut next = prev.clone();
        for (k, value) in next.iter_mut().enumerate() {
            for (s, r, c) in poly.terms(k) {
                // The leading z_k term carries the previous bound itself.
                let coeff = if s.is_zero() && r == MultiIndex::unit(v, k) {
                    c - 1.0
                } else {
                    c
                };
                let noise_factor: f64 = s
                    .entries()
                    .iter()
                    .zip(&quantiles)
                    .map(|(&e, a)| a.powi(e as i32))
                    .product();
                *value += coeff.abs() * noise_factor * r.monomial(&prev);
            }
        }
        central = central_step(&central, t0, h, model).map_err(|e| e.at_step(n))?;
        bounds.push(next);
    }
    Ok(bounds)
}
