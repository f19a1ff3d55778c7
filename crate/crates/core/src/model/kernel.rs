//! Forward and backward passes for both model kinds, generic over the
//! scalar type and over how parameters are read.
//!
//! Pointwise: `ŷ = h·(p_u ⊙ q_t) + b`.
//!
//! Attention: for the pool `J` of profile items (the target excluded),
//! `e_j = a·gelu(W (q_j ⊙ q_t))`, `α = softmax(e)`,
//! `ŷ = q_t·(p_u + Σ_j α_j q_j)`.

use super::{Layout, ModelKind};
use crate::data::{ItemId, TrainingPoint, UserId};
use crate::scalar::Scalar;

/// Profile items attending to a target, minus the listed exclusions.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Pool<'a> {
    pub items: &'a [ItemId],
    pub skip: Option<ItemId>,
    pub skip2: Option<ItemId>,
}

impl<'a> Pool<'a> {
    pub fn new(items: &'a [ItemId]) -> Self {
        Self {
            items,
            skip: None,
            skip2: None,
        }
    }

    pub fn skipping(mut self, item: Option<ItemId>) -> Self {
        if self.skip.is_none() {
            self.skip = item;
        } else {
            self.skip2 = item;
        }
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.items
            .iter()
            .copied()
            .filter(move |&j| Some(j) != self.skip && Some(j) != self.skip2)
    }
}

pub(crate) struct Kernel<'a> {
    pub layout: &'a Layout,
    pub profiles: &'a [Vec<ItemId>],
    pub l2: f64,
}

struct AttnState<T> {
    pool: Vec<ItemId>,
    alpha: Vec<T>,
    /// per pool item: x = q_j ⊙ q_t, s = W x, g = gelu(s)
    x: Vec<T>,
    s: Vec<T>,
    g: Vec<T>,
    c: Vec<T>,
}

/// Forward-pass intermediates needed by the backward pass.
pub(crate) struct Forward<T> {
    pub y: T,
    attn: Option<AttnState<T>>,
}

impl<'a> Kernel<'a> {
    fn d(&self) -> usize {
        self.layout.dim
    }

    pub fn pool_for(&self, u: UserId, target: ItemId) -> Pool<'a> {
        Pool::new(&self.profiles[u as usize]).skipping(Some(target))
    }

    pub fn score<T: Scalar, P: Fn(usize) -> T>(
        &self,
        theta: &P,
        u: UserId,
        t: ItemId,
        pool: Pool<'_>,
    ) -> T {
        match self.layout.kind {
            ModelKind::Pointwise => self.pointwise_score(theta, u, t),
            ModelKind::Attention => self.forward(theta, u, t, pool).y,
        }
    }

    /// Softmax weights over `pool` (attention model only).
    pub fn attention_weights<P: Fn(usize) -> f64>(
        &self,
        theta: &P,
        u: UserId,
        t: ItemId,
        pool: Pool<'_>,
    ) -> (Vec<ItemId>, Vec<f64>) {
        let st = self.attention_forward(theta, u, t, pool);
        (st.pool, st.alpha)
    }

    fn pointwise_score<T: Scalar, P: Fn(usize) -> T>(&self, theta: &P, u: UserId, t: ItemId) -> T {
        let (pu, qt, h) = (
            self.layout.user_row(u),
            self.layout.item_row(t),
            self.layout.head(),
        );
        let mut y = theta(h + self.d());
        for k in 0..self.d() {
            y += theta(h + k) * theta(pu + k) * theta(qt + k);
        }
        y
    }

    pub fn forward<T: Scalar, P: Fn(usize) -> T>(
        &self,
        theta: &P,
        u: UserId,
        t: ItemId,
        pool: Pool<'_>,
    ) -> Forward<T> {
        match self.layout.kind {
            ModelKind::Pointwise => Forward {
                y: self.pointwise_score(theta, u, t),
                attn: None,
            },
            ModelKind::Attention => {
                let st = self.attention_forward(theta, u, t, pool);
                let qt = self.layout.item_row(t);
                let mut y = T::zero();
                for k in 0..self.d() {
                    y += theta(qt + k) * st.c[k];
                }
                Forward { y, attn: Some(st) }
            }
        }
    }

    fn attention_forward<T: Scalar, P: Fn(usize) -> T>(
        &self,
        theta: &P,
        u: UserId,
        t: ItemId,
        pool: Pool<'_>,
    ) -> AttnState<T> {
        let d = self.d();
        let lay = self.layout;
        let (pu, qt) = (lay.user_row(u), lay.item_row(t));
        let (w0, a0) = (lay.head(), lay.head() + d * d);
        let pool: Vec<ItemId> = pool.iter().collect();
        let m = pool.len();
        let mut x = Vec::with_capacity(m * d);
        let mut s = Vec::with_capacity(m * d);
        let mut g = Vec::with_capacity(m * d);
        let mut logits = Vec::with_capacity(m);
        for &j in &pool {
            let qj = lay.item_row(j);
            let base = x.len();
            for k in 0..d {
                x.push(theta(qj + k) * theta(qt + k));
            }
            let mut e = T::zero();
            for r in 0..d {
                let mut acc = T::zero();
                for k in 0..d {
                    acc += theta(w0 + r * d + k) * x[base + k];
                }
                let act = acc.gelu();
                s.push(acc);
                g.push(act);
                e += theta(a0 + r) * act;
            }
            logits.push(e);
        }
        let alpha = softmax(&logits);
        let mut c: Vec<T> = (0..d).map(|k| theta(pu + k)).collect();
        for (jj, &j) in pool.iter().enumerate() {
            let qj = lay.item_row(j);
            for k in 0..d {
                c[k] += alpha[jj] * theta(qj + k);
            }
        }
        AttnState {
            pool,
            alpha,
            x,
            s,
            g,
            c,
        }
    }

    /// Accumulates `upstream · ∂ŷ/∂θ` into `sink`, reusing `fwd`.
    pub fn backward<T: Scalar, P: Fn(usize) -> T, S: FnMut(usize, T)>(
        &self,
        theta: &P,
        u: UserId,
        t: ItemId,
        fwd: &Forward<T>,
        upstream: T,
        sink: &mut S,
    ) {
        let d = self.d();
        let lay = self.layout;
        let (pu, qt, head) = (lay.user_row(u), lay.item_row(t), lay.head());
        let st = match &fwd.attn {
            None => {
                for k in 0..d {
                    let (h, p, q) = (theta(head + k), theta(pu + k), theta(qt + k));
                    sink(pu + k, upstream * h * q);
                    sink(qt + k, upstream * h * p);
                    sink(head + k, upstream * p * q);
                }
                sink(head + d, upstream);
                return;
            }
            Some(st) => st,
        };
        let (w0, a0) = (head, head + d * d);
        let qtv: Vec<T> = (0..d).map(|k| theta(qt + k)).collect();
        for k in 0..d {
            sink(pu + k, upstream * qtv[k]);
            sink(qt + k, upstream * st.c[k]);
        }
        if st.pool.is_empty() {
            return;
        }
        let v: Vec<T> = st
            .pool
            .iter()
            .map(|&j| {
                let qj = lay.item_row(j);
                let mut acc = T::zero();
                for k in 0..d {
                    acc += qtv[k] * theta(qj + k);
                }
                acc
            })
            .collect();
        let mut vbar = T::zero();
        for (al, vj) in st.alpha.iter().zip(&v) {
            vbar += *al * *vj;
        }
        let mut ds = vec![T::zero(); d];
        for (jj, &j) in st.pool.iter().enumerate() {
            let qj = lay.item_row(j);
            let ga = upstream * st.alpha[jj];
            for k in 0..d {
                sink(qj + k, ga * qtv[k]);
            }
            let delta = ga * (v[jj] - vbar);
            let sj = &st.s[jj * d..(jj + 1) * d];
            let gj = &st.g[jj * d..(jj + 1) * d];
            let xj = &st.x[jj * d..(jj + 1) * d];
            for r in 0..d {
                sink(a0 + r, delta * gj[r]);
                ds[r] = delta * theta(a0 + r) * sj[r].gelu_prime();
            }
            for r in 0..d {
                for k in 0..d {
                    sink(w0 + r * d + k, ds[r] * xj[k]);
                }
            }
            for k in 0..d {
                let mut dx = T::zero();
                for r in 0..d {
                    dx += theta(w0 + r * d + k) * ds[r];
                }
                sink(qj + k, dx * qtv[k]);
                sink(qt + k, dx * theta(qj + k));
            }
        }
    }

    /// Coordinates regularized by `z`: its embedding rows plus the head,
    /// excluding the pointwise bias.
    fn reg_rows(&self, z: &TrainingPoint) -> ([Option<usize>; 3], usize) {
        let lay = self.layout;
        match *z {
            TrainingPoint::Pointwise { user, item, .. } => (
                [Some(lay.user_row(user)), Some(lay.item_row(item)), None],
                lay.dim,
            ),
            TrainingPoint::Triple { user, pos, neg } => (
                [
                    Some(lay.user_row(user)),
                    Some(lay.item_row(pos)),
                    Some(lay.item_row(neg)),
                ],
                lay.dim * lay.dim + lay.dim,
            ),
        }
    }

    pub fn point_loss<T: Scalar, P: Fn(usize) -> T>(&self, theta: &P, z: &TrainingPoint) -> T {
        let data = match *z {
            TrainingPoint::Pointwise { user, item, label } => {
                let y = self.score(theta, user, item, self.pool_for(user, item));
                y.softplus() - y.scale(label.target())
            }
            TrainingPoint::Triple { user, pos, neg } => {
                let yp = self.score(theta, user, pos, self.pool_for(user, pos));
                let yn = self.score(theta, user, neg, self.pool_for(user, neg));
                (yn - yp).softplus()
            }
        };
        data + self.reg_value(theta, z)
    }

    pub fn reg_value<T: Scalar, P: Fn(usize) -> T>(&self, theta: &P, z: &TrainingPoint) -> T {
        if self.l2 == 0.0 {
            return T::zero();
        }
        let d = self.d();
        let (rows, head_len) = self.reg_rows(z);
        let mut acc = T::zero();
        for r in rows.into_iter().flatten() {
            for k in 0..d {
                acc += theta(r + k) * theta(r + k);
            }
        }
        let h = self.layout.head();
        for k in 0..head_len {
            acc += theta(h + k) * theta(h + k);
        }
        acc.scale(self.l2)
    }

    /// Gradient of `L(z, θ)` pushed into `sink`; returns the data part of
    /// the loss. With `with_reg == false` the weight-decay term is left out.
    pub fn point_grad<T: Scalar, P: Fn(usize) -> T, S: FnMut(usize, T)>(
        &self,
        theta: &P,
        z: &TrainingPoint,
        with_reg: bool,
        sink: &mut S,
    ) -> T {
        let data = match *z {
            TrainingPoint::Pointwise { user, item, label } => {
                let fwd = self.forward(theta, user, item, self.pool_for(user, item));
                let y = fwd.y;
                let g = y.sigmoid() - T::cst(label.target());
                self.backward(theta, user, item, &fwd, g, sink);
                y.softplus() - y.scale(label.target())
            }
            TrainingPoint::Triple { user, pos, neg } => {
                let fp = self.forward(theta, user, pos, self.pool_for(user, pos));
                let fn_ = self.forward(theta, user, neg, self.pool_for(user, neg));
                let margin = fn_.y - fp.y;
                let g = margin.sigmoid();
                self.backward(theta, user, pos, &fp, -g, sink);
                self.backward(theta, user, neg, &fn_, g, sink);
                margin.softplus()
            }
        };
        if with_reg && self.l2 != 0.0 {
            let d = self.d();
            let (rows, head_len) = self.reg_rows(z);
            for r in rows.into_iter().flatten() {
                for k in 0..d {
                    sink(r + k, theta(r + k).scale(2.0 * self.l2));
                }
            }
            let h = self.layout.head();
            for k in 0..head_len {
                sink(h + k, theta(h + k).scale(2.0 * self.l2));
            }
        }
        data
    }
}

fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    if logits.is_empty() {
        return Vec::new();
    }
    let max = logits
        .iter()
        .map(|e| e.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<T> = logits.iter().map(|&e| (e - T::cst(max)).exp()).collect();
    let mut total = T::zero();
    for &e in &ex {
        total += e;
    }
    ex.into_iter().map(|e| e / total).collect()
}
