//! Weighted-MMSE block coordinate descent.
//!
//! The engine works on *links*: a link carries `d` streams to one user from
//! a set of serving BSs (one BS for the interfering broadcast channel, a
//! cluster for joint transmission). Each serving BS holds an `M x d` precoder
//! block per tone and slot, and the user sees the coherent sum of the blocks.
//! Every other link, including other links to the same user, is
//! interference.
//!
//! One iteration updates MMSE receivers `U`, weights `W = E^{-1}` and then
//! precoders `V`. Each update minimizes
//!
//! ```text
//!   sum_l c_l sum_{f,t} [ tr(W_l E_l(U_l, V)) - log det W_l ] + lambda sum ||V_l^q||
//! ```
//!
//! exactly over its block, so that objective never increases.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, frob_sq, identity, inverse_hpd, log_det_hpd, re_trace, solve_hpd, CMat};
use crate::net_model::{Dims, NetworkInstance};
use crate::quadratic::{solve_power_constrained, QuadraticBlock, QuadraticTerm};
use crate::report::{IterationRecord, SolveReport};
use crate::rng::{complex_gaussian, derive_seed, stream_rng, tag};
use crate::utility::UtilityConfig;

/// One data link: `streams` streams to `user` from the BSs in `bss`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub user: usize,
    pub bss: Vec<usize>,
}

impl Link {
    pub fn new(user: usize, bs: usize) -> Self {
        Link { user, bss: vec![bs] }
    }
}

/// One link per user, served by its home BS.
pub fn home_links(instance: &NetworkInstance) -> Vec<Link> {
    (0..instance.num_users()).map(|i| Link::new(i, instance.home_bs(i))).collect()
}

/// One link per user served jointly by every BS in its candidate set.
pub fn cluster_links(candidates: &[Vec<usize>]) -> Vec<Link> {
    candidates
        .iter()
        .enumerate()
        .map(|(i, qs)| Link { user: i, bss: qs.clone() })
        .collect()
}

/// Stopping rule shared by the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopRule {
    pub max_iters: usize,
    /// Relative change of the utility below which the run stops.
    pub tolerance: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule { max_iters: 500, tolerance: 1e-6 }
    }
}

impl StopRule {
    pub fn fixed(iters: usize) -> Self {
        StopRule { max_iters: iters, tolerance: 0.0 }
    }

    pub fn done(&self, prev: f64, cur: f64) -> bool {
        (cur - prev).abs() <= self.tolerance * cur.abs().max(prev.abs()).max(1e-12)
    }
}

/// Precoder blocks, `blocks[l][(b * F + f) * T + t]` for serving position `b`
/// of link `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub blocks: Vec<Vec<CMat>>,
}

/// Receivers, indexed `(l * F + f) * T + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverSet {
    pub u: Vec<CMat>,
}

/// MSE weights, indexed like [`ReceiverSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub w: Vec<CMat>,
}

/// Problem data for the engine: an instance (or a replacement channel
/// tensor), a link structure, per-link utility weights and an optional
/// activity mask.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    instance: &'a NetworkInstance,
    channels: &'a [CMat],
    links: Vec<Link>,
    streams: usize,
    weights: Vec<f64>,
    active: Option<Vec<bool>>,
    /// Per BS, the `(link, position)` pairs it serves.
    served: Vec<Vec<(usize, usize)>>,
    user_links: Vec<Vec<usize>>,
}

impl<'a> Problem<'a> {
    pub fn new(instance: &'a NetworkInstance, links: Vec<Link>) -> Result<Self> {
        Self::with_channels(instance, instance.channels(), links)
    }

    /// Uses `channels` in place of the instance's own tensor.
    pub fn with_channels(instance: &'a NetworkInstance, channels: &'a [CMat], links: Vec<Link>) -> Result<Self> {
        let d = instance.dims();
        if channels.len() != d.num_channels() {
            return Err(Error::Dimension("channel tensor does not match the instance".into()));
        }
        let mut served = vec![Vec::new(); d.num_bs];
        let mut user_links = vec![Vec::new(); d.num_users];
        for (l, link) in links.iter().enumerate() {
            if link.user >= d.num_users {
                return Err(Error::Config(format!("link {l} targets unknown user {}", link.user)));
            }
            if link.bss.is_empty() {
                return Err(Error::Config(format!("link {l} has no serving BS")));
            }
            for (b, &q) in link.bss.iter().enumerate() {
                if q >= d.num_bs || link.bss[..b].contains(&q) {
                    return Err(Error::Config(format!("link {l} has an invalid serving set {:?}", link.bss)));
                }
                served[q].push((l, b));
            }
            user_links[link.user].push(l);
        }
        let weights = vec![1.0; links.len()];
        Ok(Problem {
            instance,
            channels,
            links,
            streams: 1,
            weights,
            active: None,
            served,
            user_links,
        })
    }

    /// Streams per link (default 1).
    pub fn set_streams(&mut self, streams: usize) -> Result<()> {
        let d = self.dims();
        if streams == 0 || streams > d.tx_antennas.min(d.rx_antennas) {
            return Err(Error::Config(format!("streams must be in 1..={}", d.tx_antennas.min(d.rx_antennas))));
        }
        self.streams = streams;
        Ok(())
    }

    /// Per-link utility weights `c_l`.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.links.len() || weights.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::Config("one finite nonnegative weight per link is required".into()));
        }
        self.weights = weights;
        Ok(())
    }

    /// Activity mask indexed `(l * F + f) * T + t`; inactive blocks stay zero.
    pub fn set_active(&mut self, active: Option<Vec<bool>>) -> Result<()> {
        if let Some(a) = &active {
            if a.len() != self.links.len() * self.dims().resources() {
                return Err(Error::Dimension("activity mask has the wrong length".into()));
            }
        }
        self.active = active;
        Ok(())
    }

    pub fn instance(&self) -> &NetworkInstance {
        self.instance
    }

    pub fn dims(&self) -> Dims {
        self.instance.dims()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn user_links(&self, i: usize) -> &[usize] {
        &self.user_links[i]
    }

    /// True when every link has a single serving BS.
    pub fn is_single_bs(&self) -> bool {
        self.links.iter().all(|l| l.bss.len() == 1)
    }

    pub fn channel(&self, q: usize, i: usize, f: usize, t: usize) -> &CMat {
        &self.channels[self.dims().channel_index(q, i, f, t)]
    }

    fn res(&self, l: usize, f: usize, t: usize) -> usize {
        let d = self.dims();
        (l * d.tones + f) * d.slots + t
    }

    fn block_index(&self, b: usize, f: usize, t: usize) -> usize {
        let d = self.dims();
        (b * d.tones + f) * d.slots + t
    }

    pub fn is_active(&self, l: usize, f: usize, t: usize) -> bool {
        self.active.as_ref().is_none_or(|a| a[self.res(l, f, t)])
    }

    pub fn zero_precoders(&self) -> PrecoderSet {
        let d = self.dims();
        PrecoderSet {
            blocks: self
                .links
                .iter()
                .map(|l| vec![CMat::zeros(d.tx_antennas, self.streams); l.bss.len() * d.resources()])
                .collect(),
        }
    }

    /// Random precoders scaled so every BS transmits exactly its budget in
    /// every slot where it has an active block.
    pub fn random_precoders(&self, seed: u64) -> PrecoderSet {
        let d = self.dims();
        let seed = derive_seed(seed, &[tag::INIT]);
        let mut v = self.zero_precoders();
        let mut counter = 0u64;
        for (l, link) in self.links.iter().enumerate() {
            for b in 0..link.bss.len() {
                for f in 0..d.tones {
                    for t in 0..d.slots {
                        if self.is_active(l, f, t) {
                            let mut rng = stream_rng(seed, counter);
                            let k = self.block_index(b, f, t);
                            v.blocks[l][k] = CMat::from_fn(d.tx_antennas, self.streams, |_, _| complex_gaussian(&mut rng, 1.0));
                        }
                        counter += 1;
                    }
                }
            }
        }
        for q in 0..d.num_bs {
            for t in 0..d.slots {
                let p = self.group_power(&v, q, t);
                if p > 0.0 {
                    let s = c64((self.instance.power_budget(q) / p).sqrt(), 0.0);
                    for &(l, b) in &self.served[q] {
                        for f in 0..d.tones {
                            let k = self.block_index(b, f, t);
                            v.blocks[l][k] *= s;
                        }
                    }
                }
            }
        }
        v
    }

    /// Precoder block of link `l` from BS `q`, if `q` serves `l`.
    pub fn block<'v>(&self, v: &'v PrecoderSet, l: usize, q: usize, f: usize, t: usize) -> Option<&'v CMat> {
        let b = self.links[l].bss.iter().position(|&x| x == q)?;
        Some(&v.blocks[l][self.block_index(b, f, t)])
    }

    /// Transmit power of BS `q` in slot `t`.
    pub fn group_power(&self, v: &PrecoderSet, q: usize, t: usize) -> f64 {
        let d = self.dims();
        self.served[q]
            .iter()
            .map(|&(l, b)| (0..d.tones).map(|f| frob_sq(&v.blocks[l][self.block_index(b, f, t)])).sum::<f64>())
            .sum()
    }

    /// Largest absolute excess of any BS/slot power over its budget.
    pub fn max_power_violation(&self, v: &PrecoderSet) -> f64 {
        let d = self.dims();
        let mut worst: f64 = 0.0;
        for q in 0..d.num_bs {
            for t in 0..d.slots {
                worst = worst.max(self.group_power(v, q, t) - self.instance.power_budget(q));
            }
        }
        worst
    }

    /// Signal of link `k` as seen by user `i`.
    fn seen_by(&self, v: &PrecoderSet, k: usize, i: usize, f: usize, t: usize) -> CMat {
        let d = self.dims();
        let mut s = CMat::zeros(d.rx_antennas, self.streams);
        for (b, &q) in self.links[k].bss.iter().enumerate() {
            s += self.channel(q, i, f, t) * &v.blocks[k][self.block_index(b, f, t)];
        }
        s
    }

    /// Received covariance `sigma^2 I + sum_k S_k S_k^H` at user `i` and the
    /// signals of the user's own links.
    fn user_view(&self, v: &PrecoderSet, i: usize, f: usize, t: usize) -> (CMat, Vec<CMat>) {
        let d = self.dims();
        let mut j = identity(d.rx_antennas) * c64(self.instance.noise_power(i), 0.0);
        let mut own = Vec::with_capacity(self.user_links[i].len());
        for k in 0..self.links.len() {
            let s = self.seen_by(v, k, i, f, t);
            j += &s * s.adjoint();
            if self.links[k].user == i {
                own.push(s);
            }
        }
        (j, own)
    }

    /// Rate (nats) of link `l` on resource `(f, t)`:
    /// `log det(I + S^H C^{-1} S)` with `C` the interference-plus-noise
    /// covariance.
    pub fn link_rate(&self, v: &PrecoderSet, l: usize, f: usize, t: usize) -> Result<f64> {
        let i = self.links[l].user;
        let (j, _) = self.user_view(v, i, f, t);
        let s = self.seen_by(v, l, i, f, t);
        let c = &j - &s * s.adjoint();
        rate_from(&c, &s)
    }

    /// Per-link rates summed over all resources.
    pub fn link_rates(&self, v: &PrecoderSet) -> Result<Vec<f64>> {
        let d = self.dims();
        let per_user: Vec<Result<Vec<(usize, f64)>>> = (0..d.num_users)
            .into_par_iter()
            .map(|i| {
                let mut out: Vec<(usize, f64)> = self.user_links[i].iter().map(|&l| (l, 0.0)).collect();
                for f in 0..d.tones {
                    for t in 0..d.slots {
                        let (j, own) = self.user_view(v, i, f, t);
                        for (slot, s) in out.iter_mut().zip(&own) {
                            let c = &j - s * s.adjoint();
                            slot.1 += rate_from(&c, s)?;
                        }
                    }
                }
                Ok(out)
            })
            .collect();
        let mut rates = vec![0.0; self.links.len()];
        for r in per_user {
            for (l, x) in r? {
                rates[l] = x;
            }
        }
        Ok(rates)
    }

    /// Per-user rates: sum of the user's link rates.
    pub fn user_rates(&self, v: &PrecoderSet) -> Result<Vec<f64>> {
        let lr = self.link_rates(v)?;
        Ok(self.user_links.iter().map(|ls| ls.iter().map(|&l| lr[l]).sum()).collect())
    }

    /// Rate of user `i` on resource `(f, t)`.
    pub fn user_rate(&self, v: &PrecoderSet, i: usize, f: usize, t: usize) -> Result<f64> {
        self.user_links[i].iter().map(|&l| self.link_rate(v, l, f, t)).sum()
    }

    /// MMSE receiver `J^{-1} S` of link `l` on `(f, t)`.
    pub fn mmse_receiver(&self, v: &PrecoderSet, l: usize, f: usize, t: usize) -> Result<CMat> {
        let i = self.links[l].user;
        let (j, _) = self.user_view(v, i, f, t);
        solve_hpd(&j, &self.seen_by(v, l, i, f, t))
    }

    /// MSE matrix `E = U^H J U - U^H S - S^H U + I` of link `l` with
    /// receiver `u`.
    pub fn mse_matrix(&self, v: &PrecoderSet, u: &CMat, l: usize, f: usize, t: usize) -> CMat {
        let i = self.links[l].user;
        let (j, _) = self.user_view(v, i, f, t);
        mse_from(&j, &self.seen_by(v, l, i, f, t), u)
    }

    /// All MMSE receivers.
    pub fn receivers(&self, v: &PrecoderSet) -> Result<ReceiverSet> {
        let d = self.dims();
        let per_user: Vec<Result<Vec<(usize, CMat)>>> = (0..d.num_users)
            .into_par_iter()
            .map(|i| {
                let mut out = Vec::new();
                for f in 0..d.tones {
                    for t in 0..d.slots {
                        let (j, own) = self.user_view(v, i, f, t);
                        for (&l, s) in self.user_links[i].iter().zip(&own) {
                            out.push((self.res(l, f, t), solve_hpd(&j, s)?));
                        }
                    }
                }
                Ok(out)
            })
            .collect();
        let mut u = vec![CMat::zeros(d.rx_antennas, self.streams); self.links.len() * d.resources()];
        for r in per_user {
            for (k, m) in r? {
                u[k] = m;
            }
        }
        Ok(ReceiverSet { u })
    }

    /// All MSE matrices for receivers `u`.
    pub fn mse_matrices(&self, v: &PrecoderSet, u: &ReceiverSet) -> Vec<CMat> {
        let d = self.dims();
        let per_user: Vec<Vec<(usize, CMat)>> = (0..d.num_users)
            .into_par_iter()
            .map(|i| {
                let mut out = Vec::new();
                for f in 0..d.tones {
                    for t in 0..d.slots {
                        let (j, own) = self.user_view(v, i, f, t);
                        for (&l, s) in self.user_links[i].iter().zip(&own) {
                            let k = self.res(l, f, t);
                            out.push((k, mse_from(&j, s, &u.u[k])));
                        }
                    }
                }
                out
            })
            .collect();
        let mut e = vec![CMat::zeros(self.streams, self.streams); self.links.len() * d.resources()];
        for r in per_user {
            for (k, m) in r {
                e[k] = m;
            }
        }
        e
    }

    /// `W = E^{-1}` for every link and resource.
    pub fn weights_from(&self, e: &[CMat]) -> Result<WeightSet> {
        let w: Result<Vec<CMat>> = e.par_iter().map(weight_update).collect();
        Ok(WeightSet { w: w? })
    }

    /// `sum_l c_l sum_{f,t} [tr(W E) - log det W] + lambda sum ||V_l^q||`.
    pub fn objective(&self, v: &PrecoderSet, u: &ReceiverSet, w: &WeightSet, lambda: f64) -> Result<f64> {
        let e = self.mse_matrices(v, u);
        let d = self.dims();
        let mut total = 0.0;
        for l in 0..self.links.len() {
            let c = self.weights[l];
            if c == 0.0 {
                continue;
            }
            for f in 0..d.tones {
                for t in 0..d.slots {
                    let k = self.res(l, f, t);
                    total += c * (re_trace(&(&w.w[k] * &e[k])) - log_det_hpd(&w.w[k])?);
                }
            }
        }
        Ok(total + lambda * self.penalty(v))
    }

    /// `sum ||V_l^q||_F` with the norm taken over tones, per slot.
    pub fn penalty(&self, v: &PrecoderSet) -> f64 {
        let d = self.dims();
        let mut s = 0.0;
        for (l, link) in self.links.iter().enumerate() {
            for b in 0..link.bss.len() {
                for t in 0..d.slots {
                    let n: f64 = (0..d.tones).map(|f| frob_sq(&v.blocks[l][self.block_index(b, f, t)])).sum();
                    s += n.sqrt();
                }
            }
        }
        s
    }

    /// Per-user `G_i = sum_{l of i} c_l U_l W_l U_l^H` on every resource,
    /// indexed `(i * F + f) * T + t`.
    fn receive_grams(&self, u: &ReceiverSet, w: &WeightSet) -> Vec<CMat> {
        let d = self.dims();
        let mut g = vec![CMat::zeros(d.rx_antennas, d.rx_antennas); d.num_users * d.resources()];
        for (l, link) in self.links.iter().enumerate() {
            let c = self.weights[l];
            if c == 0.0 {
                continue;
            }
            for f in 0..d.tones {
                for t in 0..d.slots {
                    let k = self.res(l, f, t);
                    let uw = &u.u[k] * &w.w[k];
                    g[(link.user * d.tones + f) * d.slots + t] += (&uw * u.u[k].adjoint()) * c64(c, 0.0);
                }
            }
        }
        g
    }

    /// `sum_i H_{q,i}^H G_i H_{p,i}`.
    fn coupling(&self, grams: &[CMat], q: usize, p: usize, f: usize, t: usize) -> CMat {
        let d = self.dims();
        let mut a = CMat::zeros(d.tx_antennas, d.tx_antennas);
        for i in 0..d.num_users {
            let g = &grams[(i * d.tones + f) * d.slots + t];
            a += self.channel(q, i, f, t).adjoint() * g * self.channel(p, i, f, t);
        }
        a
    }

    /// Quadratic blocks of power group `(q, t)` given the current `v` for the
    /// other BSs' blocks.
    fn group_blocks(&self, v: &PrecoderSet, u: &ReceiverSet, w: &WeightSet, grams: &[CMat], q: usize, t: usize) -> Vec<QuadraticBlock> {
        let d = self.dims();
        let a: Vec<CMat> = (0..d.tones).map(|f| self.coupling(grams, q, q, f, t)).collect();
        self.served[q]
            .iter()
            .map(|&(l, b)| {
                let link = &self.links[l];
                let terms = (0..d.tones)
                    .map(|f| {
                        if !self.is_active(l, f, t) {
                            return QuadraticTerm::new(&a[f], &CMat::zeros(d.tx_antennas, self.streams));
                        }
                        let k = self.res(l, f, t);
                        let mut rhs = self.channel(q, link.user, f, t).adjoint() * &u.u[k] * &w.w[k] * c64(self.weights[l], 0.0);
                        for (bo, &p) in link.bss.iter().enumerate() {
                            if bo != b {
                                rhs -= self.coupling(grams, q, p, f, t) * &v.blocks[l][self.block_index(bo, f, t)];
                            }
                        }
                        QuadraticTerm::new(&a[f], &rhs)
                    })
                    .collect();
                QuadraticBlock::new(terms)
            })
            .collect()
    }

    fn write_group(&self, v: &mut PrecoderSet, q: usize, t: usize, sol: Vec<Vec<CMat>>) {
        for (&(l, b), per_tone) in self.served[q].iter().zip(sol) {
            for (f, m) in per_tone.into_iter().enumerate() {
                let k = self.block_index(b, f, t);
                v.blocks[l][k] = if self.is_active(l, f, t) { m } else { m * c64(0.0, 0.0) };
            }
        }
    }

    /// Exact minimization over the precoders of BS `q` (all slots) with
    /// every other BS fixed.
    pub fn precoder_update(&self, v: &PrecoderSet, u: &ReceiverSet, w: &WeightSet, q: usize, lambda: f64) -> Result<PrecoderSet> {
        let grams = self.receive_grams(u, w);
        let mut out = v.clone();
        self.update_bs(&mut out, u, w, &grams, q, lambda)?;
        Ok(out)
    }

    fn update_bs(&self, v: &mut PrecoderSet, u: &ReceiverSet, w: &WeightSet, grams: &[CMat], q: usize, lambda: f64) -> Result<()> {
        for t in 0..self.dims().slots {
            let blocks = self.group_blocks(v, u, w, grams, q, t);
            let sol = solve_power_constrained(&blocks, self.instance.power_budget(q), lambda)?;
            self.write_group(v, q, t, sol.blocks);
        }
        Ok(())
    }

    /// Updates every BS. Single-BS links decouple across BSs and are solved
    /// in parallel; joint transmission couples BSs and is swept in index
    /// order.
    pub fn precoders(&self, v: &PrecoderSet, u: &ReceiverSet, w: &WeightSet, lambda: f64) -> Result<PrecoderSet> {
        let d = self.dims();
        let grams = self.receive_grams(u, w);
        let mut out = v.clone();
        if self.is_single_bs() {
            let groups: Vec<(usize, usize)> = (0..d.num_bs).flat_map(|q| (0..d.slots).map(move |t| (q, t))).collect();
            let sols: Vec<Result<Vec<Vec<CMat>>>> = groups
                .par_iter()
                .map(|&(q, t)| {
                    let blocks = self.group_blocks(v, u, w, &grams, q, t);
                    Ok(solve_power_constrained(&blocks, self.instance.power_budget(q), lambda)?.blocks)
                })
                .collect();
            for (&(q, t), sol) in groups.iter().zip(sols) {
                self.write_group(&mut out, q, t, sol?);
            }
        } else {
            for q in 0..d.num_bs {
                self.update_bs(&mut out, u, w, &grams, q, lambda)?;
            }
        }
        Ok(out)
    }

    /// Curvatures `A_{q,f,t} = sum_i H_{q,i}^H G_i H_{q,i}` (indexed
    /// `(q * F + f) * T + t`) and linear terms `c_l H^H U_l W_l` (laid out like
    /// the precoders) of the precoder subproblem. Single-BS links only.
    pub fn quadratic_terms(&self, u: &ReceiverSet, w: &WeightSet) -> Result<(Vec<CMat>, PrecoderSet)> {
        if !self.is_single_bs() {
            return Err(Error::Config("quadratic terms need single-BS links".into()));
        }
        let d = self.dims();
        let grams = self.receive_grams(u, w);
        let mut a = Vec::with_capacity(d.num_bs * d.resources());
        for q in 0..d.num_bs {
            for f in 0..d.tones {
                for t in 0..d.slots {
                    a.push(self.coupling(&grams, q, q, f, t));
                }
            }
        }
        let mut b = self.zero_precoders();
        for (l, link) in self.links.iter().enumerate() {
            for f in 0..d.tones {
                for t in 0..d.slots {
                    if self.is_active(l, f, t) {
                        let k = self.res(l, f, t);
                        b.blocks[l][self.block_index(0, f, t)] =
                            self.channel(link.bss[0], link.user, f, t).adjoint() * &u.u[k] * &w.w[k] * c64(self.weights[l], 0.0);
                    }
                }
            }
        }
        Ok((a, b))
    }

    /// Power-constrained minimizer of `tr(V^H A V) - 2 Re tr(V^H B)` per BS
    /// and slot, for terms laid out as in [`Problem::quadratic_terms`].
    pub fn precoders_from_terms(&self, a: &[CMat], b: &PrecoderSet) -> Result<PrecoderSet> {
        let d = self.dims();
        if !self.is_single_bs() || a.len() != d.num_bs * d.resources() {
            return Err(Error::Dimension("quadratic terms do not match the problem".into()));
        }
        let groups: Vec<(usize, usize)> = (0..d.num_bs).flat_map(|q| (0..d.slots).map(move |t| (q, t))).collect();
        let sols: Vec<Result<Vec<Vec<CMat>>>> = groups
            .par_iter()
            .map(|&(q, t)| {
                let blocks: Vec<QuadraticBlock> = self.served[q]
                    .iter()
                    .map(|&(l, _)| {
                        let terms = (0..d.tones)
                            .map(|f| QuadraticTerm::new(&a[(q * d.tones + f) * d.slots + t], &b.blocks[l][self.block_index(0, f, t)]))
                            .collect();
                        QuadraticBlock::new(terms)
                    })
                    .collect();
                Ok(solve_power_constrained(&blocks, self.instance.power_budget(q), 0.0)?.blocks)
            })
            .collect();
        let mut out = self.zero_precoders();
        for (&(q, t), sol) in groups.iter().zip(sols) {
            self.write_group(&mut out, q, t, sol?);
        }
        Ok(out)
    }

    /// Scales every BS into its power budget (no-op when feasible).
    pub fn project_power(&self, v: &mut PrecoderSet) {
        let d = self.dims();
        for q in 0..d.num_bs {
            for t in 0..d.slots {
                let p = self.group_power(v, q, t);
                let budget = self.instance.power_budget(q);
                if p > budget {
                    let s = c64((budget / p).sqrt(), 0.0);
                    for &(l, b) in &self.served[q] {
                        for f in 0..d.tones {
                            v.blocks[l][self.block_index(b, f, t)] *= s;
                        }
                    }
                }
            }
        }
    }

    /// Smallest group-LASSO weight that is guaranteed to zero every block in
    /// the next precoder update from `(v, u, w)`, whatever the BS order:
    /// twice the largest bound on a block's linear term.
    pub fn zero_threshold(&self, v: &PrecoderSet, u: &ReceiverSet, w: &WeightSet) -> f64 {
        let d = self.dims();
        let grams = self.receive_grams(u, w);
        let mut worst: f64 = 0.0;
        for (l, link) in self.links.iter().enumerate() {
            for (b, &q) in link.bss.iter().enumerate() {
                for t in 0..d.slots {
                    let mut direct = 0.0;
                    let mut cross = vec![0.0; link.bss.len()];
                    for f in 0..d.tones {
                        let k = self.res(l, f, t);
                        direct += frob_sq(&(self.channel(q, link.user, f, t).adjoint() * &u.u[k] * &w.w[k] * c64(self.weights[l], 0.0)));
                        for (bo, &p) in link.bss.iter().enumerate() {
                            if bo != b {
                                cross[bo] += frob_sq(&(self.coupling(&grams, q, p, f, t) * &v.blocks[l][self.block_index(bo, f, t)]));
                            }
                        }
                    }
                    let bound = direct.sqrt() + cross.iter().map(|x| x.sqrt()).sum::<f64>();
                    worst = worst.max(2.0 * bound);
                }
            }
        }
        worst
    }

    /// Gradient of the weighted sum rate `sum_l c_l R_l` with respect to the
    /// conjugate precoder blocks, in the same layout as the precoders.
    pub fn rate_gradient(&self, v: &PrecoderSet) -> Result<PrecoderSet> {
        // At the MMSE receiver and W = E^{-1}, the WMMSE objective has the
        // same gradient in V as the negative weighted sum rate.
        let u = self.receivers(v)?;
        let e = self.mse_matrices(v, &u);
        let w = self.weights_from(&e)?;
        let grams = self.receive_grams(&u, &w);
        let d = self.dims();
        let mut g = self.zero_precoders();
        for (l, link) in self.links.iter().enumerate() {
            for (b, &q) in link.bss.iter().enumerate() {
                for f in 0..d.tones {
                    for t in 0..d.slots {
                        let k = self.res(l, f, t);
                        let mut lin = self.channel(q, link.user, f, t).adjoint() * &u.u[k] * &w.w[k] * c64(self.weights[l], 0.0);
                        for (bo, &p) in link.bss.iter().enumerate() {
                            lin -= self.coupling(&grams, q, p, f, t) * &v.blocks[l][self.block_index(bo, f, t)];
                        }
                        g.blocks[l][self.block_index(b, f, t)] = lin;
                    }
                }
            }
        }
        Ok(g)
    }

    /// Norm of the projected gradient of the weighted sum rate over the
    /// per-BS power constraints (zero at a KKT point).
    pub fn projected_gradient_norm(&self, v: &PrecoderSet) -> Result<f64> {
        let g = self.rate_gradient(v)?;
        let d = self.dims();
        let mut total = 0.0;
        for q in 0..d.num_bs {
            for t in 0..d.slots {
                let p = self.group_power(v, q, t);
                let budget = self.instance.power_budget(q);
                let mut inner = 0.0;
                let mut gn = 0.0;
                for &(l, b) in &self.served[q] {
                    for f in 0..d.tones {
                        let k = self.block_index(b, f, t);
                        inner += (v.blocks[l][k].adjoint() * &g.blocks[l][k]).trace().re;
                        gn += frob_sq(&g.blocks[l][k]);
                    }
                }
                // On the boundary only the tangential part (plus any inward
                // component) counts.
                let active = p >= budget * (1.0 - 1e-8);
                if active && inner > 0.0 && p > 0.0 {
                    gn -= inner * inner / p;
                }
                total += gn.max(0.0);
            }
        }
        Ok(total.sqrt())
    }
}

fn rate_from(c: &CMat, s: &CMat) -> Result<f64> {
    let d = s.ncols();
    let x = solve_hpd(c, s)?;
    let m = identity(d) + s.adjoint() * x;
    log_det_hpd(&m)
}

fn mse_from(j: &CMat, s: &CMat, u: &CMat) -> CMat {
    let d = s.ncols();
    let uhs = u.adjoint() * s;
    u.adjoint() * j * u - &uhs - uhs.adjoint() + identity(d)
}

/// `W = E^{-1}`; errors when `E` is not positive definite.
pub fn weight_update(e: &CMat) -> Result<CMat> {
    inverse_hpd(e).map_err(|_| Error::Numeric("MSE matrix is not positive definite".into()))
}

/// Scalar form `w = 1 / e`.
pub fn weight_update_scalar(e: f64) -> Result<f64> {
    if !(e > 0.0) {
        return Err(Error::Numeric(format!("MSE must be positive, got {e}")));
    }
    Ok(1.0 / e)
}

/// Options of [`solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub stop: StopRule,
    /// Utility whose gradient reweights links every iteration.
    pub utility: UtilityConfig,
    /// Group-LASSO weight on per-(link, BS) precoder blocks.
    pub lambda: f64,
    pub seed: u64,
    /// Record the objective after every sub-step.
    pub record_substeps: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            stop: StopRule::default(),
            utility: UtilityConfig::sum_rate(),
            lambda: 0.0,
            seed: 0,
            record_substeps: false,
        }
    }
}

/// Result of [`solve`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub precoders: PrecoderSet,
    pub receivers: ReceiverSet,
    pub weights: WeightSet,
    pub report: SolveReport,
    /// Objective after each sub-step (u, w, v) when requested.
    pub substeps: Vec<f64>,
    /// Link rates of the returned precoders.
    pub link_rates: Vec<f64>,
}

/// Utility of `problem` at per-user rates.
fn user_utility(utility: &UtilityConfig, rates: &[f64]) -> Result<f64> {
    utility.evaluate(rates)
}

/// Runs WMMSE from `init` (random when `None`).
///
/// With a non-linear utility the link weights are set to the utility
/// gradient at the current user rates once per iteration. The run stops on
/// a small relative utility change; the best iterate (by utility) is
/// returned and `report.converged` records whether the rule fired.
pub fn solve(problem: &mut Problem<'_>, init: Option<PrecoderSet>, opts: &SolveOptions) -> Result<Solution> {
    opts.utility.validate()?;
    if !(opts.lambda >= 0.0) {
        return Err(Error::Config("lambda must be nonnegative".into()));
    }
    let start = std::time::Instant::now();
    let base_weights = problem.weights.clone();
    let mut v = init.unwrap_or_else(|| problem.random_precoders(opts.seed));
    let mut rates = problem.user_rates(&v)?;
    let mut util = user_utility(&opts.utility, &rates)?;
    let mut best: Option<(f64, PrecoderSet)> = None;
    let mut records = Vec::new();
    let mut substeps = Vec::new();
    let mut converged = false;
    let mut last_w = None;

    for iter in 1..=opts.stop.max_iters {
        if !opts.utility.is_sum_rate() {
            let g = opts.utility.rate_gradient(&rates)?;
            let c: Vec<f64> = problem.links.iter().zip(&base_weights).map(|(l, &b)| b * g[l.user]).collect();
            problem.set_weights(c)?;
        }
        let u = problem.receivers(&v)?;
        let e = problem.mse_matrices(&v, &u);
        let w = problem.weights_from(&e)?;
        if opts.record_substeps {
            if let Some(pw) = &last_w {
                substeps.push(problem.objective(&v, &u, pw, opts.lambda)?);
            }
            substeps.push(problem.objective(&v, &u, &w, opts.lambda)?);
        }
        v = problem.precoders(&v, &u, &w, opts.lambda)?;
        let objective = problem.objective(&v, &u, &w, opts.lambda)?;
        if opts.record_substeps {
            substeps.push(objective);
        }
        let new_rates = problem.user_rates(&v)?;
        let new_util = user_utility(&opts.utility, &new_rates)?;
        records.push(IterationRecord {
            iteration: iter,
            objective,
            sum_rate: new_rates.iter().sum(),
            min_rate: new_rates.iter().copied().fold(f64::INFINITY, f64::min),
            max_power_violation: problem.max_power_violation(&v).max(0.0),
        });
        if best.as_ref().is_none_or(|(b, _)| new_util >= *b) {
            best = Some((new_util, v.clone()));
        }
        let done = opts.stop.done(util, new_util);
        rates = new_rates;
        util = new_util;
        last_w = Some(w);
        if done {
            converged = true;
            break;
        }
    }
    problem.weights = base_weights;
    let v = match best {
        Some((_, bv)) if !converged => bv,
        _ => v,
    };
    let u = problem.receivers(&v)?;
    let e = problem.mse_matrices(&v, &u);
    let w = problem.weights_from(&e)?;
    let link_rates = problem.link_rates(&v)?;
    let user_rates = problem.user_links.iter().map(|ls| ls.iter().map(|&l| link_rates[l]).sum()).collect();
    Ok(Solution {
        precoders: v,
        receivers: u,
        weights: w,
        report: SolveReport {
            iterations: records,
            user_rates,
            converged,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        substeps,
        link_rates,
    })
}

/// Sum-rate WMMSE on the instance's home association.
pub fn solve_wmmse(instance: &NetworkInstance, links: Vec<Link>, init: Option<PrecoderSet>, opts: &SolveOptions) -> Result<Solution> {
    let mut p = Problem::new(instance, links)?;
    solve(&mut p, init, opts)
}

/// Best of `inits` random starts by final utility.
pub fn solve_best_of(instance: &NetworkInstance, links: Vec<Link>, inits: usize, opts: &SolveOptions) -> Result<Solution> {
    let mut best: Option<(f64, Solution)> = None;
    for k in 0..inits.max(1) {
        let o = SolveOptions { seed: derive_seed(opts.seed, &[k as u64]), ..*opts };
        let sol = solve_wmmse(instance, links.clone(), None, &o)?;
        let u = opts.utility.evaluate(&sol.report.user_rates)?;
        if best.as_ref().is_none_or(|(b, _)| u > *b) {
            best = Some((u, sol));
        }
    }
    Ok(best.expect("at least one start").1)
}

/// Frobenius norm of the precoder block of link `l` from serving position
/// `b`, over all tones and slots.
pub fn block_norm(problem: &Problem<'_>, v: &PrecoderSet, l: usize, b: usize) -> f64 {
    let d = problem.dims();
    (0..d.tones)
        .flat_map(|f| (0..d.slots).map(move |t| (f, t)))
        .map(|(f, t)| frob_sq(&v.blocks[l][problem.block_index(b, f, t)]))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net_model::InstanceParts;

    pub(crate) fn scalar_instance(gains: &[&[f64]], noise: f64, power: f64) -> NetworkInstance {
        // gains[q][i] is the real channel from BS q to user i
        let nq = gains.len();
        let ni = gains[0].len();
        let mut channels = Vec::new();
        for row in gains {
            for &g in row.iter() {
                channels.push(CMat::from_element(1, 1, c64(g, 0.0)));
            }
        }
        NetworkInstance::new(InstanceParts {
            dims: Dims { num_bs: nq, num_users: ni, tx_antennas: 1, rx_antennas: 1, tones: 1, slots: 1 },
            channels,
            noise_power: vec![noise; ni],
            power_budget: vec![power; nq],
            link_gain: vec![],
            home_bs: (0..ni).map(|i| i % nq).collect(),
            bs_positions: vec![],
            user_positions: vec![],
        })
        .unwrap()
    }

    fn scalar_v(p: &Problem<'_>, vals: &[f64]) -> PrecoderSet {
        let mut v = p.zero_precoders();
        for (l, &x) in vals.iter().enumerate() {
            v.blocks[l][0] = CMat::from_element(1, 1, c64(x, 0.0));
        }
        v
    }

    #[test]
    fn rate_examples() {
        let inst = scalar_instance(&[&[1.0]], 1.0, 1.0);
        let p = Problem::new(&inst, home_links(&inst)).unwrap();
        let v = scalar_v(&p, &[1.0]);
        assert!((p.link_rate(&v, 0, 0, 0).unwrap() - 2f64.ln()).abs() < 1e-14);
        assert_eq!(p.link_rate(&p.zero_precoders(), 0, 0, 0).unwrap(), 0.0);

        let inst = scalar_instance(&[&[1.0, 1.0], &[1.0, 1.0]], 1.0, 1.0);
        let p = Problem::new(&inst, home_links(&inst)).unwrap();
        let v = scalar_v(&p, &[1.0, 1.0]);
        for l in 0..2 {
            assert!((p.link_rate(&v, l, 0, 0).unwrap() - 1.5f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn mse_and_receiver_examples() {
        let inst = scalar_instance(&[&[1.0]], 1.0, 1.0);
        let p = Problem::new(&inst, home_links(&inst)).unwrap();
        let v = scalar_v(&p, &[1.0]);
        let u = CMat::from_element(1, 1, c64(0.5, 0.0));
        assert!((p.mse_matrix(&v, &u, 0, 0, 0)[(0, 0)].re - 0.5).abs() < 1e-15);
        let u0 = CMat::zeros(1, 1);
        assert!((p.mse_matrix(&v, &u0, 0, 0, 0)[(0, 0)].re - 1.0).abs() < 1e-15);
        let um = p.mmse_receiver(&v, 0, 0, 0).unwrap();
        assert!((um[(0, 0)] - c64(0.5, 0.0)).norm() < 1e-15);
        let uz = p.mmse_receiver(&p.zero_precoders(), 0, 0, 0).unwrap();
        assert_eq!(uz[(0, 0)], c64(0.0, 0.0));
    }

    #[test]
    fn weight_examples() {
        assert_eq!(weight_update_scalar(0.5).unwrap(), 2.0);
        assert_eq!(weight_update_scalar(1.0).unwrap(), 1.0);
        assert!(matches!(weight_update_scalar(0.0), Err(Error::Numeric(_))));
        let e = CMat::from_row_slice(2, 2, &[c64(0.5, 0.0), c64(0.1, 0.1), c64(0.1, -0.1), c64(0.4, 0.0)]);
        let w = weight_update(&e).unwrap();
        assert!(((&w * &e) - identity(2)).norm() < 1e-12);
    }

    #[test]
    fn precoder_bisection_example() {
        let inst = scalar_instance(&[&[1.0]], 1.0, 1.0);
        let p = Problem::new(&inst, home_links(&inst)).unwrap();
        let v = scalar_v(&p, &[1.0]);
        let u = ReceiverSet { u: vec![CMat::from_element(1, 1, c64(0.5, 0.0))] };
        let w = WeightSet { w: vec![CMat::from_element(1, 1, c64(2.0, 0.0))] };
        let nv = p.precoder_update(&v, &u, &w, 0, 0.0).unwrap();
        assert!((nv.blocks[0][0][(0, 0)] - c64(1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn single_user_reaches_full_power_capacity() {
        let inst = scalar_instance(&[&[0.8]], 0.5, 2.0);
        let sol = solve_wmmse(&inst, home_links(&inst), None, &SolveOptions::default()).unwrap();
        let expect = (1.0 + 2.0 * 0.64 / 0.5f64).ln();
        assert!((sol.report.user_rates[0] - expect).abs() < 1e-6);
    }

    #[test]
    fn sequential_and_parallel_iterations_agree() {
        let inst = crate::net_model::HexLayout { cells: 7, sectors_per_cell: 1, users_per_sector: 2, tx_antennas: 2, rx_antennas: 2, ..Default::default() }
            .generate(4)
            .unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                let opts = SolveOptions { stop: StopRule::fixed(5), seed: 3, ..Default::default() };
                solve_wmmse(&inst, home_links(&inst), None, &opts).unwrap().precoders
            })
        };
        assert_eq!(run(1), run(4));
    }
}
