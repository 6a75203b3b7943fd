//! Network building blocks, both as plain functions (time embedding, RBF)
//! and as tape builders used by the forward pass.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::geom::DistanceMatrix;
use crate::numerics::{Tape, Tensor, Var};
use crate::tsdvnet::{AttnParams, EmbedParams, LnParams, MixParams, NetConfig, TriParams};

/// Sinusoidal timestep embedding:
/// `m_k = t * exp(-ln(10000) * k / (dim/2 - 1))`, output `[sin(m), cos(m)]`.
pub fn time_embed(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 || dim < 4 {
        return Err(Error::InvalidArgument(format!(
            "time embedding dimension must be even and >= 4, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    let rate = (10000.0_f64).ln() / (half as f64 - 1.0);
    for k in 0..half {
        let m = t * (-rate * k as f64).exp();
        out[k] = m.sin();
        out[half + k] = m.cos();
    }
    Ok(out)
}

/// Cosine cutoff envelope: `0.5 (cos(pi d / d_cut) + 1)` inside the cutoff,
/// zero outside.
pub fn cutoff_envelope(d: f64, d_cut: f64) -> f64 {
    if d <= d_cut {
        0.5 * ((std::f64::consts::PI * d / d_cut).cos() + 1.0)
    } else {
        0.0
    }
}

/// Radial basis expansion
/// `e_k(d) = phi(d) * exp(-beta_k (exp(-d) - mu_k)^2)`.
pub fn rbf_expand(d: f64, beta: &[f64], mu: &[f64], d_cut: f64) -> Vec<f64> {
    let phi = cutoff_envelope(d, d_cut);
    let ed = (-d).exp();
    beta.iter()
        .zip(mu)
        .map(|(&b, &m)| phi * (-b * (ed - m) * (ed - m)).exp())
        .collect()
}

/// Per-molecule constants derived from one distance matrix: cutoff
/// envelopes, masks, and the pair index maps.
pub struct PairContext {
    pub n: usize,
    /// exp(-d_ij), column [n^2].
    pub exp_neg_d: Tensor,
    /// phi(d_ij) including the diagonal (phi(0) = 1), column [n^2].
    pub phi: Tensor,
    /// phi(d_ij) with the diagonal zeroed: the neighborhood weight of j for i.
    pub phi_masked: Tensor,
    /// 1 for i != j, 0 on the diagonal.
    pub diag_mask: Tensor,
    /// Row index of each pair (p -> i).
    pub idx_i: Rc<Vec<usize>>,
    /// Column index of each pair (p -> j).
    pub idx_j: Rc<Vec<usize>>,
}

impl PairContext {
    pub fn new(d: &DistanceMatrix, cutoff: f64) -> Self {
        let n = d.n();
        let mut exp_neg_d = Vec::with_capacity(n * n);
        let mut phi = Vec::with_capacity(n * n);
        let mut phi_masked = Vec::with_capacity(n * n);
        let mut diag_mask = Vec::with_capacity(n * n);
        let mut idx_i = Vec::with_capacity(n * n);
        let mut idx_j = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let dij = d.get(i, j);
                let p = cutoff_envelope(dij, cutoff);
                exp_neg_d.push((-dij).exp());
                phi.push(p);
                phi_masked.push(if i == j { 0.0 } else { p });
                diag_mask.push(if i == j { 0.0 } else { 1.0 });
                idx_i.push(i);
                idx_j.push(j);
            }
        }
        PairContext {
            n,
            exp_neg_d: Tensor::vector(&exp_neg_d),
            phi: Tensor::vector(&phi),
            phi_masked: Tensor::vector(&phi_masked),
            diag_mask: Tensor::vector(&diag_mask),
            idx_i: Rc::new(idx_i),
            idx_j: Rc::new(idx_j),
        }
    }
}

/// On-tape RBF features for every pair: `[n^2, K]`. Trainable beta/mu flow
/// gradients; the envelope and exp(-d) are constants of the input geometry.
pub fn rbf_features<'t>(
    tape: &'t Tape,
    embed: &EmbedParams<Var<'t>>,
    ctx: &PairContext,
    k: usize,
) -> Var<'t> {
    let m = ctx.n * ctx.n;
    let ones = tape.leaf(Tensor::ones(&[m, k]));
    let ed = tape.leaf(ctx.exp_neg_d.clone());
    let ed_bcast = ones.scale_rows(ed);
    let diff = ed_bcast.add_row(embed.rbf_mu.scale(-1.0));
    let sq = diff * diff;
    let scaled = sq.mul_row(embed.rbf_beta).scale(-1.0);
    let gauss = scaled.exp();
    let phi = tape.leaf(ctx.phi.clone());
    gauss.scale_rows(phi)
}

fn linear<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Var<'t> {
    x.matmul(w).add_row(b)
}

/// Atom embedding: type lookup + time embedding + gated neighbor aggregation.
pub fn atom_embed<'t>(
    tape: &'t Tape,
    embed: &EmbedParams<Var<'t>>,
    config: &NetConfig,
    z: &[u8],
    t: f64,
    ctx: &PairContext,
    rbf: Var<'t>,
) -> Result<Var<'t>> {
    let n = z.len();
    let z_rows: Vec<usize> = z.iter().map(|&zi| zi as usize - 1).collect();
    let mut x = embed.table.gather_rows(Rc::new(z_rows));
    let te = time_embed(t, config.atom_dim)?;
    x = x.add_row(tape.leaf(Tensor::vector(&te)));

    // Neighbor aggregation gated by W_F RBF(d_ij), j != i.
    let gate = rbf.matmul(embed.w_filter);
    let xj = x.gather_rows(ctx.idx_j.clone());
    let mask = tape.leaf(ctx.diag_mask.clone());
    let messages = (xj * gate).scale_rows(mask);
    let agg = messages.row_block_sum(n);
    Ok(linear(x.concat(agg), embed.w_neighbor, embed.b_neighbor))
}

/// Pair embedding from atom features and RBF features.
pub fn pair_embed<'t>(
    embed: &EmbedParams<Var<'t>>,
    x: Var<'t>,
    ctx: &PairContext,
    rbf: Var<'t>,
) -> Var<'t> {
    let src = linear(x, embed.w_src, embed.b_src).gather_rows(ctx.idx_i.clone());
    let dst = linear(x, embed.w_dst, embed.b_dst).gather_rows(ctx.idx_j.clone());
    let r = linear(rbf, embed.w_rbf, embed.b_rbf);
    linear(src.concat(dst).concat(r), embed.w_edge, embed.b_edge)
}

/// Attention with key/value context cached so several query sources can reuse
/// it (the cross-molecule update queries the same keys from two molecules).
pub struct AttnKeys<'t> {
    keys: Var<'t>,
    values_gated: Var<'t>,
    pair_bias: Var<'t>,
    phi_masked: Var<'t>,
    idx_i: Rc<Vec<usize>>,
    n: usize,
    w_q: Var<'t>,
    b_q: Var<'t>,
}

impl<'t> AttnKeys<'t> {
    pub fn new(
        tape: &'t Tape,
        params: &AttnParams<Var<'t>>,
        x_keys: Var<'t>,
        pair: Var<'t>,
        ctx: &PairContext,
        rbf: Var<'t>,
    ) -> Self {
        let k = linear(x_keys, params.w_k, params.b_k).gather_rows(ctx.idx_j.clone());
        let v = linear(x_keys, params.w_v, params.b_v).gather_rows(ctx.idx_j.clone());
        let dk = linear(rbf, params.w_dk, params.b_dk);
        let dv = linear(rbf, params.w_dv, params.b_dv);
        let dp = linear(pair, params.w_p, params.b_p);
        AttnKeys {
            keys: k * dk,
            values_gated: v * dv,
            pair_bias: dp,
            phi_masked: tape.leaf(ctx.phi_masked.clone()),
            idx_i: ctx.idx_i.clone(),
            n: ctx.n,
            w_q: params.w_q,
            b_q: params.b_q,
        }
    }

    /// Aggregated messages `[n, d_x]` for queries taken from `x_query`:
    /// `sum_j V (.) D_V (.) SiLU(Q (.) K (.) D_K + D_P) * phi(d_ij)`.
    pub fn messages(&self, x_query: Var<'t>) -> Var<'t> {
        let q = linear(x_query, self.w_q, self.b_q).gather_rows(self.idx_i.clone());
        let activated = (q * self.keys + self.pair_bias).silu();
        let gated = self.values_gated * activated;
        gated.scale_rows(self.phi_masked).row_block_sum(self.n)
    }
}

fn layer_norm<'t>(x: Var<'t>, ln: &LnParams<Var<'t>>) -> Var<'t> {
    x.layer_norm(ln.gamma, ln.beta)
}

/// Inner-molecule message passing: residual attention over the molecule's own
/// representation, then layer norm.
pub fn inner_update<'t>(
    tape: &'t Tape,
    params: &AttnParams<Var<'t>>,
    norm: &LnParams<Var<'t>>,
    x: Var<'t>,
    pair: Var<'t>,
    ctx: &PairContext,
    rbf: Var<'t>,
) -> Var<'t> {
    let keys = AttnKeys::new(tape, params, x, pair, ctx, rbf);
    layer_norm(x + keys.messages(x), norm)
}

/// Kronecker-product pair update shared by the mixing block (out = d_p,
/// residual + norm) and the flow head (out = 1, raw).
fn kron_mix<'t>(params: &MixParams<Var<'t>>, x: Var<'t>, pair: Var<'t>, ctx: &PairContext) -> Var<'t> {
    let xi = x.gather_rows(ctx.idx_i.clone());
    let xj = x.gather_rows(ctx.idx_j.clone());
    let x_map = linear(xi.concat(xj), params.w_map, params.b_map);
    let h = x_map.concat(pair);
    let pa = linear(h, params.w_a, params.b_a);
    let pb = linear(h, params.w_b, params.b_b);
    linear(pa.batched_outer(pb), params.w_ab, params.b_ab)
}

/// Mixing update: residual Kronecker-product refinement of pair features.
pub fn mix_update<'t>(
    params: &MixParams<Var<'t>>,
    norm: &LnParams<Var<'t>>,
    x: Var<'t>,
    pair: Var<'t>,
    ctx: &PairContext,
) -> Var<'t> {
    layer_norm(pair + kron_mix(params, x, pair, ctx), norm)
}

/// Triangular update over pair features (gated outgoing + incoming sums).
pub fn triangular_update<'t>(params: &TriParams<Var<'t>>, pair: Var<'t>, n: usize) -> Var<'t> {
    let m = linear(pair, params.w_m1, params.b_m1).sigmoid()
        * linear(pair, params.w_m2, params.b_m2);
    let nn = linear(pair, params.w_n1, params.b_n1).sigmoid()
        * linear(pair, params.w_n2, params.b_n2);
    let outgoing = m.tri_mul(nn, n);
    let incoming = m.pair_transpose(n).tri_mul(nn.pair_transpose(n), n);
    let mid = layer_norm(outgoing + incoming, &params.norm_mid);
    let gate = linear(pair, params.w_o1, params.b_o1).sigmoid();
    let update = gate * linear(mid, params.w_o2, params.b_o2);
    layer_norm(pair + update, &params.norm_out)
}

/// Flow head: scalar per pair via the Kronecker-product map, then explicit
/// symmetrization and zero diagonal.
pub fn flow_head<'t>(
    tape: &'t Tape,
    params: &MixParams<Var<'t>>,
    x: Var<'t>,
    pair: Var<'t>,
    ctx: &PairContext,
) -> Var<'t> {
    let raw = kron_mix(params, x, pair, ctx);
    let sym = (raw + raw.pair_transpose(ctx.n)).scale(0.5);
    sym.scale_rows(tape.leaf(ctx.diag_mask.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_embed_at_zero() {
        let e = time_embed(0.0, 8).unwrap();
        for k in 0..4 {
            assert_eq!(e[k], 0.0);
            assert_eq!(e[4 + k], 1.0);
        }
    }

    #[test]
    fn time_embed_first_frequency_is_unit() {
        let e = time_embed(1.0, 8).unwrap();
        assert!((e[0] - 1.0_f64.sin()).abs() < 1e-15);
        assert!((e[4] - 1.0_f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn time_embed_norm_bound() {
        for &t in &[0.0, 0.3, 0.99, 1.0] {
            let e = time_embed(t, 16).unwrap();
            let norm2: f64 = e.iter().map(|v| v * v).sum();
            assert!(norm2 <= 16.0 + 1e-12);
        }
    }

    #[test]
    fn time_embed_rejects_odd_dim() {
        assert!(time_embed(0.5, 7).is_err());
        assert!(time_embed(0.5, 2).is_err());
    }

    #[test]
    fn rbf_zero_beyond_cutoff() {
        let beta = vec![1.0; 4];
        let mu = vec![0.1, 0.3, 0.5, 0.9];
        let e = rbf_expand(25.0, &beta, &mu, 20.0);
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rbf_at_zero_distance() {
        let beta = vec![2.0, 3.0];
        let mu = vec![0.25, 0.75];
        let e = rbf_expand(0.0, &beta, &mu, 20.0);
        // phi(0) = 1 and exp(-0) = 1.
        assert!((e[0] - (-2.0 * (1.0 - 0.25_f64) * (1.0 - 0.25)).exp()).abs() < 1e-15);
        assert!((e[1] - (-3.0 * (1.0 - 0.75_f64) * (1.0 - 0.75)).exp()).abs() < 1e-15);
    }

    #[test]
    fn envelope_continuous_at_cutoff() {
        let d_cut = 20.0;
        assert!(cutoff_envelope(d_cut, d_cut).abs() < 1e-15);
        assert!(cutoff_envelope(d_cut - 1e-9, d_cut) < 1e-9);
        assert_eq!(cutoff_envelope(d_cut + 1e-9, d_cut), 0.0);
    }

    #[test]
    fn on_tape_rbf_matches_reference() {
        use crate::geom::{pairwise_distances, random_conformer};
        use crate::numerics::Rng;
        use crate::tsdvnet::{init_params, NetConfig};

        let config = NetConfig {
            blocks: 1,
            atom_dim: 8,
            pair_dim: 8,
            rbf_count: 6,
            cutoff: 10.0,
        };
        let mut rng = Rng::new(8);
        let params = init_params(&config, &mut rng);
        let c = random_conformer(&mut rng, 4, 2.0);
        let d = pairwise_distances(&c);
        let ctx = PairContext::new(&d, config.cutoff);

        let tape = Tape::new();
        let bound = params.map(&mut |t: &Tensor| tape.leaf(t.clone()));
        let feats = rbf_features(&tape, &bound.main.embed, &ctx, config.rbf_count).value();

        let beta = params.main.embed.rbf_beta.data();
        let mu = params.main.embed.rbf_mu.data();
        for i in 0..4 {
            for j in 0..4 {
                let reference = rbf_expand(d.get(i, j), beta, mu, config.cutoff);
                for k in 0..config.rbf_count {
                    let got = feats.at(i * 4 + j, k);
                    assert!(
                        (got - reference[k]).abs() < 1e-14,
                        "pair ({i},{j}) basis {k}: {got} vs {}",
                        reference[k]
                    );
                }
            }
        }
    }
}
