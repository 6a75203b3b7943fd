//! Model assembly: parameter ownership and the two-branch forward pass.

use crate::error::{Error, Result};
use crate::geom::DistanceMatrix;
use crate::numerics::{Rng, Tape, Tensor, Var};
use crate::tsdvnet::layers::{
    atom_embed, flow_head, inner_update, mix_update, pair_embed, rbf_features,
    triangular_update, AttnKeys, PairContext,
};
use crate::tsdvnet::{init_params, NetConfig, NetParams};

/// Owned network parameters plus their configuration.
#[derive(Clone, Debug)]
pub struct ModelParams {
    config: NetConfig,
    params: NetParams<Tensor>,
}

impl ModelParams {
    /// Fresh parameters: uniform fan-in init for weights, zero biases,
    /// PhysNet-style RBF grid. Deterministic given the generator state.
    pub fn init(config: NetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        Ok(ModelParams {
            config,
            params: init_params(&config, rng),
        })
    }

    pub fn from_parts(config: NetConfig, params: NetParams<Tensor>) -> Result<Self> {
        config.validate()?;
        Ok(ModelParams { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &NetParams<Tensor> {
        &self.params
    }

    /// All tensors in canonical traversal order.
    pub fn to_vec(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.params.map(&mut |t: &Tensor| out.push(t.clone()));
        out
    }

    /// Replace every tensor, shapes checked, same canonical order.
    pub fn set_from_vec(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        let expected = self.to_vec().len();
        if tensors.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} tensors provided, model has {expected}",
                tensors.len()
            )));
        }
        let mut iter = tensors.into_iter();
        let mut shape_err = None;
        let new_params = self.params.map(&mut |old: &Tensor| {
            let new = iter.next().expect("length checked");
            if new.shape() != old.shape() && shape_err.is_none() {
                shape_err = Some(format!("{:?} vs {:?}", new.shape(), old.shape()));
            }
            new
        });
        if let Some(msg) = shape_err {
            return Err(Error::ShapeMismatch(msg));
        }
        self.params = new_params;
        Ok(())
    }

    /// Named tensors in canonical order (checkpoint layout).
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.params.visit(&mut |name, t| out.push((name, t)));
        out
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        let mut count = 0;
        self.params.map(&mut |t: &Tensor| count += t.len());
        count
    }

    /// Record every parameter on a tape.
    pub fn bind<'t>(&self, tape: &'t Tape) -> NetParams<Var<'t>> {
        self.params.map(&mut |t: &Tensor| tape.leaf(t.clone()))
    }

    /// Off-tape forward pass; returns the velocity matrix `[n, n]`
    /// (symmetric, zero diagonal).
    pub fn forward(
        &self,
        z: &[u8],
        d_r: &DistanceMatrix,
        d_p: &DistanceMatrix,
        d_ts: &DistanceMatrix,
        t: f64,
    ) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let v = forward_on_tape(&tape, &bound, &self.config, z, d_r, d_p, d_ts, t)?;
        let value = v.value();
        if !value.all_finite() {
            return Err(Error::NonFinite("velocity output".into()));
        }
        let n = z.len();
        Tensor::new(vec![n, n], value.into_data())
    }
}

/// Per-molecule live state during the forward pass.
struct MoleculeState<'t> {
    ctx: PairContext,
    rbf: Var<'t>,
    x: Var<'t>,
    pair: Var<'t>,
}

fn embed_molecule<'t>(
    tape: &'t Tape,
    branch_embed: &crate::tsdvnet::EmbedParams<Var<'t>>,
    config: &NetConfig,
    z: &[u8],
    d: &DistanceMatrix,
    t: f64,
) -> Result<MoleculeState<'t>> {
    let ctx = PairContext::new(d, config.cutoff);
    let rbf = rbf_features(tape, branch_embed, &ctx, config.rbf_count);
    let x = atom_embed(tape, branch_embed, config, z, t, &ctx, rbf)?;
    let pair = pair_embed(branch_embed, x, &ctx, rbf);
    Ok(MoleculeState { ctx, rbf, x, pair })
}

/// Full two-branch forward pass on an existing tape. Returns the velocity as
/// a `[n^2, 1]` column (symmetrized, zero diagonal); training composes the
/// loss on the same tape.
#[allow(clippy::too_many_arguments)]
pub fn forward_on_tape<'t>(
    tape: &'t Tape,
    bound: &NetParams<Var<'t>>,
    config: &NetConfig,
    z: &[u8],
    d_r: &DistanceMatrix,
    d_p: &DistanceMatrix,
    d_ts: &DistanceMatrix,
    t: f64,
) -> Result<Var<'t>> {
    let n = z.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty atom list".into()));
    }
    for d in [d_r, d_p, d_ts] {
        if d.n() != n {
            return Err(Error::ShapeMismatch(format!(
                "distance matrix for {} atoms, {} atom types",
                d.n(),
                n
            )));
        }
    }
    if let Some(&bad) = z.iter().find(|&&zi| !(1..=118).contains(&zi)) {
        return Err(Error::UnknownElement(format!("atomic number {bad}")));
    }

    let mut ts = embed_molecule(tape, &bound.main.embed, config, z, d_ts, t)?;
    let mut r = embed_molecule(tape, &bound.condition.embed, config, z, d_r, t)?;
    let mut p = embed_molecule(tape, &bound.condition.embed, config, z, d_p, t)?;

    for l in 0..config.blocks {
        let bm = &bound.main.blocks[l];
        let bc = &bound.condition.blocks[l];

        // Cross-molecule message passing, computed simultaneously from the
        // incoming representations. The transition state attends with
        // reactant and product queries; in the condition branch the two
        // molecules attend to each other, so the branch stays a pure
        // (reactant, product) encoder. Each query sum shares one attention
        // parameter set, which is what makes the reactant/product exchange
        // an exact symmetry.
        let ts_keys = AttnKeys::new(tape, &bm.cross, ts.x, ts.pair, &ts.ctx, ts.rbf);
        let r_keys = AttnKeys::new(tape, &bc.cross, r.x, r.pair, &r.ctx, r.rbf);
        let p_keys = AttnKeys::new(tape, &bc.cross, p.x, p.pair, &p.ctx, p.rbf);
        let ts_x = (ts.x + (ts_keys.messages(r.x) + ts_keys.messages(p.x)))
            .layer_norm(bm.cross_norm.gamma, bm.cross_norm.beta);
        let r_x = (r.x + r_keys.messages(p.x)).layer_norm(bc.cross_norm.gamma, bc.cross_norm.beta);
        let p_x = (p.x + p_keys.messages(r.x)).layer_norm(bc.cross_norm.gamma, bc.cross_norm.beta);
        ts.x = ts_x;
        r.x = r_x;
        p.x = p_x;

        ts.x = inner_update(tape, &bm.inner, &bm.inner_norm, ts.x, ts.pair, &ts.ctx, ts.rbf);
        r.x = inner_update(tape, &bc.inner, &bc.inner_norm, r.x, r.pair, &r.ctx, r.rbf);
        p.x = inner_update(tape, &bc.inner, &bc.inner_norm, p.x, p.pair, &p.ctx, p.rbf);

        ts.pair = mix_update(&bm.mix, &bm.mix_norm, ts.x, ts.pair, &ts.ctx);
        r.pair = mix_update(&bc.mix, &bc.mix_norm, r.x, r.pair, &r.ctx);
        p.pair = mix_update(&bc.mix, &bc.mix_norm, p.x, p.pair, &p.ctx);

        ts.pair = triangular_update(&bm.tri, ts.pair, n);
        r.pair = triangular_update(&bc.tri, r.pair, n);
        p.pair = triangular_update(&bc.tri, p.pair, n);
    }

    Ok(flow_head(tape, &bound.head, ts.x, ts.pair, &ts.ctx))
}
