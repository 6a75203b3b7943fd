//! The two-branch velocity-field network over distance geometry.
//!
//! The main branch carries the evolving transition-state representation; the
//! condition branch (identical architecture, independent parameters) encodes
//! the reactant and product. Atom representations fuse across branches through
//! gated attention; pair representations update through a Kronecker-product
//! mixing step and an AlphaFold-style triangular step. The head reads a
//! symmetric, zero-diagonal velocity matrix off the pair representations.

pub mod checkpoint;
pub mod layers;
pub mod model;

pub use layers::{rbf_expand, time_embed};
pub use model::ModelParams;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Number of distinct atom types the embedding table covers.
pub const N_ELEMENTS: usize = 118;

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetConfig {
    /// Update blocks L.
    pub blocks: usize,
    /// Atom representation width d_x (also the time-embedding width).
    pub atom_dim: usize,
    /// Pair representation width d_p.
    pub pair_dim: usize,
    /// Radial basis count K.
    pub rbf_count: usize,
    /// Cutoff distance in angstroms.
    pub cutoff: f64,
}

impl Default for NetConfig {
    /// Paper-scale defaults: 6 blocks, width 128, 20 angstrom cutoff.
    fn default() -> Self {
        NetConfig {
            blocks: 6,
            atom_dim: 128,
            pair_dim: 128,
            rbf_count: 64,
            cutoff: 20.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1 {
            return Err(Error::InvalidArgument("blocks must be >= 1".into()));
        }
        if self.atom_dim < 4 || self.atom_dim % 2 != 0 {
            return Err(Error::InvalidArgument(
                "atom_dim must be even and >= 4 (the time embedding shares it)".into(),
            ));
        }
        if self.pair_dim < 2 || self.pair_dim % 2 != 0 {
            return Err(Error::InvalidArgument("pair_dim must be even and >= 2".into()));
        }
        if self.rbf_count < 1 {
            return Err(Error::InvalidArgument("rbf_count must be >= 1".into()));
        }
        if !(self.cutoff > 0.0) {
            return Err(Error::InvalidArgument("cutoff must be positive".into()));
        }
        Ok(())
    }

    /// Width of the Kronecker factors in mixing updates and the flow head.
    pub fn kron_dim(&self) -> usize {
        (self.pair_dim as f64).sqrt().ceil() as usize
    }
}

// Parameter containers are generic over the leaf type so the same structure
// holds owned tensors (`NetParams<Tensor>`) and tape handles
// (`NetParams<Var>`); `map` defines the canonical traversal order used by
// flattening, binding, and checkpoints.

#[derive(Clone, Debug)]
pub struct LnParams<T> {
    pub gamma: T,
    pub beta: T,
}

#[derive(Clone, Debug)]
pub struct AttnParams<T> {
    pub w_q: T,
    pub b_q: T,
    pub w_k: T,
    pub b_k: T,
    pub w_v: T,
    pub b_v: T,
    pub w_dk: T,
    pub b_dk: T,
    pub w_dv: T,
    pub b_dv: T,
    pub w_p: T,
    pub b_p: T,
}

/// Kronecker-product mixing parameters, shared by the edge update and the
/// flow head (the head maps to a scalar instead of d_p).
#[derive(Clone, Debug)]
pub struct MixParams<T> {
    pub w_map: T,
    pub b_map: T,
    pub w_a: T,
    pub b_a: T,
    pub w_b: T,
    pub b_b: T,
    pub w_ab: T,
    pub b_ab: T,
}

#[derive(Clone, Debug)]
pub struct TriParams<T> {
    pub w_m1: T,
    pub b_m1: T,
    pub w_m2: T,
    pub b_m2: T,
    pub w_n1: T,
    pub b_n1: T,
    pub w_n2: T,
    pub b_n2: T,
    pub norm_mid: LnParams<T>,
    pub w_o1: T,
    pub b_o1: T,
    pub w_o2: T,
    pub b_o2: T,
    pub norm_out: LnParams<T>,
}

#[derive(Clone, Debug)]
pub struct EmbedParams<T> {
    /// Atom-type embedding table [118, d_x].
    pub table: T,
    /// RBF shape parameters, one per basis.
    pub rbf_beta: T,
    pub rbf_mu: T,
    /// Neighbor filter W_F: [K, d_x].
    pub w_filter: T,
    /// Post-aggregation mix W_N: [2 d_x, d_x].
    pub w_neighbor: T,
    pub b_neighbor: T,
    /// Pair embedding pieces.
    pub w_src: T,
    pub b_src: T,
    pub w_dst: T,
    pub b_dst: T,
    pub w_rbf: T,
    pub b_rbf: T,
    pub w_edge: T,
    pub b_edge: T,
}

#[derive(Clone, Debug)]
pub struct BlockParams<T> {
    pub cross: AttnParams<T>,
    pub cross_norm: LnParams<T>,
    pub inner: AttnParams<T>,
    pub inner_norm: LnParams<T>,
    pub mix: MixParams<T>,
    pub mix_norm: LnParams<T>,
    pub tri: TriParams<T>,
}

#[derive(Clone, Debug)]
pub struct BranchParams<T> {
    pub embed: EmbedParams<T>,
    pub blocks: Vec<BlockParams<T>>,
}

/// Every learnable tensor of the network.
#[derive(Clone, Debug)]
pub struct NetParams<T> {
    pub main: BranchParams<T>,
    pub condition: BranchParams<T>,
    pub head: MixParams<T>,
}

macro_rules! map_fields {
    ($name:ident<$t:ident> { $($field:ident),+ $(,)? }) => {
        impl<$t> $name<$t> {
            pub fn map<U>(&self, f: &mut impl FnMut(&$t) -> U) -> $name<U> {
                $name {
                    $($field: f(&self.$field),)+
                }
            }

            pub fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a $t)) {
                $(f(format!("{path}.{}", stringify!($field)), &self.$field);)+
            }
        }
    };
}

map_fields!(LnParams<T> { gamma, beta });
map_fields!(AttnParams<T> { w_q, b_q, w_k, b_k, w_v, b_v, w_dk, b_dk, w_dv, b_dv, w_p, b_p });
map_fields!(MixParams<T> { w_map, b_map, w_a, b_a, w_b, b_b, w_ab, b_ab });
map_fields!(EmbedParams<T> {
    table, rbf_beta, rbf_mu, w_filter, w_neighbor, b_neighbor,
    w_src, b_src, w_dst, b_dst, w_rbf, b_rbf, w_edge, b_edge,
});

impl<T> TriParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> TriParams<U> {
        TriParams {
            w_m1: f(&self.w_m1),
            b_m1: f(&self.b_m1),
            w_m2: f(&self.w_m2),
            b_m2: f(&self.b_m2),
            w_n1: f(&self.w_n1),
            b_n1: f(&self.b_n1),
            w_n2: f(&self.w_n2),
            b_n2: f(&self.b_n2),
            norm_mid: self.norm_mid.map(f),
            w_o1: f(&self.w_o1),
            b_o1: f(&self.b_o1),
            w_o2: f(&self.w_o2),
            b_o2: f(&self.b_o2),
            norm_out: self.norm_out.map(f),
        }
    }

    pub fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{path}.w_m1"), &self.w_m1);
        f(format!("{path}.b_m1"), &self.b_m1);
        f(format!("{path}.w_m2"), &self.w_m2);
        f(format!("{path}.b_m2"), &self.b_m2);
        f(format!("{path}.w_n1"), &self.w_n1);
        f(format!("{path}.b_n1"), &self.b_n1);
        f(format!("{path}.w_n2"), &self.w_n2);
        f(format!("{path}.b_n2"), &self.b_n2);
        self.norm_mid.visit(&format!("{path}.norm_mid"), f);
        f(format!("{path}.w_o1"), &self.w_o1);
        f(format!("{path}.b_o1"), &self.b_o1);
        f(format!("{path}.w_o2"), &self.w_o2);
        f(format!("{path}.b_o2"), &self.b_o2);
        self.norm_out.visit(&format!("{path}.norm_out"), f);
    }
}

impl<T> BlockParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> BlockParams<U> {
        BlockParams {
            cross: self.cross.map(f),
            cross_norm: self.cross_norm.map(f),
            inner: self.inner.map(f),
            inner_norm: self.inner_norm.map(f),
            mix: self.mix.map(f),
            mix_norm: self.mix_norm.map(f),
            tri: self.tri.map(f),
        }
    }

    pub fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a T)) {
        self.cross.visit(&format!("{path}.cross"), f);
        self.cross_norm.visit(&format!("{path}.cross_norm"), f);
        self.inner.visit(&format!("{path}.inner"), f);
        self.inner_norm.visit(&format!("{path}.inner_norm"), f);
        self.mix.visit(&format!("{path}.mix"), f);
        self.mix_norm.visit(&format!("{path}.mix_norm"), f);
        self.tri.visit(&format!("{path}.tri"), f);
    }
}

impl<T> BranchParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> BranchParams<U> {
        BranchParams {
            embed: self.embed.map(f),
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
        }
    }

    pub fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a T)) {
        self.embed.visit(&format!("{path}.embed"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{path}.block{i}"), f);
        }
    }
}

impl<T> NetParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> NetParams<U> {
        NetParams {
            main: self.main.map(f),
            condition: self.condition.map(f),
            head: self.head.map(f),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        self.main.visit("main", f);
        self.condition.visit("condition", f);
        self.head.visit("head", f);
    }
}

fn linear_init(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    // Uniform Kaiming-style fan-in scaling.
    let bound = (6.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform_in(-bound, bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).unwrap()
}

fn init_ln(dim: usize) -> LnParams<Tensor> {
    LnParams {
        gamma: Tensor::ones(&[dim]),
        beta: Tensor::zeros(&[dim]),
    }
}

fn init_attn(config: &NetConfig, rng: &mut Rng) -> AttnParams<Tensor> {
    let d = config.atom_dim;
    let k = config.rbf_count;
    let dp = config.pair_dim;
    // The attention output is a product of three projected factors. Biasing
    // the key and distance gates at one makes every gate start near the
    // multiplicative identity, so queries and values pass through the SiLU
    // almost linearly instead of being scrambled by random products.
    AttnParams {
        w_q: linear_init(rng, d, d),
        b_q: Tensor::zeros(&[d]),
        w_k: linear_init(rng, d, d),
        b_k: Tensor::ones(&[d]),
        w_v: linear_init(rng, d, d),
        b_v: Tensor::zeros(&[d]),
        w_dk: linear_init(rng, k, d),
        b_dk: Tensor::ones(&[d]),
        w_dv: linear_init(rng, k, d),
        b_dv: Tensor::ones(&[d]),
        w_p: linear_init(rng, dp, d),
        b_p: Tensor::zeros(&[d]),
    }
}

fn init_mix(config: &NetConfig, rng: &mut Rng, out_dim: usize) -> MixParams<Tensor> {
    let d = config.atom_dim;
    let dp = config.pair_dim;
    let dk = config.kron_dim();
    MixParams {
        w_map: linear_init(rng, 2 * d, d),
        b_map: Tensor::zeros(&[d]),
        w_a: linear_init(rng, d + dp, dk),
        b_a: Tensor::zeros(&[dk]),
        w_b: linear_init(rng, d + dp, dk),
        b_b: Tensor::zeros(&[dk]),
        w_ab: linear_init(rng, dk * dk, out_dim),
        b_ab: Tensor::zeros(&[out_dim]),
    }
}

fn init_tri(config: &NetConfig, rng: &mut Rng) -> TriParams<Tensor> {
    let dp = config.pair_dim;
    TriParams {
        w_m1: linear_init(rng, dp, dp),
        b_m1: Tensor::zeros(&[dp]),
        w_m2: linear_init(rng, dp, dp),
        b_m2: Tensor::zeros(&[dp]),
        w_n1: linear_init(rng, dp, dp),
        b_n1: Tensor::zeros(&[dp]),
        w_n2: linear_init(rng, dp, dp),
        b_n2: Tensor::zeros(&[dp]),
        norm_mid: init_ln(dp),
        w_o1: linear_init(rng, dp, dp),
        b_o1: Tensor::zeros(&[dp]),
        w_o2: linear_init(rng, dp, dp),
        b_o2: Tensor::zeros(&[dp]),
        norm_out: init_ln(dp),
    }
}

fn init_embed(config: &NetConfig, rng: &mut Rng) -> EmbedParams<Tensor> {
    let d = config.atom_dim;
    let k = config.rbf_count;
    let dp = config.pair_dim;
    // PhysNet-style RBF grid: mu uniform over [exp(-cutoff), 1], beta the
    // matching inverse-width, positive at initialization.
    let e0 = (-config.cutoff).exp();
    let mu: Vec<f64> = if k == 1 {
        vec![1.0]
    } else {
        (0..k)
            .map(|i| e0 + (1.0 - e0) * i as f64 / (k - 1) as f64)
            .collect()
    };
    let beta_val = (2.0 * (1.0 - e0) / k as f64).powi(-2);
    EmbedParams {
        table: linear_init(rng, N_ELEMENTS, d).map(|v| v * (N_ELEMENTS as f64 / d as f64).sqrt()),
        rbf_beta: Tensor::vector(&vec![beta_val; k]),
        rbf_mu: Tensor::vector(&mu),
        w_filter: linear_init(rng, k, d),
        w_neighbor: linear_init(rng, 2 * d, d),
        b_neighbor: Tensor::zeros(&[d]),
        w_src: linear_init(rng, d, d),
        b_src: Tensor::zeros(&[d]),
        w_dst: linear_init(rng, d, d),
        b_dst: Tensor::zeros(&[d]),
        w_rbf: linear_init(rng, k, d),
        b_rbf: Tensor::zeros(&[d]),
        w_edge: linear_init(rng, 3 * d, dp),
        b_edge: Tensor::zeros(&[dp]),
    }
}

fn init_branch(config: &NetConfig, rng: &mut Rng) -> BranchParams<Tensor> {
    BranchParams {
        embed: init_embed(config, rng),
        blocks: (0..config.blocks)
            .map(|_| BlockParams {
                cross: init_attn(config, rng),
                cross_norm: init_ln(config.atom_dim),
                inner: init_attn(config, rng),
                inner_norm: init_ln(config.atom_dim),
                mix: init_mix(config, rng, config.pair_dim),
                mix_norm: init_ln(config.pair_dim),
                tri: init_tri(config, rng),
            })
            .collect(),
    }
}

pub(crate) fn init_params(config: &NetConfig, rng: &mut Rng) -> NetParams<Tensor> {
    let mut head = init_mix(config, rng, 1);
    // The final projection starts at zero so the untrained model predicts the
    // zero velocity (the midpoint guess). Starting instead at an O(1) random
    // output makes the first optimizer steps crush the trunk through the
    // SiLU gates, which then stay saturated.
    head.w_ab = Tensor::zeros(head.w_ab.shape());
    NetParams {
        main: init_branch(config, rng),
        condition: init_branch(config, rng),
        head,
    }
}
