//! The composed topology-map encoder.
//!
//! One forward pass takes the map's node features through neighbor
//! aggregation, two stacked graph-convolution layers over the normalized
//! adjacency, mean pooling into a global feature, cross-attention against
//! the current panorama's region features, and a two-layer projection into
//! the policy feature space. The backward pass chains the per-kernel
//! vector-Jacobian products and is validated against finite differences.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::bundle::{BundleError, ParamBundle};
use crate::kernels::{
    cross_attention, cross_attention_vjp, gcn_aggregate, gcn_aggregate_vjp, gcn_layer,
    gcn_layer_vjp, global_pool, global_pool_vjp, project, project_vjp, AttentionParams,
    GcnAggParams, GcnLayerParams, KernelError, ProjectionParams,
};

/// All learnable parameters of the encoder chain.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub agg: GcnAggParams,
    pub gcn1: GcnLayerParams,
    pub gcn2: GcnLayerParams,
    pub attn: AttentionParams,
    pub proj: ProjectionParams,
}

impl EncoderParams {
    /// Feature dimension consumed from the topology map.
    pub fn dim(&self) -> usize {
        self.agg.w_self.nrows()
    }

    /// Output dimension handed to the decision policy.
    pub fn output_dim(&self) -> usize {
        self.proj.d_out()
    }

    pub fn seeded(dim: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            agg: GcnAggParams::seeded(dim, rng),
            gcn1: GcnLayerParams::seeded(dim, dim, rng),
            gcn2: GcnLayerParams::seeded(dim, dim, rng),
            attn: AttentionParams::seeded(dim, rng),
            proj: ProjectionParams::seeded(dim, dim, d_out, rng),
        }
    }

    pub fn zeros(dim: usize, d_out: usize) -> Self {
        Self {
            agg: GcnAggParams::zeros(dim),
            gcn1: GcnLayerParams::zeros(dim, dim),
            gcn2: GcnLayerParams::zeros(dim, dim),
            attn: AttentionParams::zeros(dim),
            proj: ProjectionParams::zeros(dim, dim, d_out),
        }
    }

    pub fn accumulate(&mut self, other: &EncoderParams) {
        self.agg.w_self += &other.agg.w_self;
        self.agg.w_neigh += &other.agg.w_neigh;
        self.gcn1.w += &other.gcn1.w;
        self.gcn2.w += &other.gcn2.w;
        self.attn.w_q += &other.attn.w_q;
        self.attn.w_k += &other.attn.w_k;
        self.attn.w_v += &other.attn.w_v;
        self.proj.w1 += &other.proj.w1;
        self.proj.b1 += &other.proj.b1;
        self.proj.w2 += &other.proj.w2;
        self.proj.b2 += &other.proj.b2;
    }

    pub fn scale(&mut self, factor: f64) {
        self.agg.w_self *= factor;
        self.agg.w_neigh *= factor;
        self.gcn1.w *= factor;
        self.gcn2.w *= factor;
        self.attn.w_q *= factor;
        self.attn.w_k *= factor;
        self.attn.w_v *= factor;
        self.proj.w1 *= factor;
        self.proj.b1 *= factor;
        self.proj.w2 *= factor;
        self.proj.b2 *= factor;
    }

    /// Flattens into `vec` in a fixed field order (row-major per array).
    pub fn pack_into(&self, vec: &mut Vec<f64>) {
        for m in [
            &self.agg.w_self,
            &self.agg.w_neigh,
            &self.gcn1.w,
            &self.gcn2.w,
            &self.attn.w_q,
            &self.attn.w_k,
            &self.attn.w_v,
            &self.proj.w1,
        ] {
            vec.extend(m.iter());
        }
        vec.extend(self.proj.b1.iter());
        vec.extend(self.proj.w2.iter());
        vec.extend(self.proj.b2.iter());
    }

    /// Reads the layout written by [`EncoderParams::pack_into`], returning
    /// how many values were consumed.
    pub fn unpack_from(&mut self, data: &[f64]) -> usize {
        fn read2(at: &mut usize, data: &[f64], m: &mut Array2<f64>) {
            for dst in m.iter_mut() {
                *dst = data[*at];
                *at += 1;
            }
        }
        fn read1(at: &mut usize, data: &[f64], v: &mut Array1<f64>) {
            for dst in v.iter_mut() {
                *dst = data[*at];
                *at += 1;
            }
        }
        let mut at = 0;
        read2(&mut at, data, &mut self.agg.w_self);
        read2(&mut at, data, &mut self.agg.w_neigh);
        read2(&mut at, data, &mut self.gcn1.w);
        read2(&mut at, data, &mut self.gcn2.w);
        read2(&mut at, data, &mut self.attn.w_q);
        read2(&mut at, data, &mut self.attn.w_k);
        read2(&mut at, data, &mut self.attn.w_v);
        read2(&mut at, data, &mut self.proj.w1);
        read1(&mut at, data, &mut self.proj.b1);
        read2(&mut at, data, &mut self.proj.w2);
        read1(&mut at, data, &mut self.proj.b2);
        at
    }

    pub fn param_count(&self) -> usize {
        let mut v = Vec::new();
        self.pack_into(&mut v);
        v.len()
    }

    pub fn write_bundle(&self, bundle: &mut ParamBundle, prefix: &str) {
        bundle.insert_matrix(&format!("{prefix}.agg.w_self"), &self.agg.w_self);
        bundle.insert_matrix(&format!("{prefix}.agg.w_neigh"), &self.agg.w_neigh);
        bundle.insert_matrix(&format!("{prefix}.gcn1.w"), &self.gcn1.w);
        bundle.insert_matrix(&format!("{prefix}.gcn2.w"), &self.gcn2.w);
        bundle.insert_matrix(&format!("{prefix}.attn.w_q"), &self.attn.w_q);
        bundle.insert_matrix(&format!("{prefix}.attn.w_k"), &self.attn.w_k);
        bundle.insert_matrix(&format!("{prefix}.attn.w_v"), &self.attn.w_v);
        bundle.insert_matrix(&format!("{prefix}.proj.w1"), &self.proj.w1);
        bundle.insert_vector(&format!("{prefix}.proj.b1"), &self.proj.b1);
        bundle.insert_matrix(&format!("{prefix}.proj.w2"), &self.proj.w2);
        bundle.insert_vector(&format!("{prefix}.proj.b2"), &self.proj.b2);
    }

    pub fn read_bundle(bundle: &ParamBundle, prefix: &str) -> Result<Self, BundleError> {
        let w_self = bundle.matrix(&format!("{prefix}.agg.w_self"))?;
        let dim = w_self.nrows();
        let attn_scale = (dim as f64).sqrt();
        Ok(Self {
            agg: GcnAggParams {
                w_self,
                w_neigh: bundle.matrix_with_shape(&format!("{prefix}.agg.w_neigh"), dim, dim)?,
            },
            gcn1: GcnLayerParams {
                w: bundle.matrix_with_shape(&format!("{prefix}.gcn1.w"), dim, dim)?,
            },
            gcn2: GcnLayerParams {
                w: bundle.matrix_with_shape(&format!("{prefix}.gcn2.w"), dim, dim)?,
            },
            attn: AttentionParams {
                w_q: bundle.matrix_with_shape(&format!("{prefix}.attn.w_q"), dim, dim)?,
                w_k: bundle.matrix_with_shape(&format!("{prefix}.attn.w_k"), dim, dim)?,
                w_v: bundle.matrix_with_shape(&format!("{prefix}.attn.w_v"), dim, dim)?,
                scale: attn_scale,
            },
            proj: ProjectionParams {
                w1: bundle.matrix(&format!("{prefix}.proj.w1"))?,
                b1: bundle.vector(&format!("{prefix}.proj.b1"))?,
                w2: bundle.matrix(&format!("{prefix}.proj.w2"))?,
                b2: bundle.vector(&format!("{prefix}.proj.b2"))?,
            },
        })
    }
}

/// Per-step inputs of one encoder pass; all fixed data, never parameters.
#[derive(Clone, Debug)]
pub struct EncoderInput {
    /// Topology-map node features, one row per map node.
    pub node_features: Array2<f64>,
    /// Map-internal undirected neighbor index sets.
    pub neighbor_sets: Vec<Vec<usize>>,
    /// Normalized map adjacency in the same node order.
    pub a_norm: Array2<f64>,
    /// Region features of the current panorama, all views stacked.
    pub image_regions: Array2<f64>,
}

/// Cached activations of one forward pass, consumed by the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderActivations {
    pub h0: Array2<f64>,
    pub h1: Array2<f64>,
    pub h2: Array2<f64>,
    pub pooled: Array1<f64>,
    pub attended: Array1<f64>,
    pub output: Array1<f64>,
}

pub fn encode(
    input: &EncoderInput,
    params: &EncoderParams,
) -> Result<EncoderActivations, KernelError> {
    let h0 = gcn_aggregate(&input.node_features, &input.neighbor_sets, &params.agg)?;
    let h1 = gcn_layer(&h0, &input.a_norm, &params.gcn1)?;
    let h2 = gcn_layer(&h1, &input.a_norm, &params.gcn2)?;
    let pooled = global_pool(&h2)?;
    let pooled_row = pooled.clone().insert_axis(Axis(0));
    let attended_row = cross_attention(&pooled_row, &input.image_regions, &params.attn)?;
    let attended = attended_row.row(0).to_owned();
    let output = project(&attended.view(), &params.proj)?;
    Ok(EncoderActivations {
        h0,
        h1,
        h2,
        pooled,
        attended,
        output,
    })
}

/// Backpropagates `d_output` through the whole chain, returning parameter
/// gradients shaped like [`EncoderParams`].
pub fn encode_vjp(
    input: &EncoderInput,
    params: &EncoderParams,
    acts: &EncoderActivations,
    d_output: &Array1<f64>,
) -> Result<EncoderParams, KernelError> {
    let (d_attended, d_proj) = project_vjp(&acts.attended.view(), &params.proj, d_output)?;

    let pooled_row = acts.pooled.clone().insert_axis(Axis(0));
    let d_attended_row = d_attended.insert_axis(Axis(0));
    let (d_pooled_row, _d_regions, d_attn) = cross_attention_vjp(
        &pooled_row,
        &input.image_regions,
        &params.attn,
        &d_attended_row,
    )?;
    let d_pooled = d_pooled_row.row(0).to_owned();

    let d_h2 = global_pool_vjp(acts.h2.nrows(), &d_pooled);
    let (d_h1, d_gcn2) = gcn_layer_vjp(&acts.h1, &input.a_norm, &params.gcn2, &d_h2)?;
    let (d_h0, d_gcn1) = gcn_layer_vjp(&acts.h0, &input.a_norm, &params.gcn1, &d_h1)?;
    let (_d_x, d_agg) = gcn_aggregate_vjp(
        &input.node_features,
        &input.neighbor_sets,
        &params.agg,
        &d_h0,
    )?;

    Ok(EncoderParams {
        agg: d_agg,
        gcn1: d_gcn1,
        gcn2: d_gcn2,
        attn: d_attn,
        proj: d_proj,
    })
}
