//! Search-free block-wise mixed-precision weight quantization.
//!
//! Given weight matrices and calibration gradients, the crate estimates
//! per-weight salience as the Fisher diagonal, sorts rows and columns by
//! salience, tiles each matrix into `m_b x n_b` blocks, and assigns every
//! block one of two adjacent bit-widths so that the average hits a
//! fractional target exactly. Blocks are quantized per row group, split into
//! one-bit planes, and stored block-major. Inference uses a lookup-table
//! GEMV that consumes the planes directly for any mix of bit-widths.
//!
//! - [`matrix`] -- dense matrices, the reference GEMV, `SFMPMAT0` files
//! - [`salience`] -- Fisher diagonal and row/column/block aggregates
//! - [`allocation`] -- fractional bit plans, quantile selection, BPW accounting
//! - [`reorder`] -- salience permutations and their activation-side inverse
//! - [`quantizer`] -- per-group min-max RTN and the mirror reparameterization
//! - [`layout`] -- bit planes, packed blocks, the `.sfmp` file format
//! - [`lutgemm`] -- mirror-compressed lookup tables and the unified GEMV
//! - [`bench`] -- latency harness and synthetic packed models
//! - [`pipeline`] -- quantize / verify / inspect drivers over matrix sources

pub mod allocation;
pub mod bench;
pub mod error;
pub mod layout;
pub mod lutgemm;
pub mod matrix;
pub mod pipeline;
pub mod quantizer;
pub mod reorder;
pub mod salience;

pub use allocation::{
    allocate, allocate_block_bits, bpw_report, candidate_bits, effective_weight_bits, quantile_threshold, BitPlan,
    BlockBitMap, BpwReport, MetadataBits, QuantileScope,
};
pub use error::{Error, FormatError, Result};
pub use layout::{decompose_bitplanes, pack_block, quantize_matrix, PackedBlock, PackedModel};
pub use lutgemm::{build_luts, gemv, gemv_block, GemvWorkspace, LookupTable};
pub use matrix::{matmul_reference, transpose, Matrix, Vector};
pub use pipeline::{quantize, verify, Budget, PipelineConfig, ReorderChoice};
pub use quantizer::{dequantize_group, mirror_transform, quantize_group, MirrorGroup, QuantGroup};
pub use reorder::{apply_reorder, argsort_desc, reorder_activation_in, reorder_activation_out, Permutation, ReorderMode, ReorderSpec};
pub use salience::{accumulate_fisher, block_salience, row_col_salience, BlockGeometry, BlockSalience, FisherDiagonal, GradientSample};
