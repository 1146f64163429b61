//! Block-major packed representation and its on-disk format.
//!
//! Each block stores one scale and zero-point per row (f16) and `bits`
//! one-bit planes, least significant first. A plane holds the block's rows
//! back to back, eight weights per byte along the block width: weight `k` of
//! a row lives in bit `k % 8` of byte `k / 8`. A stored bit is the code bit
//! itself; the ±1 reading is applied by the LUT kernel.
//!
//! File layout (little-endian):
//!
//! ```text
//! "SFMPPKD1"  version:u16  m:u64  n:u64  m_b:u32  n_b:u32
//! floor_bits:u8  ceil_bits:u8  reorder_mode:u8  reserved:u8
//! [row perm: m x u32]  [col perm: n x u32]
//! K:u64  bit_map: K x u8
//! K blocks: m_b scales:u16, m_b zeros:u16, planes (bits x m_b*n_b/8 bytes)
//! ```

use half::f16;

use crate::allocation::MAX_BITS;
use crate::error::{arg_err, shape_err, FormatError, Result};
use crate::matrix::Matrix;
use crate::quantizer::{max_code, GroupQuantizer, MirrorGroup, QuantGroup};
use crate::reorder::{apply_reorder, Permutation, ReorderMode, ReorderSpec};
use crate::salience::BlockGeometry;

pub const PACKED_MAGIC: [u8; 8] = *b"SFMPPKD1";
pub const FORMAT_VERSION: u16 = 1;
/// Bytes before the optional permutation arrays.
pub const HEADER_LEN: usize = 8 + 2 + 8 + 8 + 4 + 4 + 4;

/// Splits codes into `bits` planes of 0/1 values, least significant first.
pub fn decompose_bitplanes(codes: &[u8], bits: u8) -> Result<Vec<Vec<u8>>> {
    if bits == 0 || bits > MAX_BITS {
        return Err(arg_err(format!("bit-width must lie in 1..={MAX_BITS}, got {bits}")));
    }
    let limit = max_code(bits);
    if let Some(c) = codes.iter().find(|&&c| c > limit) {
        return Err(arg_err(format!("code {c} does not fit in {bits} bits")));
    }
    Ok((0..bits).map(|i| codes.iter().map(|&c| (c >> i) & 1).collect()).collect())
}

/// Inverse of [`decompose_bitplanes`]: `sum_i 2^i * plane_i`.
pub fn compose_bitplanes(planes: &[Vec<u8>]) -> Vec<u8> {
    let len = planes.first().map_or(0, Vec::len);
    (0..len)
        .map(|k| planes.iter().enumerate().fold(0u8, |acc, (i, p)| acc | (p[k] & 1) << i))
        .collect()
}

/// One `m_b x n_b` block in packed form.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedBlock {
    bits: u8,
    rows: usize,
    cols: usize,
    scales: Vec<f16>,
    zeros: Vec<f16>,
    planes: Vec<Vec<u8>>,
}

impl PackedBlock {
    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scales(&self) -> &[f16] {
        &self.scales
    }

    pub fn zeros(&self) -> &[f16] {
        &self.zeros
    }

    /// All planes, least significant first.
    pub fn planes(&self) -> &[Vec<u8>] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [Vec<u8>] {
        &mut self.planes
    }

    #[inline]
    pub fn bytes_per_row(&self) -> usize {
        self.cols / 8
    }

    /// Packed bytes of row `r` in plane `i`.
    #[inline]
    pub fn plane_row(&self, plane: usize, r: usize) -> &[u8] {
        let w = self.bytes_per_row();
        &self.planes[plane][r * w..(r + 1) * w]
    }

    pub fn mirror(&self, r: usize) -> MirrorGroup {
        MirrorGroup::from_params(self.scales[r], self.zeros[r], self.bits)
    }

    pub fn byte_len(&self) -> usize {
        block_byte_len(self.rows, self.cols, self.bits)
    }

    pub fn code(&self, r: usize, k: usize) -> u8 {
        let byte = r * self.bytes_per_row() + k / 8;
        (0..self.bits as usize).fold(0u8, |acc, i| acc | ((self.planes[i][byte] >> (k % 8)) & 1) << i)
    }

    /// Recovers the per-row groups exactly.
    pub fn unpack(&self) -> Vec<QuantGroup> {
        (0..self.rows)
            .map(|r| QuantGroup {
                scale: self.scales[r],
                zero: self.zeros[r],
                bits: self.bits,
                codes: (0..self.cols).map(|k| self.code(r, k)).collect(),
            })
            .collect()
    }
}

pub fn block_byte_len(rows: usize, cols: usize, bits: u8) -> usize {
    rows * 4 + bits as usize * rows * cols / 8
}

/// Packs the row groups of one block. Every group must share the bit-width
/// and a length divisible by 8.
pub fn pack_block(groups: &[QuantGroup]) -> Result<PackedBlock> {
    let first = groups.first().ok_or_else(|| arg_err("a block needs at least one row group"))?;
    let (bits, cols) = (first.bits, first.len());
    if cols == 0 || cols % 8 != 0 {
        return Err(arg_err(format!("group length {cols} is not a positive multiple of 8")));
    }
    if let Some(g) = groups.iter().find(|g| g.bits != bits || g.len() != cols) {
        return Err(arg_err(format!(
            "inconsistent groups in block: {} bits x {} vs {} bits x {}",
            g.bits,
            g.len(),
            bits,
            cols
        )));
    }
    let rows = groups.len();
    let row_bytes = cols / 8;
    let mut planes = vec![vec![0u8; rows * row_bytes]; bits as usize];
    for (r, g) in groups.iter().enumerate() {
        if let Some(c) = g.codes.iter().find(|&&c| c > max_code(bits)) {
            return Err(arg_err(format!("code {c} does not fit in {bits} bits")));
        }
        for (k, &c) in g.codes.iter().enumerate() {
            let byte = r * row_bytes + k / 8;
            for (i, plane) in planes.iter_mut().enumerate() {
                plane[byte] |= ((c >> i) & 1) << (k % 8);
            }
        }
    }
    Ok(PackedBlock {
        bits,
        rows,
        cols,
        scales: groups.iter().map(|g| g.scale).collect(),
        zeros: groups.iter().map(|g| g.zero).collect(),
        planes,
    })
}

/// A whole quantized matrix in block-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedModel {
    rows: usize,
    cols: usize,
    block_rows: usize,
    block_cols: usize,
    floor_bits: u8,
    ceil_bits: u8,
    reorder: ReorderSpec,
    bit_map: Vec<u8>,
    blocks: Vec<PackedBlock>,
}

impl PackedModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        shape: (usize, usize),
        block_dims: (usize, usize),
        floor_bits: u8,
        ceil_bits: u8,
        reorder: ReorderSpec,
        blocks: Vec<PackedBlock>,
    ) -> Result<Self> {
        let bit_map = blocks.iter().map(PackedBlock::bits).collect();
        let model = Self {
            rows: shape.0,
            cols: shape.1,
            block_rows: block_dims.0,
            block_cols: block_dims.1,
            floor_bits,
            ceil_bits,
            reorder,
            bit_map,
            blocks,
        };
        model.validate().map_err(|e| match e {
            FormatError::Invalid(msg) => arg_err(msg),
            other => other.into(),
        })?;
        Ok(model)
    }

    fn validate(&self) -> std::result::Result<(), FormatError> {
        let invalid = |msg: String| Err(FormatError::Invalid(msg));
        if self.rows == 0 || self.cols == 0 || self.block_rows == 0 || self.block_cols == 0 {
            return invalid(format!(
                "zero dimension in shape {}x{} / blocks {}x{}",
                self.rows, self.cols, self.block_rows, self.block_cols
            ));
        }
        if !self.block_cols.is_multiple_of(8) {
            return invalid(format!("block width {} is not a multiple of 8", self.block_cols));
        }
        if self.floor_bits == 0 || self.ceil_bits > MAX_BITS || !(0..=1).contains(&(self.ceil_bits as i16 - self.floor_bits as i16)) {
            return invalid(format!("bad candidate widths {}/{}", self.floor_bits, self.ceil_bits));
        }
        if let Err(e) = self.reorder.check_shape(self.rows, self.cols) {
            return invalid(e.to_string());
        }
        let (gr, gc) = self.grid();
        if self.blocks.len() != gr * gc || self.bit_map.len() != self.blocks.len() {
            return invalid(format!("expected {} blocks, found {}", gr * gc, self.blocks.len()));
        }
        for (k, (b, &bits)) in self.blocks.iter().zip(&self.bit_map).enumerate() {
            if bits != self.floor_bits && bits != self.ceil_bits {
                return invalid(format!("block {k} has {bits} bits outside {{{}, {}}}", self.floor_bits, self.ceil_bits));
            }
            if b.bits != bits || b.rows != self.block_rows || b.cols != self.block_cols || b.planes.len() != bits as usize {
                return invalid(format!("block {k} does not match the model geometry"));
            }
            if b.scales.iter().chain(&b.zeros).any(|v| !v.is_finite()) {
                return invalid(format!("block {k} has non-finite scale or zero-point"));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn block_dims(&self) -> (usize, usize) {
        (self.block_rows, self.block_cols)
    }

    pub fn floor_bits(&self) -> u8 {
        self.floor_bits
    }

    pub fn ceil_bits(&self) -> u8 {
        self.ceil_bits
    }

    pub fn reorder(&self) -> &ReorderSpec {
        &self.reorder
    }

    pub fn bit_map(&self) -> &[u8] {
        &self.bit_map
    }

    pub fn blocks(&self) -> &[PackedBlock] {
        &self.blocks
    }

    /// Mutable access for fault-injection; geometry cannot change.
    pub fn blocks_mut(&mut self) -> &mut [PackedBlock] {
        &mut self.blocks
    }

    /// Block rows and block columns (edge blocks may be padded).
    pub fn grid(&self) -> (usize, usize) {
        (self.rows.div_ceil(self.block_rows), self.cols.div_ceil(self.block_cols))
    }

    pub fn padded_shape(&self) -> (usize, usize) {
        let (gr, gc) = self.grid();
        (gr * self.block_rows, gc * self.block_cols)
    }

    /// Dequantized weights in the stored (reordered) order, padding dropped.
    pub fn dequantize_reordered(&self) -> Matrix {
        let (_, gc) = self.grid();
        let mut out = vec![0.0f32; self.rows * self.cols];
        for (k, block) in self.blocks.iter().enumerate() {
            let (r0, c0) = ((k / gc) * self.block_rows, (k % gc) * self.block_cols);
            for r in 0..block.rows.min(self.rows - r0) {
                let (s, z) = (block.scales[r].to_f32(), block.zeros[r].to_f32());
                let row = &mut out[(r0 + r) * self.cols..(r0 + r + 1) * self.cols];
                for c in 0..block.cols.min(self.cols - c0) {
                    row[c0 + c] = s * f32::from(block.code(r, c)) + z;
                }
            }
        }
        Matrix::new(self.rows, self.cols, out).expect("model shape is validated")
    }

    /// Dequantized weights in the original row/column order.
    pub fn dequantize(&self) -> Matrix {
        apply_reorder(&self.dequantize_reordered(), &self.reorder.inverse()).expect("model shape is validated")
    }

    /// Byte offset of each block in the serialized stream; depends only on
    /// header fields and the bit map.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut offset = self.blocks_start();
        self.bit_map
            .iter()
            .map(|&bits| {
                let here = offset;
                offset += block_byte_len(self.block_rows, self.block_cols, bits);
                here
            })
            .collect()
    }

    fn blocks_start(&self) -> usize {
        let mut n = HEADER_LEN;
        if self.reorder.row().is_some() {
            n += 4 * self.rows;
        }
        if self.reorder.col().is_some() {
            n += 4 * self.cols;
        }
        n + 8 + self.bit_map.len()
    }

    pub fn serialized_len(&self) -> usize {
        self.blocks_start() + self.blocks.iter().map(PackedBlock::byte_len).sum::<usize>()
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(&PACKED_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        out.extend_from_slice(&(self.block_rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.block_cols as u32).to_le_bytes());
        out.extend_from_slice(&[self.floor_bits, self.ceil_bits, self.reorder.mode().code(), 0]);
        for p in [self.reorder.row(), self.reorder.col()].into_iter().flatten() {
            for &i in p.forward() {
                out.extend_from_slice(&(i as u32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.bit_map.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.bit_map);
        for b in &self.blocks {
            for v in b.scales.iter().chain(&b.zeros) {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            for p in &b.planes {
                out.extend_from_slice(p);
            }
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        Ok(decode(bytes)?)
    }

    pub fn write_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }

    pub fn read_file(path: &std::path::Path) -> Result<Self> {
        Self::deserialize(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(FormatError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> std::result::Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn to_usize(v: u64, what: &str) -> std::result::Result<usize, FormatError> {
    usize::try_from(v).map_err(|_| FormatError::Invalid(format!("{what} {v} does not fit in memory")))
}

fn decode(bytes: &[u8]) -> std::result::Result<PackedModel, FormatError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 8] = c.take(8, "magic")?.try_into().unwrap();
    if magic != PACKED_MAGIC {
        return Err(FormatError::BadMagic { expected: PACKED_MAGIC, found: magic });
    }
    let version = c.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let rows = to_usize(c.u64("rows")?, "rows")?;
    let cols = to_usize(c.u64("cols")?, "cols")?;
    let block_rows = c.u32("block rows")? as usize;
    let block_cols = c.u32("block cols")? as usize;
    let floor_bits = c.u8("floor bits")?;
    let ceil_bits = c.u8("ceil bits")?;
    let mode_code = c.u8("reorder mode")?;
    let mode = ReorderMode::from_code(mode_code).ok_or_else(|| FormatError::Invalid(format!("reorder mode {mode_code}")))?;
    if c.u8("reserved")? != 0 {
        return Err(FormatError::Invalid("reserved header byte is not zero".into()));
    }
    if rows == 0 || cols == 0 || block_rows == 0 || block_cols == 0 || !block_cols.is_multiple_of(8) {
        return Err(FormatError::Invalid(format!("bad geometry {rows}x{cols} in {block_rows}x{block_cols} blocks")));
    }
    let mut read_perm = |len: usize, what: &'static str| -> std::result::Result<Permutation, FormatError> {
        let raw = c.take(len.checked_mul(4).ok_or(FormatError::Truncated(what))?, what)?;
        let idx = raw.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize).collect();
        Permutation::new(idx).map_err(|e| FormatError::Invalid(e.to_string()))
    };
    let row = if mode.has_rows() { Some(read_perm(rows, "row permutation")?) } else { None };
    let col = if mode.has_cols() { Some(read_perm(cols, "col permutation")?) } else { None };
    let reorder = ReorderSpec::new(row, col);

    let block_count = to_usize(c.u64("block count")?, "block count")?;
    let expected = rows.div_ceil(block_rows).checked_mul(cols.div_ceil(block_cols));
    if expected != Some(block_count) {
        return Err(FormatError::Invalid(format!("header declares {block_count} blocks, geometry needs {expected:?}")));
    }
    let bit_map = c.take(block_count, "bit map")?.to_vec();
    let mut blocks = Vec::with_capacity(block_count);
    for &bits in &bit_map {
        if bits == 0 || bits > MAX_BITS {
            return Err(FormatError::Invalid(format!("block bit-width {bits}")));
        }
        let halfs = |raw: &[u8]| raw.chunks_exact(2).map(|b| f16::from_bits(u16::from_le_bytes([b[0], b[1]]))).collect();
        let scales = halfs(c.take(2 * block_rows, "scales")?);
        let zeros = halfs(c.take(2 * block_rows, "zero-points")?);
        let plane_len = block_rows * block_cols / 8;
        let planes = (0..bits)
            .map(|_| c.take(plane_len, "bit planes").map(<[u8]>::to_vec))
            .collect::<std::result::Result<_, _>>()?;
        blocks.push(PackedBlock { bits, rows: block_rows, cols: block_cols, scales, zeros, planes });
    }
    if c.pos != bytes.len() {
        return Err(FormatError::Invalid(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let model = PackedModel { rows, cols, block_rows, block_cols, floor_bits, ceil_bits, reorder, bit_map, blocks };
    model.validate()?;
    Ok(model)
}

/// Quantizes an already reordered weight matrix block by block at the bit
/// widths in `bit_map`. Padded cells of edge blocks get code 0 and do not
/// influence their group's range.
pub fn quantize_matrix(
    reordered: &Matrix,
    geometry: BlockGeometry,
    bit_map: &[u8],
    floor_bits: u8,
    ceil_bits: u8,
    reorder: ReorderSpec,
    quantizer: &dyn GroupQuantizer,
) -> Result<PackedModel> {
    let (m, n) = reordered.shape();
    let (gr, gc) = geometry.grid(m, n)?;
    if bit_map.len() != gr * gc {
        return Err(shape_err(format!("bit map has {} entries, matrix has {} blocks", bit_map.len(), gr * gc)));
    }
    let (mb, nb) = (geometry.block_rows, geometry.block_cols);
    let mut blocks = Vec::with_capacity(bit_map.len());
    for (k, &bits) in bit_map.iter().enumerate() {
        let (r0, c0) = ((k / gc) * mb, (k % gc) * nb);
        let real_cols = nb.min(n - c0);
        let groups = (0..mb)
            .map(|r| {
                if r0 + r >= m {
                    return Ok(QuantGroup { scale: f16::ONE, zero: f16::ZERO, bits, codes: vec![0; nb] });
                }
                let mut g = quantizer.quantize(&reordered.row(r0 + r)[c0..c0 + real_cols], bits)?;
                g.codes.resize(nb, 0);
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        blocks.push(pack_block(&groups)?);
    }
    PackedModel::new((m, n), (mb, nb), floor_bits, ceil_bits, reorder, blocks)
}
