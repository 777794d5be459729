//! Two-layer bidirectional LSTM with a per-timestep linear readout.
//!
//! Sequences are stored time-major: row `t * batch + b` holds window `b` at
//! time `t`. Gate blocks are ordered input, forget, candidate, output.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::activation;
use crate::error::{Error, Result};
use crate::model::layout::N_TARGET;

/// Layer sizes. The published network uses 128 and 32 units per direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub hidden1: usize,
    pub hidden2: usize,
    pub n_out: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden1: 128,
            hidden2: 32,
            n_out: N_TARGET,
        }
    }
}

/// Offsets of one LSTM cell inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellLayout {
    pub input: usize,
    pub hidden: usize,
    pub w_ih: usize,
    pub w_hh: usize,
    pub bias: usize,
}

impl CellLayout {
    fn new(input: usize, hidden: usize, start: usize) -> (Self, usize) {
        let g = 4 * hidden;
        let w_ih = start;
        let w_hh = w_ih + g * input;
        let bias = w_hh + g * hidden;
        (
            Self {
                input,
                hidden,
                w_ih,
                w_hh,
                bias,
            },
            bias + g,
        )
    }

    pub fn end(&self) -> usize {
        self.bias + 4 * self.hidden
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub arch: Architecture,
    pub l1: [CellLayout; 2],
    pub l2: [CellLayout; 2],
    pub w_out: usize,
    pub b_out: usize,
    pub total: usize,
}

/// Named contiguous parameter block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub range: std::ops::Range<usize>,
}

impl ParamLayout {
    pub fn new(arch: Architecture) -> Self {
        let (l1f, next) = CellLayout::new(1, arch.hidden1, 0);
        let (l1b, next) = CellLayout::new(1, arch.hidden1, next);
        let (l2f, next) = CellLayout::new(2 * arch.hidden1, arch.hidden2, next);
        let (l2b, next) = CellLayout::new(2 * arch.hidden1, arch.hidden2, next);
        let w_out = next;
        let b_out = w_out + arch.n_out * 2 * arch.hidden2;
        Self {
            arch,
            l1: [l1f, l1b],
            l2: [l2f, l2b],
            w_out,
            b_out,
            total: b_out + arch.n_out,
        }
    }

    /// Every parameter block: gate weights, recurrent weights and biases of
    /// each cell, then the readout weights and bias.
    pub fn blocks(&self) -> Vec<ParamBlock> {
        let mut out = Vec::new();
        let cells = [
            ("l1_fwd", self.l1[0]),
            ("l1_bwd", self.l1[1]),
            ("l2_fwd", self.l2[0]),
            ("l2_bwd", self.l2[1]),
        ];
        for (name, c) in cells {
            out.push(ParamBlock {
                name: format!("{name}.w_ih"),
                range: c.w_ih..c.w_hh,
            });
            out.push(ParamBlock {
                name: format!("{name}.w_hh"),
                range: c.w_hh..c.bias,
            });
            out.push(ParamBlock {
                name: format!("{name}.bias"),
                range: c.bias..c.end(),
            });
        }
        out.push(ParamBlock {
            name: "readout.w".into(),
            range: self.w_out..self.b_out,
        });
        out.push(ParamBlock {
            name: "readout.b".into(),
            range: self.b_out..self.total,
        });
        out
    }
}

/// All network parameters in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub arch: Architecture,
    pub params: Vec<f64>,
}

const WEIGHTS_MAGIC: &[u8; 8] = b"BSLSTM01";

impl LstmWeights {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            params: vec![0.0; ParamLayout::new(arch).total],
        }
    }

    /// Uniform in `+-1/sqrt(fan_in)` per block, forget-gate bias 1.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let layout = ParamLayout::new(arch);
        let mut w = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for cell in layout.l1.iter().chain(layout.l2.iter()) {
            let fan_in = cell.input + cell.hidden;
            let a = 1.0 / (fan_in as f64).sqrt();
            for x in &mut w.params[cell.w_ih..cell.bias] {
                *x = rng.random_range(-a..a);
            }
            for x in &mut w.params[cell.bias..cell.end()] {
                *x = rng.random_range(-a..a);
            }
            let h = cell.hidden;
            for x in &mut w.params[cell.bias + h..cell.bias + 2 * h] {
                *x += 1.0;
            }
        }
        let a = 1.0 / ((2 * arch.hidden2) as f64).sqrt();
        for x in &mut w.params[layout.w_out..layout.total] {
            *x = rng.random_range(-a..a);
        }
        w
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.arch)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|x| x.is_finite())
    }

    /// Weights for which running on a time-reversed input yields the
    /// time-reversed output: forward and backward cells swap, and every
    /// consumer of a concatenated `[fwd, bwd]` sequence swaps its column halves.
    pub fn swap_directions(&self) -> Self {
        let l = self.layout();
        let mut out = self.clone();
        let swap_cells = |out: &mut Vec<f64>, a: CellLayout, b: CellLayout| {
            let (ra, rb) = (a.w_ih..a.end(), b.w_ih..b.end());
            let tmp: Vec<f64> = self.params[ra.clone()].to_vec();
            out[ra].copy_from_slice(&self.params[rb.clone()]);
            out[rb].copy_from_slice(&tmp);
        };
        swap_cells(&mut out.params, l.l1[0], l.l1[1]);
        swap_cells(&mut out.params, l.l2[0], l.l2[1]);
        let swap_halves = |m: &mut [f64], rows: usize, cols: usize| {
            let half = cols / 2;
            for r in 0..rows {
                let row = &mut m[r * cols..(r + 1) * cols];
                let (a, b) = row.split_at_mut(half);
                a.swap_with_slice(b);
            }
        };
        for c in l.l2 {
            swap_halves(&mut out.params[c.w_ih..c.w_hh], 4 * c.hidden, c.input);
        }
        swap_halves(&mut out.params[l.w_out..l.b_out], self.arch.n_out, 2 * self.arch.hidden2);
        out
    }

    /// Hex SHA-256 of the parameter bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for x in &self.params {
            h.update(x.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Binary container: magic, JSON header length, JSON header (architecture,
    /// parameter count, attached metadata), then little-endian parameters.
    pub fn save(&self, path: &Path, metadata: &serde_json::Value) -> Result<()> {
        let header = WeightsHeader {
            arch: self.arch,
            n_params: self.params.len(),
            digest: self.digest(),
            metadata: metadata.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for x in &self.params {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != WEIGHTS_MAGIC {
            return Err(bad("not a weights file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: WeightsHeader = serde_json::from_slice(body)?;
        let expected = ParamLayout::new(header.arch).total;
        if header.n_params != expected {
            return Err(bad("parameter count does not match architecture"));
        }
        let data = &bytes[16 + hlen..];
        if data.len() != expected * 8 {
            return Err(bad("parameter payload has the wrong size"));
        }
        let params: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let w = Self {
            arch: header.arch,
            params,
        };
        if w.digest() != header.digest {
            return Err(bad("parameter digest mismatch"));
        }
        if !w.is_finite() {
            return Err(bad("non-finite parameters"));
        }
        Ok((w, header.metadata))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsHeader {
    arch: Architecture,
    n_params: usize,
    digest: String,
    metadata: serde_json::Value,
}

/// Row-major `c = alpha * op(a) * op(b) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len(), "gemm: a out of bounds");
        assert!(last(k, n, rsb, csb) < b.len(), "gemm: b out of bounds");
    }
    assert!(last(m, n, rsc, 1) < c.len(), "gemm: c out of bounds");
    // SAFETY: the asserts above keep every indexed element inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Activations of one direction of one layer.
#[derive(Debug, Clone, Default)]
struct CellTrace {
    /// Activated gates, `T*B x 4H`.
    gates: Vec<f64>,
    /// Cell state, `T*B x H`.
    c: Vec<f64>,
    /// `tanh` of the cell state, `T*B x H`.
    tc: Vec<f64>,
    /// Hidden state, `T*B x H`.
    h: Vec<f64>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub steps: usize,
    pub batch: usize,
    input: Vec<f64>,
    l1: [CellTrace; 2],
    l2: [CellTrace; 2],
    /// Readout, `T*B x n_out`.
    pub output: Vec<f64>,
}

/// Input of a cell: one or two `T*B x width` sequences whose columns are
/// concatenated.
#[derive(Clone, Copy)]
enum CellInput<'a> {
    Single(&'a [f64]),
    Pair(&'a [f64], &'a [f64]),
}

fn cell_forward(params: &[f64], cell: CellLayout, x: CellInput<'_>, steps: usize, batch: usize, reverse: bool, layer: &str) -> Result<CellTrace> {
    let h = cell.hidden;
    let g = 4 * h;
    let rows = steps * batch;
    let w_ih = &params[cell.w_ih..cell.w_hh];
    let w_hh = &params[cell.w_hh..cell.bias];
    let bias = &params[cell.bias..cell.end()];
    let mut gates = vec![0.0; rows * g];
    for r in 0..rows {
        gates[r * g..(r + 1) * g].copy_from_slice(bias);
    }
    match x {
        CellInput::Single(x) => gemm(rows, cell.input, g, 1.0, x, (cell.input, 1), w_ih, (1, cell.input), 1.0, &mut gates, g),
        CellInput::Pair(a, b) => {
            let half = cell.input / 2;
            gemm(rows, half, g, 1.0, a, (half, 1), w_ih, (1, cell.input), 1.0, &mut gates, g);
            gemm(rows, half, g, 1.0, b, (half, 1), &w_ih[half..], (1, cell.input), 1.0, &mut gates, g);
        }
    }
    let mut c = vec![0.0; rows * h];
    let mut tc = vec![0.0; rows * h];
    let mut hs = vec![0.0; rows * h];
    let mut prev: Option<usize> = None;
    for s in 0..steps {
        let t = if reverse { steps - 1 - s } else { s };
        let gt = &mut gates[t * batch * g..(t + 1) * batch * g];
        if let Some(p) = prev {
            gemm(batch, h, g, 1.0, &hs[p * batch * h..(p + 1) * batch * h], (h, 1), w_hh, (1, h), 1.0, gt, g);
        }
        for b in 0..batch {
            let row = &mut gt[b * g..(b + 1) * g];
            activation::sigmoid_slice(&mut row[..2 * h]);
            activation::tanh_slice(&mut row[2 * h..3 * h]);
            activation::sigmoid_slice(&mut row[3 * h..]);
            let base = t * batch * h + b * h;
            match prev {
                Some(p) => {
                    let pb = p * batch * h + b * h;
                    for j in 0..h {
                        c[base + j] = row[h + j] * c[pb + j] + row[j] * row[2 * h + j];
                    }
                }
                None => {
                    for j in 0..h {
                        c[base + j] = row[j] * row[2 * h + j];
                    }
                }
            }
            let tcb = &mut tc[base..base + h];
            tcb.copy_from_slice(&c[base..base + h]);
            activation::tanh_slice(tcb);
            for j in 0..h {
                hs[base + j] = row[3 * h + j] * tcb[j];
            }
        }
        if hs[t * batch * h..(t + 1) * batch * h].iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("lstm {layer}"), format!("non-finite activation at timestep {t}")));
        }
        prev = Some(t);
    }
    Ok(CellTrace { gates, c, tc, h: hs })
}

/// Runs the network on `batch` windows of `steps` samples (time-major input,
/// `steps * batch` values). Returns the cache; `cache.output` holds the
/// time-major `steps*batch x n_out` estimates.
pub fn forward_batch(w: &LstmWeights, input: &[f64], steps: usize, batch: usize) -> Result<ForwardCache> {
    if input.len() != steps * batch {
        return Err(Error::InvalidParameter(format!(
            "input has {} values, expected {steps} x {batch}",
            input.len()
        )));
    }
    let l = w.layout();
    let p = &w.params;
    let l1f = cell_forward(p, l.l1[0], CellInput::Single(input), steps, batch, false, "layer 1 forward")?;
    let l1b = cell_forward(p, l.l1[1], CellInput::Single(input), steps, batch, true, "layer 1 backward")?;
    let l2f = cell_forward(p, l.l2[0], CellInput::Pair(&l1f.h, &l1b.h), steps, batch, false, "layer 2 forward")?;
    let l2b = cell_forward(p, l.l2[1], CellInput::Pair(&l1f.h, &l1b.h), steps, batch, true, "layer 2 backward")?;
    let rows = steps * batch;
    let (h2, n_out) = (w.arch.hidden2, w.arch.n_out);
    let mut output = vec![0.0; rows * n_out];
    let b_out = &p[l.b_out..l.total];
    for r in 0..rows {
        output[r * n_out..(r + 1) * n_out].copy_from_slice(b_out);
    }
    let w_out = &p[l.w_out..l.b_out];
    gemm(rows, h2, n_out, 1.0, &l2f.h, (h2, 1), w_out, (1, 2 * h2), 1.0, &mut output, n_out);
    gemm(rows, h2, n_out, 1.0, &l2b.h, (h2, 1), &w_out[h2..], (1, 2 * h2), 1.0, &mut output, n_out);
    if output.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("lstm readout", "non-finite output"));
    }
    Ok(ForwardCache {
        steps,
        batch,
        input: input.to_vec(),
        l1: [l1f, l1b],
        l2: [l2f, l2b],
        output,
    })
}

/// Single window convenience: `obs` of length T gives `T x n_out` row-major.
pub fn lstm_forward(w: &LstmWeights, obs: &[f64]) -> Result<Vec<f64>> {
    if obs.is_empty() {
        return Err(Error::Empty("empty window".into()));
    }
    Ok(forward_batch(w, obs, obs.len(), 1)?.output)
}

/// Backpropagation through one cell. `dh` is the gradient arriving at the
/// hidden sequence. Accumulates weight gradients into `grad` and returns the
/// gradient with respect to the pre-activation gates (`T*B x 4H`).
#[allow(clippy::too_many_arguments)]
fn cell_backward(
    params: &[f64],
    cell: CellLayout,
    trace: &CellTrace,
    x: CellInput<'_>,
    dh: &[f64],
    steps: usize,
    batch: usize,
    reverse: bool,
    grad: &mut [f64],
) -> Vec<f64> {
    let h = cell.hidden;
    let g = 4 * h;
    let rows = steps * batch;
    let w_hh = &params[cell.w_hh..cell.bias];
    let mut dgates = vec![0.0; rows * g];
    let mut dh_next = vec![0.0; batch * h];
    let mut dc_next = vec![0.0; batch * h];
    for s in (0..steps).rev() {
        let t = if reverse { steps - 1 - s } else { s };
        let prev = if s == 0 {
            None
        } else if reverse {
            Some(t + 1)
        } else {
            Some(t - 1)
        };
        let gt = &trace.gates[t * batch * g..(t + 1) * batch * g];
        let dg = &mut dgates[t * batch * g..(t + 1) * batch * g];
        for b in 0..batch {
            let row = &gt[b * g..(b + 1) * g];
            let drow = &mut dg[b * g..(b + 1) * g];
            let base = t * batch * h + b * h;
            for j in 0..h {
                let (i, f, gg, o) = (row[j], row[h + j], row[2 * h + j], row[3 * h + j]);
                let tc = trace.tc[base + j];
                let dhv = dh[base + j] + dh_next[b * h + j];
                let dc = dc_next[b * h + j] + dhv * o * (1.0 - tc * tc);
                let c_prev = prev.map_or(0.0, |p| trace.c[p * batch * h + b * h + j]);
                drow[j] = dc * gg * i * (1.0 - i);
                drow[h + j] = dc * c_prev * f * (1.0 - f);
                drow[2 * h + j] = dc * i * (1.0 - gg * gg);
                drow[3 * h + j] = dhv * tc * o * (1.0 - o);
                dc_next[b * h + j] = dc * f;
            }
        }
        if prev.is_some() {
            gemm(batch, g, h, 1.0, dg, (g, 1), w_hh, (h, 1), 0.0, &mut dh_next, h);
        }
    }
    // Recurrent weights: dG(t)^T h(prev(t)) summed over all steps but the first processed.
    if steps > 1 {
        let span = (steps - 1) * batch;
        let (dg_rows, h_rows) = if reverse {
            (&dgates[..span * g], &trace.h[batch * h..])
        } else {
            (&dgates[batch * g..], &trace.h[..span * h])
        };
        gemm(g, span, h, 1.0, dg_rows, (1, g), h_rows, (h, 1), 1.0, &mut grad[cell.w_hh..cell.bias], h);
    }
    let gb = &mut grad[cell.bias..cell.end()];
    for r in 0..rows {
        for (acc, v) in gb.iter_mut().zip(&dgates[r * g..(r + 1) * g]) {
            *acc += v;
        }
    }
    let gw = &mut grad[cell.w_ih..cell.w_hh];
    match x {
        CellInput::Single(x) => gemm(g, rows, cell.input, 1.0, &dgates, (1, g), x, (cell.input, 1), 1.0, gw, cell.input),
        CellInput::Pair(a, b) => {
            let half = cell.input / 2;
            gemm(g, rows, half, 1.0, &dgates, (1, g), a, (half, 1), 1.0, gw, cell.input);
            gemm(g, rows, half, 1.0, &dgates, (1, g), b, (half, 1), 1.0, &mut gw[half..], cell.input);
        }
    }
    dgates
}

/// Accumulates the gradient of `sum(d_output * output)` with respect to all
/// parameters into `grad`.
pub fn backward_batch(w: &LstmWeights, cache: &ForwardCache, d_output: &[f64], grad: &mut [f64]) {
    let l = w.layout();
    let p = &w.params;
    let (steps, batch) = (cache.steps, cache.batch);
    let rows = steps * batch;
    let (h1, h2, n_out) = (w.arch.hidden1, w.arch.hidden2, w.arch.n_out);
    assert_eq!(d_output.len(), rows * n_out);
    assert_eq!(grad.len(), p.len());

    let w_out = &p[l.w_out..l.b_out];
    {
        let gw = &mut grad[l.w_out..l.b_out];
        gemm(n_out, rows, h2, 1.0, d_output, (1, n_out), &cache.l2[0].h, (h2, 1), 1.0, gw, 2 * h2);
        gemm(n_out, rows, h2, 1.0, d_output, (1, n_out), &cache.l2[1].h, (h2, 1), 1.0, &mut gw[h2..], 2 * h2);
    }
    let gb = &mut grad[l.b_out..l.total];
    for r in 0..rows {
        for (acc, v) in gb.iter_mut().zip(&d_output[r * n_out..(r + 1) * n_out]) {
            *acc += v;
        }
    }
    let mut dh2 = [vec![0.0; rows * h2], vec![0.0; rows * h2]];
    for (d, off) in dh2.iter_mut().zip([0, h2]) {
        gemm(rows, n_out, h2, 1.0, d_output, (n_out, 1), &w_out[off..], (2 * h2, 1), 0.0, d, h2);
    }

    let l1_in = CellInput::Pair(&cache.l1[0].h, &cache.l1[1].h);
    let mut dh1 = [vec![0.0; rows * h1], vec![0.0; rows * h1]];
    for dir in 0..2 {
        let cell = l.l2[dir];
        let dg = cell_backward(p, cell, &cache.l2[dir], l1_in, &dh2[dir], steps, batch, dir == 1, grad);
        let w_ih = &p[cell.w_ih..cell.w_hh];
        for (half, d) in dh1.iter_mut().enumerate() {
            gemm(rows, 4 * h2, h1, 1.0, &dg, (4 * h2, 1), &w_ih[half * h1..], (cell.input, 1), 1.0, d, h1);
        }
    }
    let x = CellInput::Single(&cache.input);
    for dir in 0..2 {
        cell_backward(p, l.l1[dir], &cache.l1[dir], x, &dh1[dir], steps, batch, dir == 1, grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Architecture {
        Architecture {
            hidden1: 3,
            hidden2: 2,
            n_out: 4,
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let w = LstmWeights::zeros(Architecture::default());
        let out = lstm_forward(&w, &[0.3, -1.0, 2.0, 0.5]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_layout_covers_all_parameters() {
        let layout = ParamLayout::new(Architecture::default());
        let blocks = layout.blocks();
        assert_eq!(blocks.len(), 14);
        let mut next = 0;
        for b in &blocks {
            assert_eq!(b.range.start, next);
            next = b.range.end;
        }
        assert_eq!(next, layout.total);
    }

    #[test]
    fn batch_equals_single_windows() {
        let w = LstmWeights::init(small(), 3);
        let a = [0.1, 0.5, -0.3, 1.2, 0.0];
        let b = [-1.0, 0.2, 0.7, -0.4, 0.9];
        let mut tm = Vec::new();
        for t in 0..5 {
            tm.push(a[t]);
            tm.push(b[t]);
        }
        let batched = forward_batch(&w, &tm, 5, 2).unwrap().output;
        let oa = lstm_forward(&w, &a).unwrap();
        let ob = lstm_forward(&w, &b).unwrap();
        for t in 0..5 {
            for j in 0..4 {
                assert!((batched[(t * 2) * 4 + j] - oa[t * 4 + j]).abs() < 1e-14);
                assert!((batched[(t * 2 + 1) * 4 + j] - ob[t * 4 + j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let w = LstmWeights::init(small(), 11);
        w.save(&path, &serde_json::json!({"note": "x"})).unwrap();
        let (back, meta) = LstmWeights::load(&path).unwrap();
        assert_eq!(back.params.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), w.params.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(meta["note"], "x");
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(LstmWeights::load(&path).is_err());
    }
}
