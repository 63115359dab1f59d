//! Temporal-attention guidance: softmax attention over frames, top-k sparsification, the
//! masked squared-difference energy, its gradient, and the guided noise update.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Tensor4;

/// Tolerance on attention row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Guidance schedule and strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    /// Diffusion timestep at which reference attention is read.
    pub timestep: usize,
    pub top_k: usize,
    /// Guidance strength.
    pub strength: f64,
    pub total_steps: usize,
    /// Guidance is applied during the first `guided_steps` sampling steps.
    pub guided_steps: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig { timestep: 400, top_k: 1, strength: 1.0, total_steps: 300, guided_steps: 180 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self, frames: Option<usize>) -> Result<()> {
        if self.guided_steps == 0 || self.guided_steps > self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "guided steps must lie in 1..={}, got {}",
                self.total_steps, self.guided_steps
            )));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidArgument("top-k must be at least 1".into()));
        }
        if let Some(f) = frames {
            if self.top_k > f {
                return Err(Error::InvalidArgument(format!("top-k {} exceeds {f} frames", self.top_k)));
            }
        }
        if !self.strength.is_finite() {
            return Err(Error::InvalidArgument("guidance strength must be finite".into()));
        }
        Ok(())
    }

    /// Whether sampling step `step` (0-based) is guided.
    pub fn is_guided_step(&self, step: usize) -> bool {
        step < self.guided_steps
    }
}

/// `[location][head][query frame][key frame]`, each row a probability distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalAttention {
    tensor: Tensor4,
}

impl TemporalAttention {
    /// Validates shape, non-negativity and row sums.
    pub fn from_tensor(tensor: Tensor4) -> Result<Self> {
        let d = tensor.dims();
        if d[2] != d[3] {
            return Err(Error::ShapeMismatch(format!("attention slices must be square, got {}x{}", d[2], d[3])));
        }
        for (r, row) in tensor.rows().enumerate() {
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("attention row {r} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("attention row {r} sums to {sum}")));
            }
        }
        Ok(TemporalAttention { tensor })
    }

    pub fn tensor(&self) -> &Tensor4 {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor4 {
        self.tensor
    }

    pub fn dims(&self) -> [usize; 4] {
        self.tensor.dims()
    }

    pub fn frames(&self) -> usize {
        self.tensor.dims()[3]
    }
}

/// Binary selector with exactly `k` ones per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseMask {
    dims: [usize; 4],
    bits: Vec<bool>,
    k: usize,
}

impl SparseMask {
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 0/1 values for serialization.
    pub fn to_tensor(&self) -> Tensor4 {
        Tensor4::new(self.dims, self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            .expect("same size")
    }

    /// Accepts a 0/1 tensor whose rows all hold the same number of ones.
    pub fn from_tensor(tensor: &Tensor4) -> Result<Self> {
        let dims = tensor.dims();
        let mut k = None;
        let mut bits = Vec::with_capacity(tensor.data().len());
        for (r, row) in tensor.rows().enumerate() {
            let mut ones = 0;
            for &v in row {
                if v == 1.0 {
                    ones += 1;
                    bits.push(true);
                } else if v == 0.0 {
                    bits.push(false);
                } else {
                    return Err(Error::InvalidArgument(format!("mask row {r} holds non-binary value {v}")));
                }
            }
            match k {
                None => k = Some(ones),
                Some(k) if k != ones => {
                    return Err(Error::InvalidArgument(format!("mask row {r} has {ones} ones, expected {k}")));
                }
                _ => {}
            }
        }
        Ok(SparseMask { dims, bits, k: k.unwrap_or(0) })
    }
}

/// `softmax_j(<q_i, k_j> / sqrt(d))` per location and head, evaluated in f64 with the row
/// maximum subtracted.
pub fn temporal_attention(queries: &Tensor4, keys: &Tensor4) -> Result<TemporalAttention> {
    let (qd, kd) = (queries.dims(), keys.dims());
    if qd != kd {
        return Err(Error::ShapeMismatch(format!("queries {qd:?} vs keys {kd:?}")));
    }
    let [p, c, f, d] = qd;
    if d == 0 {
        return Err(Error::InvalidArgument("projection width must be at least 1".into()));
    }
    let scale = 1.0 / libm::sqrt(d as f64);
    let mut data = Vec::with_capacity(p * c * f * f);
    let mut logits = alloc::vec![0.0f64; f];
    for pi in 0..p {
        for ci in 0..c {
            for i in 0..f {
                let q = queries.row(pi, ci, i);
                for (j, l) in logits.iter_mut().enumerate() {
                    let k = keys.row(pi, ci, j);
                    *l = q.iter().zip(k).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() * scale;
                }
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
                let total: f64 = exps.iter().sum();
                data.extend(exps.iter().map(|e| (e / total) as f32));
            }
        }
    }
    Ok(TemporalAttention { tensor: Tensor4::new([p, c, f, f], data)? })
}

/// Marks the `k` largest entries of every row; ties go to the smaller key-frame index.
pub fn topk_mask(attention: &TemporalAttention, k: usize) -> Result<SparseMask> {
    let f = attention.frames();
    if k == 0 || k > f {
        return Err(Error::InvalidArgument(format!("top-k must lie in 1..={f}, got {k}")));
    }
    let mut bits = alloc::vec![false; attention.tensor.data().len()];
    let mut order: Vec<usize> = (0..f).collect();
    for (r, row) in attention.tensor.rows().enumerate() {
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in &order[..k] {
            bits[r * f + j] = true;
        }
    }
    Ok(SparseMask { dims: attention.dims(), bits, k })
}

fn check_triplet(reference: &TemporalAttention, generated: &Tensor4, mask: &SparseMask) -> Result<()> {
    if reference.dims() != generated.dims() || reference.dims() != mask.dims {
        return Err(Error::ShapeMismatch(format!(
            "reference {:?}, generated {:?}, mask {:?}",
            reference.dims(),
            generated.dims(),
            mask.dims
        )));
    }
    Ok(())
}

/// `|| M * (A_ref - A_gen) ||^2`, accumulated in f64.
pub fn guidance_energy(reference: &TemporalAttention, generated: &Tensor4, mask: &SparseMask) -> Result<f64> {
    check_triplet(reference, generated, mask)?;
    Ok(reference
        .tensor
        .data()
        .iter()
        .zip(generated.data())
        .zip(&mask.bits)
        .filter(|(_, &m)| m)
        .map(|((&a, &g), _)| {
            let d = a as f64 - g as f64;
            d * d
        })
        .sum())
}

/// Gradient of the energy with respect to the generated attention: `2 M * (A_gen - A_ref)`.
pub fn guidance_gradient(reference: &TemporalAttention, generated: &Tensor4, mask: &SparseMask) -> Result<Tensor4> {
    check_triplet(reference, generated, mask)?;
    let data = reference
        .tensor
        .data()
        .iter()
        .zip(generated.data())
        .zip(&mask.bits)
        .map(|((&a, &g), &m)| if m { (2.0 * (g as f64 - a as f64)) as f32 } else { 0.0 })
        .collect();
    Tensor4::new(generated.dims(), data)
}

/// `eps - strength * grad`, elementwise. `grad` is the caller's gradient of the energy with
/// respect to the latent.
pub fn guided_noise(eps: &Tensor4, grad: &Tensor4, strength: f64) -> Result<Tensor4> {
    if eps.dims() != grad.dims() {
        return Err(Error::ShapeMismatch(format!("noise {:?} vs gradient {:?}", eps.dims(), grad.dims())));
    }
    let s = strength as f32;
    let data = eps.data().iter().zip(grad.data()).map(|(&e, &g)| e - s * g).collect();
    Tensor4::new(eps.dims(), data)
}
