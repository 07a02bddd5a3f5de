use rand_distr::{Distribution, StandardNormal};

use super::TrainError;
use crate::dp_core::{GradientVector, RngStream};

/// Embedding + linear-softmax next-token model.
///
/// Parameters live in one flat array laid out as
/// `[E (vocab × dim, row-major) | W (dim × vocab, row-major) | b (vocab)]`;
/// gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    vocab_size: usize,
    dim: usize,
    values: Vec<f64>,
}

pub const INIT_SCALE: f64 = 0.1;

impl ModelParams {
    pub fn param_count(vocab_size: usize, dim: usize) -> usize {
        2 * vocab_size * dim + vocab_size
    }

    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        ModelParams {
            vocab_size,
            dim,
            values: vec![0.0; Self::param_count(vocab_size, dim)],
        }
    }

    /// `E` and `W` entries drawn from `N(0, 0.1²)`, `b = 0`.
    pub fn init(vocab_size: usize, dim: usize, stream: &RngStream) -> Self {
        let mut p = Self::zeros(vocab_size, dim);
        let mut rng = stream.rng();
        let weights = 2 * vocab_size * dim;
        for v in &mut p.values[..weights] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = INIT_SCALE * z;
        }
        p
    }

    pub fn from_values(vocab_size: usize, dim: usize, values: Vec<f64>) -> Result<Self, TrainError> {
        if values.len() != Self::param_count(vocab_size, dim) {
            return Err(TrainError::Shape(format!(
                "{} values for vocab {vocab_size}, dim {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Shape("non-finite parameter".into()));
        }
        Ok(ModelParams {
            vocab_size,
            dim,
            values,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn w_offset(&self) -> usize {
        self.vocab_size * self.dim
    }

    pub(crate) fn b_offset(&self) -> usize {
        2 * self.vocab_size * self.dim
    }

    pub fn embedding(&self, token: u32) -> &[f64] {
        let start = token as usize * self.dim;
        &self.values[start..start + self.dim]
    }

    /// `logits_j = b_j + Σ_k E[t,k] W[k,j]`
    pub fn logits(&self, token: u32) -> Vec<f64> {
        let v = self.vocab_size;
        let mut out = self.values[self.b_offset()..].to_vec();
        let w = &self.values[self.w_offset()..self.b_offset()];
        for (k, &e) in self.embedding(token).iter().enumerate() {
            for (o, &wkj) in out.iter_mut().zip(&w[k * v..(k + 1) * v]) {
                *o += e * wkj;
            }
        }
        out
    }

    pub fn check_tokens(&self, window: &[u32]) -> Result<(), TrainError> {
        match window.iter().find(|&&t| t as usize >= self.vocab_size) {
            Some(&t) => Err(TrainError::TokenOutOfRange {
                token: t,
                vocab_size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }
}

/// Softmax probabilities and `-ln p[target]`.
fn softmax_nll(logits: &[f64], target: u32) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let nll = z.ln() - (logits[target as usize] - max);
    (exps.into_iter().map(|e| e / z).collect(), nll)
}

/// Mean next-token NLL over the window and the per-position terms. Position
/// `i` predicts `window[i + 1]` from `window[i]`.
pub fn forward_loss(params: &ModelParams, window: &[u32]) -> Result<(f64, Vec<f64>), TrainError> {
    if window.len() < 2 {
        return Err(TrainError::WindowTooShort(window.len()));
    }
    params.check_tokens(window)?;
    let losses: Vec<f64> = window
        .windows(2)
        .map(|pair| softmax_nll(&params.logits(pair[0]), pair[1]).1)
        .collect();
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok((mean, losses))
}

/// Writes the gradient of `-ln p(target | input)` into `out` (every entry is
/// overwritten) and returns the loss. Tokens must already be in range.
///
/// With `dlogits = softmax(logits) - onehot(target)` and `e = E[input]`:
/// `∂E[input] = W·dlogits`, `∂W = e ⊗ dlogits`, `∂b = dlogits`, zero elsewhere.
pub fn token_grad_into(params: &ModelParams, input: u32, target: u32, out: &mut [f64]) -> f64 {
    let (v, d) = (params.vocab_size, params.dim);
    let (w_off, b_off) = (params.w_offset(), params.b_offset());
    let w = &params.values[w_off..b_off];
    let (mut dlogits, nll) = softmax_nll(&params.logits(input), target);
    dlogits[target as usize] -= 1.0;

    out[..w_off].fill(0.0);
    let e = params.embedding(input);
    let e_row = input as usize * d;
    for k in 0..d {
        let w_row = &w[k * v..(k + 1) * v];
        out[e_row + k] = w_row.iter().zip(&dlogits).map(|(a, b)| a * b).sum();
        let ek = e[k];
        for (gw, &dl) in out[w_off + k * v..w_off + (k + 1) * v].iter_mut().zip(&dlogits) {
            *gw = ek * dl;
        }
    }
    out[b_off..].copy_from_slice(&dlogits);
    nll
}

/// Per-position losses and gradients. A window of fewer than two tokens has no
/// prediction terms and yields empty lists.
pub fn token_terms(params: &ModelParams, window: &[u32]) -> Result<(Vec<f64>, Vec<GradientVector>), TrainError> {
    params.check_tokens(window)?;
    let mut losses = Vec::with_capacity(window.len().saturating_sub(1));
    let mut grads = Vec::with_capacity(window.len().saturating_sub(1));
    for (i, pair) in window.windows(2).enumerate() {
        let mut g = vec![0.0; params.len()];
        losses.push(token_grad_into(params, pair[0], pair[1], &mut g));
        grads.push(GradientVector::for_token(g, i).map_err(|e| TrainError::Dp(e.to_string()))?);
    }
    Ok((losses, grads))
}

pub fn per_token_grads(params: &ModelParams, window: &[u32]) -> Result<Vec<GradientVector>, TrainError> {
    token_terms(params, window).map(|(_, g)| g)
}

/// Index of the largest logit; ties go to the lowest token id.
pub fn argmax(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp_core::pairwise_sum;

    #[test]
    fn uniform_model_loss_is_ln_vocab() {
        let p = ModelParams::zeros(7, 3);
        let (mean, per) = forward_loss(&p, &[1, 2, 3, 4]).unwrap();
        for l in per {
            assert!((l - 7f64.ln()).abs() < 1e-12);
        }
        assert!((mean - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_window() {
        // vocab 4, dim 2, E rows [0,0],[1,0],[0,1],[1,1]; W = [[1,0,0,0],[0,2,0,0]]; b = 0
        let mut values = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        values.extend([1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        values.extend([0.0; 4]);
        let p = ModelParams::from_values(4, 2, values).unwrap();
        // tokens 1 -> 2 -> 3
        // pos 0: logits [1,0,0,0], target 2: nll = ln(e + 3) - 0
        // pos 1: logits [0,2,0,0], target 3: nll = ln(e^2 + 3) - 0
        let (mean, per) = forward_loss(&p, &[1, 2, 3]).unwrap();
        let e = std::f64::consts::E;
        assert!((per[0] - (e + 3.0).ln()).abs() < 1e-12);
        assert!((per[1] - (e * e + 3.0).ln()).abs() < 1e-12);
        assert!((mean - ((e + 3.0).ln() + (e * e + 3.0).ln()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn loss_errors() {
        let p = ModelParams::zeros(4, 2);
        assert!(matches!(forward_loss(&p, &[1]), Err(TrainError::WindowTooShort(1))));
        assert!(matches!(forward_loss(&p, &[1, 9]), Err(TrainError::TokenOutOfRange { token: 9, .. })));
    }

    #[test]
    fn single_token_window_has_no_terms() {
        let p = ModelParams::zeros(4, 2);
        assert!(per_token_grads(&p, &[2]).unwrap().is_empty());
    }

    #[test]
    fn mean_of_token_grads_is_grad_of_mean_loss() {
        let p = ModelParams::init(10, 4, &RngStream::new(3));
        let window = [1, 5, 2, 9, 9, 0, 3];
        let grads = per_token_grads(&p, &window).unwrap();
        let n = grads.len() as f64;
        let sum = pairwise_sum(&grads, p.len());
        // finite differences of the mean loss on a handful of coordinates
        for &c in &[0usize, 7, 21, 45, 50, 83, p.len() - 1] {
            let h = 1e-6;
            let mut plus = p.clone();
            plus.values_mut()[c] += h;
            let mut minus = p.clone();
            minus.values_mut()[c] -= h;
            let fd = (forward_loss(&plus, &window).unwrap().0 - forward_loss(&minus, &window).unwrap().0) / (2.0 * h);
            assert!((sum.as_slice()[c] / n - fd).abs() < 1e-8, "coord {c}");
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 1.0, 1.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
