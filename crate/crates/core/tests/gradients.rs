use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sadp::dp_core::RngStream;
use sadp::trainer::{forward_loss, per_token_grads, ModelParams};

const H: f64 = 1e-5;

fn mean_loss(params: &ModelParams, window: &[u32]) -> f64 {
    forward_loss(params, window).unwrap().0
}

#[test]
fn mean_of_token_grads_matches_finite_differences_of_the_window_loss() {
    let (vocab, dim) = (10, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for point in 0..4u64 {
        let mut params = ModelParams::init(vocab, dim, &RngStream::new(point));
        // move away from the small-init regime
        params.values_mut().iter_mut().for_each(|v| *v *= 10.0);
        let window: Vec<u32> = (0..7).map(|_| rng.random_range(0..vocab as u32)).collect();
        let grads = per_token_grads(&params, &window).unwrap();
        let n = grads.len() as f64;
        let analytic: Vec<f64> = (0..params.len())
            .map(|j| grads.iter().map(|g| g.as_slice()[j]).sum::<f64>() / n)
            .collect();

        for j in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[j] += H;
            let mut minus = params.clone();
            minus.values_mut()[j] -= H;
            let fd = (mean_loss(&plus, &window) - mean_loss(&minus, &window)) / (2.0 * H);
            let scale = fd.abs().max(analytic[j].abs()).max(1e-6);
            assert!(
                (fd - analytic[j]).abs() / scale < 1e-5 || (fd - analytic[j]).abs() < 1e-9,
                "point {point} coord {j}: fd {fd} analytic {}",
                analytic[j]
            );
        }
    }
}

#[test]
fn embedding_rows_of_unseen_inputs_get_no_gradient() {
    let (vocab, dim) = (8, 2);
    let params = ModelParams::init(vocab, dim, &RngStream::new(4));
    let window = [5, 6, 5, 7];
    for g in per_token_grads(&params, &window).unwrap() {
        // inputs are 5, 6, 5; token 7 only appears as a target
        for token in [0usize, 1, 2, 3, 4, 7] {
            assert!(g.as_slice()[token * dim..(token + 1) * dim].iter().all(|&x| x == 0.0));
        }
    }
}
