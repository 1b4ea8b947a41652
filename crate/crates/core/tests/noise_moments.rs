use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sde_moments::multiindex::enumerate_up_to;
use sde_moments::{NoiseModel, TruncatedGaussian, Wiener};

fn check_increment_moments(noise: &dyn NoiseModel, h: f64, seed: u64) {
    let count = 1_000_000;
    for d in 1..=2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + d as u64);
        let mut draws = vec![0.0; d * count];
        for chunk in draws.chunks_mut(d) {
            noise.sample_increment(&mut rng, h, chunk);
        }
        for s in enumerate_up_to(d, 4).into_iter().skip(1) {
            let values: Vec<f64> = draws.chunks(d).map(|w| s.monomial(w)).collect();
            let mean = values.iter().sum::<f64>() / count as f64;
            let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            let se = (var / count as f64).sqrt();
            let want = noise.increment_moment(&s, h);
            assert!(
                (mean - want).abs() <= 5.0 * se,
                "s={s}: {mean} vs {want} (se {se})"
            );
        }
    }
}

#[test]
fn wiener_increment_moments_match_samples() {
    check_increment_moments(&Wiener, 0.3, 1);
}

#[test]
fn truncated_increment_moments_match_samples() {
    check_increment_moments(&TruncatedGaussian::new(1.5).unwrap(), 0.3, 7);
}
