use rand::Rng;

use crate::real::Real;

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub active: bool,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
        Self { rate, active: true }
    }

    pub fn inactive() -> Self {
        Self {
            rate: 0.0,
            active: false,
        }
    }

    pub fn with_active(mut self, active: bool) -> Self {
        self.active = active;
        self
    }

    fn is_identity(&self) -> bool {
        !self.active || self.rate == 0.0
    }

    /// Applies dropout in place and returns the multiplicative mask, or `None`
    /// when the layer is the identity.
    pub fn apply<T: Real, R: Rng + ?Sized>(&self, x: &mut [T], rng: &mut R) -> Option<Vec<T>> {
        if self.is_identity() {
            return None;
        }
        let keep = T::of(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = x
            .iter()
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        for (v, &m) in x.iter_mut().zip(&mask) {
            *v *= m;
        }
        Some(mask)
    }

    /// Same as [`apply`](Self::apply) but a no-op without a random source.
    pub fn apply_opt<T: Real, R: Rng + ?Sized>(&self, x: &mut [T], rng: Option<&mut R>) -> Option<Vec<T>> {
        match rng {
            Some(rng) => self.apply(x, rng),
            None => None,
        }
    }
}

pub(crate) fn mask_backward<T: Real>(mask: &Option<Vec<T>>, d: &mut [T]) {
    if let Some(m) = mask {
        for (g, &k) in d.iter_mut().zip(m) {
            *g *= k;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inference_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let orig: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let mut x = orig.clone();
        assert!(DropoutSpec::new(0.5)
            .with_active(false)
            .apply(&mut x, &mut rng)
            .is_none());
        assert_eq!(x, orig);
    }

    #[test]
    fn train_drop_fraction_matches_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &p in &[0.1, 0.5] {
            let mut x = vec![1.0f64; 100_000];
            DropoutSpec::new(p).apply(&mut x, &mut rng);
            let dropped = x.iter().filter(|&&v| v == 0.0).count() as f64 / x.len() as f64;
            assert!((dropped - p).abs() < 0.01, "p={p} dropped={dropped}");
        }
    }
}
