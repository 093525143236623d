use rand::Rng;

/// Epsilon-greedy exploration rate that decays once per exploration event.
///
/// After `n` explorations the rate is `max(min, initial · decayⁿ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonGreedy {
    initial: f64,
    decay: f64,
    min: f64,
    explorations: u32,
    epsilon: f64,
}

impl EpsilonGreedy {
    pub fn new(initial: f64, decay: f64, min: f64) -> Self {
        Self {
            initial,
            decay,
            min,
            explorations: 0,
            epsilon: initial.max(min),
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn explorations(&self) -> u32 {
        self.explorations
    }

    /// Draws one uniform sample; on exploration the rate decays.
    pub fn explore<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let u: f64 = rng.gen();
        if u < self.epsilon {
            self.record_exploration();
            true
        } else {
            false
        }
    }

    fn record_exploration(&mut self) {
        self.explorations = self.explorations.saturating_add(1);
        let n = i32::try_from(self.explorations).unwrap_or(i32::MAX);
        self.epsilon = (self.initial * self.decay.powi(n)).max(self.min);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::mock::StepRng;

    #[test]
    fn one_exploration_from_one() {
        let mut e = EpsilonGreedy::new(1.0, 0.995, 0.01);
        // StepRng(0, 0) always yields 0, which is below any positive epsilon
        assert!(e.explore(&mut StepRng::new(0, 0)));
        assert_eq!(e.epsilon(), 0.995);
    }

    #[test]
    fn zero_epsilon_never_explores() {
        let mut e = EpsilonGreedy::new(0.0, 0.995, 0.0);
        let mut rng = StepRng::new(0, 1 << 40);
        assert!((0..1000).all(|_| !e.explore(&mut rng)));
        assert_eq!(e.explorations(), 0);
    }

    #[test]
    fn never_below_minimum() {
        let mut e = EpsilonGreedy::new(1.0, 0.5, 0.01);
        let mut rng = StepRng::new(0, 0);
        for _ in 0..100 {
            e.explore(&mut rng);
        }
        assert_eq!(e.epsilon(), 0.01);
    }

    #[test]
    fn closed_form_tracks_repeated_multiplication() {
        let mut e = EpsilonGreedy::new(1.0, 0.995, 0.01);
        let mut rng = StepRng::new(0, 0);
        let mut iterated = 1.0f64;
        for _ in 0..900 {
            e.explore(&mut rng);
            iterated *= 0.995;
            assert!((e.epsilon() - iterated).abs() <= 1e-12 * iterated);
        }
    }
}
