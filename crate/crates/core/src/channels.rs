//! Stochastic Pauli + leakage error channels.

use rand::Rng;

use crate::error::{Error, Result};

/// Two-qubit-gate scattering probability for the reference laser parameters.
pub const P_S_TWO_QUBIT: f64 = 25.2e-5;
/// One-qubit-gate scattering probability for the same parameters.
pub const P_S_ONE_QUBIT: f64 = 9.76e-6;
/// Ratio used to scale one-qubit noise when only the two-qubit rate is swept.
pub const ONE_QUBIT_RATIO: f64 = P_S_ONE_QUBIT / P_S_TWO_QUBIT;

/// Field standard deviation (µG) to per-gate dephasing probability.
pub const FIELD_TABLE: [(f64, f64); 4] = [(100.0, 7.75e-3), (32.0, 7.75e-4), (10.0, 7.75e-5), (1.0, 7.75e-6)];

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum FaultOutcome {
    Identity,
    PauliX,
    PauliY,
    PauliZ,
    Leak,
}

impl FaultOutcome {
    pub const ALL: [FaultOutcome; 5] = [
        FaultOutcome::Identity,
        FaultOutcome::PauliX,
        FaultOutcome::PauliY,
        FaultOutcome::PauliZ,
        FaultOutcome::Leak,
    ];

    /// (x, z) flip bits of a Pauli outcome. `Leak` carries no frame.
    pub fn flips(self) -> (bool, bool) {
        match self {
            FaultOutcome::Identity | FaultOutcome::Leak => (false, false),
            FaultOutcome::PauliX => (true, false),
            FaultOutcome::PauliY => (true, true),
            FaultOutcome::PauliZ => (false, true),
        }
    }

    /// Conjugation by a Hadamard: swaps X and Z.
    pub fn hadamard(self) -> Self {
        match self {
            FaultOutcome::PauliX => FaultOutcome::PauliZ,
            FaultOutcome::PauliZ => FaultOutcome::PauliX,
            other => other,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// A finite distribution over [`FaultOutcome`]s.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    probs: [f64; 5],
    // cumulative thresholds over X, Y, Z, Leak; identity takes the remainder
    cumulative: [f64; 4],
    support: Vec<FaultOutcome>,
}

impl Channel {
    pub fn new(entries: &[(FaultOutcome, f64)]) -> Result<Self> {
        let mut probs = [0.0; 5];
        for &(outcome, p) in entries {
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(Error::Channel(format!("probability {p} for {outcome:?} outside [0, 1]")));
            }
            probs[outcome.slot()] += p;
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Channel(format!("probabilities sum to {total}")));
        }
        let mut cumulative = [0.0; 4];
        let mut acc = 0.0;
        for (i, slot) in (1..5).enumerate() {
            acc += probs[slot];
            cumulative[i] = acc;
        }
        let support = FaultOutcome::ALL.into_iter().filter(|o| probs[o.slot()] > 0.0).collect();
        Ok(Channel { probs, cumulative, support })
    }

    pub fn identity() -> Self {
        Channel::new(&[(FaultOutcome::Identity, 1.0)]).expect("identity channel")
    }

    pub fn probability(&self, outcome: FaultOutcome) -> f64 {
        self.probs[outcome.slot()]
    }

    pub fn leak_probability(&self) -> f64 {
        self.probability(FaultOutcome::Leak)
    }

    pub fn non_identity_probability(&self) -> f64 {
        self.cumulative[3]
    }

    /// Outcomes with non-zero probability, in declaration order.
    pub fn support(&self) -> &[FaultOutcome] {
        &self.support
    }

    pub fn entries(&self) -> impl Iterator<Item = (FaultOutcome, f64)> + '_ {
        self.support.iter().map(|&o| (o, self.probability(o)))
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FaultOutcome {
        let u: f64 = rng.gen();
        if u >= self.cumulative[3] {
            FaultOutcome::Identity
        } else if u < self.cumulative[0] {
            FaultOutcome::PauliX
        } else if u < self.cumulative[1] {
            FaultOutcome::PauliY
        } else if u < self.cumulative[2] {
            FaultOutcome::PauliZ
        } else {
            FaultOutcome::Leak
        }
    }
}

/// Draws one outcome from `channel`.
pub fn sample<R: Rng + ?Sized>(channel: &Channel, rng: &mut R) -> FaultOutcome {
    channel.sample(rng)
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Channel(format!("{name} = {p} outside [0, 1]")))
    }
}

/// Scattering on a hyperfine qubit: half of the Raman events leak.
pub fn hyperfine_scatter_channel(p_s: f64) -> Result<Channel> {
    check_probability("p_s", p_s)?;
    Channel::new(&[
        (FaultOutcome::Identity, 1.0 - p_s / 2.0),
        (FaultOutcome::PauliX, p_s / 8.0),
        (FaultOutcome::PauliY, p_s / 8.0),
        (FaultOutcome::Leak, p_s / 4.0),
    ])
}

/// Scattering on a Zeeman qubit: Raman flips plus Rayleigh dephasing, no leakage.
pub fn zeeman_scatter_channel(p_s: f64) -> Result<Channel> {
    check_probability("p_s", p_s)?;
    Channel::new(&[
        (FaultOutcome::Identity, 1.0 - p_s),
        (FaultOutcome::PauliX, p_s / 4.0),
        (FaultOutcome::PauliY, p_s / 4.0),
        (FaultOutcome::PauliZ, p_s / 2.0),
    ])
}

pub fn dephasing_channel(p_m: f64) -> Result<Channel> {
    check_probability("p_M", p_m)?;
    Channel::new(&[(FaultOutcome::Identity, 1.0 - p_m), (FaultOutcome::PauliZ, p_m)])
}

/// Twirled residual rotation on the target of a CNOT whose control leaked.
pub fn bit_twirl_channel() -> Channel {
    Channel::new(&[(FaultOutcome::Identity, 0.5), (FaultOutcome::PauliX, 0.5)]).expect("bit twirl")
}

/// Twirled residual rotation on the control of a CNOT whose target leaked.
pub fn phase_twirl_channel() -> Channel {
    Channel::new(&[(FaultOutcome::Identity, 0.5), (FaultOutcome::PauliZ, 0.5)]).expect("phase twirl")
}

pub fn depolarize_channel() -> Channel {
    Channel::new(&[
        (FaultOutcome::Identity, 0.25),
        (FaultOutcome::PauliX, 0.25),
        (FaultOutcome::PauliY, 0.25),
        (FaultOutcome::PauliZ, 0.25),
    ])
    .expect("depolarizing channel")
}

/// Per-two-qubit-gate dephasing probability for a field fluctuation of
/// `sigma_ug` µG. Tabulated field values return the tabulated probability;
/// anything else follows the quadratic law anchored at 100 µG.
pub fn pm_from_sigma(sigma_ug: f64) -> Result<f64> {
    if !(sigma_ug > 0.0) || !sigma_ug.is_finite() {
        return Err(Error::Config(format!("field deviation must be positive, got {sigma_ug}")));
    }
    if let Some(&(_, p)) = FIELD_TABLE.iter().find(|(s, _)| *s == sigma_ug) {
        return Ok(p);
    }
    let p = 7.75e-3 * (sigma_ug / 100.0).powi(2);
    if p > 1.0 {
        return Err(Error::Config(format!("field deviation {sigma_ug} µG gives p_M = {p} > 1")));
    }
    Ok(p)
}

/// Physical noise strengths for one simulation point.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseParams {
    pub p_s_2q: f64,
    pub p_s_1q: f64,
    pub p_m: f64,
    pub sigma_ug: Option<f64>,
    /// Apply dephasing to every memory-susceptible qubit on every CNOT time
    /// step rather than only at the gates it takes part in.
    pub idle_dephasing: bool,
}

impl NoiseParams {
    /// Two-qubit scattering `p_s`, one-qubit rate scaled by [`ONE_QUBIT_RATIO`],
    /// no field noise.
    pub fn scattering(p_s: f64) -> Self {
        NoiseParams { p_s_2q: p_s, p_s_1q: p_s * ONE_QUBIT_RATIO, p_m: 0.0, sigma_ug: None, idle_dephasing: false }
    }

    pub fn noiseless() -> Self {
        NoiseParams::scattering(0.0)
    }

    pub fn with_pm(mut self, p_m: f64) -> Self {
        self.p_m = p_m;
        self.sigma_ug = None;
        self
    }

    pub fn with_sigma(mut self, sigma_ug: f64) -> Result<Self> {
        self.p_m = pm_from_sigma(sigma_ug)?;
        self.sigma_ug = Some(sigma_ug);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("p_s_2q", self.p_s_2q)?;
        check_probability("p_s_1q", self.p_s_1q)?;
        check_probability("p_M", self.p_m)?;
        if let Some(sigma) = self.sigma_ug {
            let expected = pm_from_sigma(sigma)?;
            if (self.p_m - expected).abs() > 1e-9 * expected {
                return Err(Error::Config(format!(
                    "p_M = {} inconsistent with sigma = {sigma} µG (expected {expected})",
                    self.p_m
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-15 + 1e-12 * b.abs()
    }

    #[test]
    fn hyperfine_values() {
        let ch = hyperfine_scatter_channel(2.52e-4).unwrap();
        assert!(close(ch.leak_probability(), 6.3e-5));
        assert_eq!(hyperfine_scatter_channel(0.0).unwrap().support(), &[FaultOutcome::Identity]);
        let ch = hyperfine_scatter_channel(0.4).unwrap();
        assert!(close(ch.probability(FaultOutcome::Identity), 0.8));
        assert!(close(ch.probability(FaultOutcome::PauliX), 0.05));
        assert!(close(ch.probability(FaultOutcome::PauliY), 0.05));
        assert!(close(ch.probability(FaultOutcome::Leak), 0.1));
        assert!(hyperfine_scatter_channel(1.5).is_err());
        assert!(hyperfine_scatter_channel(-0.1).is_err());
    }

    #[test]
    fn zeeman_values() {
        let ch = zeeman_scatter_channel(2.52e-4).unwrap();
        assert!(close(ch.probability(FaultOutcome::PauliZ), 1.26e-4));
        assert_eq!(ch.leak_probability(), 0.0);
        assert_eq!(zeeman_scatter_channel(0.0).unwrap().support(), &[FaultOutcome::Identity]);
        assert!(zeeman_scatter_channel(2.0).is_err());
    }

    #[test]
    fn dephasing_values() {
        assert_eq!(dephasing_channel(7.75e-3).unwrap().probability(FaultOutcome::PauliZ), 7.75e-3);
        assert_eq!(dephasing_channel(7.75e-5).unwrap().probability(FaultOutcome::PauliZ), 7.75e-5);
        assert_eq!(dephasing_channel(0.0).unwrap().support(), &[FaultOutcome::Identity]);
        assert!(dephasing_channel(1.01).is_err());
    }

    #[test]
    fn twirls_and_depolarizer() {
        assert_eq!(bit_twirl_channel().probability(FaultOutcome::PauliX), 0.5);
        assert_eq!(phase_twirl_channel().probability(FaultOutcome::PauliZ), 0.5);
        let dep = depolarize_channel();
        for o in [FaultOutcome::Identity, FaultOutcome::PauliX, FaultOutcome::PauliY, FaultOutcome::PauliZ] {
            assert_eq!(dep.probability(o), 0.25);
        }
        // two independent bit twirls: X survives iff exactly one fires
        let p = bit_twirl_channel().probability(FaultOutcome::PauliX);
        assert_eq!(2.0 * p * (1.0 - p), 0.5);
        // outcomes anticommuting with a Z check
        let flip: f64 = dep.entries().filter(|(o, _)| o.flips().0).map(|(_, p)| p).sum();
        assert_eq!(flip, 0.5);
    }

    #[test]
    fn field_table() {
        assert_eq!(pm_from_sigma(100.0).unwrap(), 7.75e-3);
        assert_eq!(pm_from_sigma(32.0).unwrap(), 7.75e-4);
        assert_eq!(pm_from_sigma(10.0).unwrap(), 7.75e-5);
        assert_eq!(pm_from_sigma(1.0).unwrap(), 7.75e-6);
        assert!(close(pm_from_sigma(50.0).unwrap(), 7.75e-3 / 4.0));
        assert!(pm_from_sigma(0.0).is_err());
        assert!(pm_from_sigma(-3.0).is_err());
        // the quadratic law is monotone; the tabulated 32 and 1 µG values sit off it
        let mut last = 0.0;
        for i in (1..2000).filter(|&i| i != 10 && i != 320) {
            let p = pm_from_sigma(i as f64 * 0.1).unwrap();
            assert!(p > last, "sigma {}", i as f64 * 0.1);
            last = p;
        }
    }

    #[test]
    fn noise_params_consistency() {
        let n = NoiseParams::scattering(1e-3).with_sigma(10.0).unwrap();
        assert_eq!(n.p_m, 7.75e-5);
        n.validate().unwrap();
        let mut bad = n.clone();
        bad.p_m = 1e-4;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let ch = hyperfine_scatter_channel(0.3).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..1000).map(|_| sample(&ch, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let id = Channel::identity();
        assert!((0..1000).all(|_| sample(&id, &mut rng) == FaultOutcome::Identity));
    }

    proptest! {
        #[test]
        fn channels_normalized(p in 0.0f64..=1.0) {
            for ch in [hyperfine_scatter_channel(p).unwrap(), zeeman_scatter_channel(p).unwrap(), dephasing_channel(p).unwrap()] {
                let total: f64 = FaultOutcome::ALL.iter().map(|&o| ch.probability(o)).sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
            }
            prop_assert_eq!(zeeman_scatter_channel(p).unwrap().leak_probability(), 0.0);
            prop_assert_eq!(dephasing_channel(p).unwrap().leak_probability(), 0.0);
            let h = hyperfine_scatter_channel(p).unwrap().non_identity_probability();
            let z = zeeman_scatter_channel(p).unwrap().non_identity_probability();
            prop_assert!((h - p / 2.0).abs() <= 1e-15);
            prop_assert!((z - p).abs() <= 1e-15);
        }
    }
}
