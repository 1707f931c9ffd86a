//! Pauli-frame simulation of noisy syndrome extraction with leakage.
//!
//! Every physical qubit carries an X-flip bit, a Z-flip bit and a leaked
//! flag. Ideal CNOTs conjugate the frame, noisy locations draw from a
//! [`Channel`], and a CNOT with a leaked participant is replaced by the
//! configured [`LeakageModel`].
//!
//! All randomness flows through a [`FaultSource`]. Spontaneous fault
//! locations call [`FaultSource::fault`] exactly once each, in a fixed order
//! that does not depend on earlier outcomes, so a location can be addressed
//! by its position in that sequence. Randomness that only exists because of
//! an earlier fault (twirls, depolarization, post-return frames, random
//! readout) goes through [`FaultSource::induced`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{
    bit_twirl_channel, depolarize_channel, dephasing_channel, hyperfine_scatter_channel, phase_twirl_channel,
    zeeman_scatter_channel, Channel, FaultOutcome, NoiseParams,
};
use crate::error::{Error, Result};
use crate::experiment::TrialConfig;
use crate::lattice::{StabilizerKind, ToricLayout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Species {
    /// Clock-state qubit: can leak, immune to field noise.
    Hyperfine,
    /// Electron-spin qubit: cannot leak, dephases with the field.
    Zeeman,
}

impl Species {
    pub fn can_leak(self) -> bool {
        matches!(self, Species::Hyperfine)
    }

    pub fn memory_susceptible(self) -> bool {
        matches!(self, Species::Zeeman)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    /// All hyperfine qubits, standard circuit plus a SWAP leakage-reduction step.
    #[serde(rename = "hyperfine")]
    HyperfineWithSwapLrc,
    /// All Zeeman qubits, standard circuit.
    #[serde(rename = "zeeman")]
    PureZeeman,
    /// Zeeman data, hyperfine ancillas, standard circuit.
    #[serde(rename = "mixed")]
    MixedSpecies,
}

impl Architecture {
    pub const ALL: [Architecture; 3] =
        [Architecture::HyperfineWithSwapLrc, Architecture::PureZeeman, Architecture::MixedSpecies];

    pub fn data_species(self) -> Species {
        match self {
            Architecture::HyperfineWithSwapLrc => Species::Hyperfine,
            Architecture::PureZeeman | Architecture::MixedSpecies => Species::Zeeman,
        }
    }

    pub fn ancilla_species(self) -> Species {
        match self {
            Architecture::PureZeeman => Species::Zeeman,
            Architecture::HyperfineWithSwapLrc | Architecture::MixedSpecies => Species::Hyperfine,
        }
    }

    pub fn swap_lrc(self) -> bool {
        matches!(self, Architecture::HyperfineWithSwapLrc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::HyperfineWithSwapLrc => "hyperfine",
            Architecture::PureZeeman => "zeeman",
            Architecture::MixedSpecies => "mixed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeakageModel {
    /// The unleaked partner of a leaked qubit is fully depolarized.
    #[serde(rename = "depolarizing")]
    Depolarizing,
    /// No entanglement is generated; the leftover single-qubit rotations of
    /// the compiled CNOT act on the unleaked partner as Pauli twirls.
    #[serde(rename = "ms")]
    MolmerSorensen,
}

impl LeakageModel {
    pub const ALL: [LeakageModel; 2] = [LeakageModel::Depolarizing, LeakageModel::MolmerSorensen];

    pub fn name(self) -> &'static str {
        match self {
            LeakageModel::Depolarizing => "depolarizing",
            LeakageModel::MolmerSorensen => "ms",
        }
    }
}

impl std::str::FromStr for LeakageModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "depolarizing" | "depol" => Ok(LeakageModel::Depolarizing),
            "ms" | "molmer-sorensen" | "molmersorensen" => Ok(LeakageModel::MolmerSorensen),
            _ => Err(Error::Config(format!("unknown leakage model '{s}' (expected depolarizing or ms)"))),
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hyperfine" => Ok(Architecture::HyperfineWithSwapLrc),
            "zeeman" => Ok(Architecture::PureZeeman),
            "mixed" => Ok(Architecture::MixedSpecies),
            _ => Err(Error::Config(format!("unknown architecture '{s}' (expected hyperfine, zeeman or mixed)"))),
        }
    }
}

impl std::str::FromStr for LeakedReadout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bright" => Ok(LeakedReadout::Bright),
            "random" => Ok(LeakedReadout::Random),
            _ => Err(Error::Config(format!("unknown leaked readout '{s}' (expected bright or random)"))),
        }
    }
}

/// Outcome reported when a leaked ancilla is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeakedReadout {
    /// Leaked population fluoresces: always reads 1.
    #[default]
    #[serde(rename = "bright")]
    Bright,
    /// Uniformly random bit.
    #[serde(rename = "random")]
    Random,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct QubitState {
    pub x_flip: bool,
    pub z_flip: bool,
    /// While set, the frame bits carry no meaning.
    pub leaked: bool,
}

impl QubitState {
    #[inline]
    fn apply(&mut self, outcome: FaultOutcome) {
        let (x, z) = outcome.flips();
        self.x_flip ^= x;
        self.z_flip ^= z;
    }

    #[inline]
    fn set_frame(&mut self, outcome: FaultOutcome) {
        let (x, z) = outcome.flips();
        self.x_flip = x;
        self.z_flip = z;
    }
}

/// Kind of spontaneous fault location.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SiteKind {
    /// One-qubit basis preparation of an X-check ancilla.
    Preparation,
    /// Two-qubit gate scattering.
    Gate,
    /// Field dephasing.
    Dephasing,
    /// One-qubit basis rotation before an X-check readout.
    Measurement,
}

/// Address of a spontaneous fault location.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Site {
    pub round: usize,
    /// CNOT time step (1-based); 0 for preparation and measurement sites.
    pub step: usize,
    /// Physical qubit.
    pub qubit: usize,
    pub kind: SiteKind,
}

pub trait FaultSource {
    /// Outcome of the spontaneous location `site`.
    fn fault(&mut self, site: Site, channel: &Channel) -> FaultOutcome;
    /// Randomness caused by an earlier fault.
    fn induced(&mut self, channel: &Channel) -> FaultOutcome;
}

/// Monte Carlo source: every draw samples its channel.
pub struct RandomFaults<R>(pub R);

impl<R: Rng> FaultSource for RandomFaults<R> {
    #[inline]
    fn fault(&mut self, _site: Site, channel: &Channel) -> FaultOutcome {
        channel.sample(&mut self.0)
    }

    #[inline]
    fn induced(&mut self, channel: &Channel) -> FaultOutcome {
        channel.sample(&mut self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Data,
    Ancilla,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeakEvent {
    Leaked { site: Site, role: Role },
    Returned { site: Site, role: Role },
    CorruptGate { round: usize, step: usize, control: usize, target: usize },
    Reinitialized { round: usize, qubit: usize },
    /// A data qubit still leaked after the last noisy round was replaced by a
    /// random Pauli frame before the final readout.
    FinalDepolarized { qubit: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyndromeRound {
    pub round_index: usize,
    pub x_outcomes: Vec<bool>,
    pub z_outcomes: Vec<bool>,
}

impl SyndromeRound {
    pub fn outcomes(&self, kind: StabilizerKind) -> &[bool] {
        match kind {
            StabilizerKind::X => &self.x_outcomes,
            StabilizerKind::Z => &self.z_outcomes,
        }
    }
}

/// Accumulated Pauli error on the data qubits, indexed by data qubit.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFrame {
    pub x: Vec<bool>,
    pub z: Vec<bool>,
}

impl DataFrame {
    pub fn clean(n: usize) -> Self {
        DataFrame { x: vec![false; n], z: vec![false; n] }
    }

    pub fn bits(&self, kind: StabilizerKind) -> &[bool] {
        match kind {
            StabilizerKind::X => &self.x,
            StabilizerKind::Z => &self.z,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Noisy rounds followed by one noiseless round read off the data frame.
    pub history: Vec<SyndromeRound>,
    pub final_frame: DataFrame,
    pub events: Vec<LeakEvent>,
}

/// Ideal CNOT conjugation of a Pauli frame.
///
/// Neither qubit may be leaked; use [`leak_interaction`] for that case.
#[inline]
pub fn propagate_cnot(control: &mut QubitState, target: &mut QubitState) {
    debug_assert!(!control.leaked && !target.leaked);
    target.x_flip ^= control.x_flip;
    control.z_flip ^= target.z_flip;
}

/// Replaces a CNOT in which at least one participant is leaked.
pub fn leak_interaction<F: FaultSource + ?Sized>(
    control: &mut QubitState,
    target: &mut QubitState,
    model: LeakageModel,
    source: &mut F,
) -> Result<()> {
    match (control.leaked, target.leaked) {
        (false, false) => Err(Error::Contract("leak_interaction called with no leaked participant".into())),
        (true, true) => Ok(()),
        (true, false) => {
            let channel = match model {
                LeakageModel::Depolarizing => depolarize_channel(),
                LeakageModel::MolmerSorensen => bit_twirl_channel(),
            };
            target.apply(source.induced(&channel));
            Ok(())
        }
        (false, true) => {
            let channel = match model {
                LeakageModel::Depolarizing => depolarize_channel(),
                LeakageModel::MolmerSorensen => phase_twirl_channel(),
            };
            control.apply(source.induced(&channel));
            Ok(())
        }
    }
}

/// What a noise location did to the leakage state of its qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseEffect {
    None,
    Leaked,
    Returned,
}

/// Applies one draw of `channel` to `qubit`.
///
/// An unleaked qubit takes the Pauli outcome or leaks. A leaked qubit returns
/// to the computational subspace when the draw is `Leak` (so the return
/// probability equals the leak probability) and lands in a uniformly random
/// Pauli frame.
#[inline]
pub fn apply_gate_noise<F: FaultSource + ?Sized>(
    qubit: &mut QubitState,
    channel: &Channel,
    site: Site,
    source: &mut F,
) -> NoiseEffect {
    let outcome = source.fault(site, channel);
    if qubit.leaked {
        if outcome == FaultOutcome::Leak {
            qubit.leaked = false;
            qubit.set_frame(source.induced(&depolarize_channel()));
            NoiseEffect::Returned
        } else {
            NoiseEffect::None
        }
    } else if outcome == FaultOutcome::Leak {
        *qubit = QubitState { leaked: true, ..QubitState::default() };
        NoiseEffect::Leaked
    } else {
        qubit.apply(outcome);
        NoiseEffect::None
    }
}

#[derive(Clone, Copy, Debug)]
struct Gate {
    /// Global stabilizer index: X checks first, then Z checks.
    stabilizer: usize,
    data: usize,
    ancilla_controls: bool,
}

/// Reusable simulator bound to one layout and one noise configuration.
pub struct Simulator<'a> {
    layout: &'a ToricLayout,
    arch: Architecture,
    model: LeakageModel,
    readout: LeakedReadout,
    rounds: usize,
    idle_dephasing: bool,
    two_qubit: [Channel; 2],
    one_qubit: [Channel; 2],
    dephasing: Channel,
    coin: Channel,
    schedule: Vec<Vec<Gate>>,
    /// Data qubit swapped with each ancilla under the SWAP-LRC.
    swap_partner: Vec<usize>,
    species: Vec<Species>,
    qubits: Vec<QubitState>,
    data_slot: Vec<usize>,
    anc_slot: Vec<usize>,
    idle_mask: Vec<bool>,
    round: usize,
    events: Option<Vec<LeakEvent>>,
}

fn species_index(s: Species) -> usize {
    match s {
        Species::Hyperfine => 0,
        Species::Zeeman => 1,
    }
}

impl<'a> Simulator<'a> {
    pub fn new(
        layout: &'a ToricLayout,
        arch: Architecture,
        model: LeakageModel,
        noise: &NoiseParams,
        rounds: usize,
    ) -> Result<Self> {
        noise.validate()?;
        if rounds == 0 {
            return Err(Error::Config("at least one noisy round is required".into()));
        }
        let n = layout.num_stabilizers();
        let n_data = layout.num_data();
        let mut schedule = vec![Vec::with_capacity(2 * n); 4];
        for (offset, kind) in [(0, StabilizerKind::X), (n, StabilizerKind::Z)] {
            for (s, support) in layout.supports(kind).iter().enumerate() {
                for (step, &q) in support.iter().enumerate() {
                    let standard = kind == StabilizerKind::X;
                    // The SWAP-LRC merges the last parity CNOT into a SWAP:
                    // step 4 flips direction and a fifth CNOT restores it.
                    let ancilla_controls = if arch.swap_lrc() && step == 3 { !standard } else { standard };
                    schedule[step].push(Gate { stabilizer: offset + s, data: q, ancilla_controls });
                }
            }
        }
        let mut swap_partner = Vec::new();
        if arch.swap_lrc() {
            let last: Vec<Gate> = schedule[3].clone();
            schedule.push(
                last.iter()
                    .map(|g| Gate { ancilla_controls: !g.ancilla_controls, ..*g })
                    .collect(),
            );
            swap_partner = vec![usize::MAX; 2 * n];
            for g in &last {
                swap_partner[g.stabilizer] = g.data;
            }
        }
        let mut species = vec![arch.data_species(); n_data];
        species.extend(std::iter::repeat(arch.ancilla_species()).take(2 * n));
        Ok(Simulator {
            layout,
            arch,
            model,
            readout: LeakedReadout::default(),
            rounds,
            idle_dephasing: noise.idle_dephasing,
            two_qubit: [hyperfine_scatter_channel(noise.p_s_2q)?, zeeman_scatter_channel(noise.p_s_2q)?],
            one_qubit: [hyperfine_scatter_channel(noise.p_s_1q)?, zeeman_scatter_channel(noise.p_s_1q)?],
            dephasing: dephasing_channel(noise.p_m)?,
            coin: bit_twirl_channel(),
            schedule,
            swap_partner,
            qubits: vec![QubitState::default(); n_data + 2 * n],
            species,
            data_slot: (0..n_data).collect(),
            anc_slot: (n_data..n_data + 2 * n).collect(),
            idle_mask: vec![false; n_data + 2 * n],
            round: 0,
            events: None,
        })
    }

    pub fn from_config(layout: &'a ToricLayout, config: &TrialConfig) -> Result<Self> {
        let mut sim = Simulator::new(layout, config.arch, config.model, &config.noise, config.rounds)?;
        sim.readout = config.leaked_readout;
        Ok(sim)
    }

    pub fn with_readout(mut self, readout: LeakedReadout) -> Self {
        self.readout = readout;
        self
    }

    /// Records leakage events in subsequent trials.
    pub fn with_event_log(mut self) -> Self {
        self.events = Some(Vec::new());
        self
    }

    pub fn layout(&self) -> &ToricLayout {
        self.layout
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    /// Physical qubit currently holding data qubit `q`.
    pub fn data_qubit(&self, q: usize) -> usize {
        self.data_slot[q]
    }

    /// Physical qubit currently serving stabilizer `s` of `kind`.
    pub fn ancilla_qubit(&self, kind: StabilizerKind, s: usize) -> usize {
        match kind {
            StabilizerKind::X => self.anc_slot[s],
            StabilizerKind::Z => self.anc_slot[self.layout.num_stabilizers() + s],
        }
    }

    pub fn qubit(&self, physical: usize) -> QubitState {
        self.qubits[physical]
    }

    pub fn qubit_mut(&mut self, physical: usize) -> &mut QubitState {
        &mut self.qubits[physical]
    }

    /// Clears all qubits, roles and the event log.
    pub fn reset(&mut self) {
        self.qubits.fill(QubitState::default());
        let n_data = self.layout.num_data();
        for (q, slot) in self.data_slot.iter_mut().enumerate() {
            *slot = q;
        }
        for (s, slot) in self.anc_slot.iter_mut().enumerate() {
            *slot = n_data + s;
        }
        self.round = 0;
        if let Some(ev) = self.events.as_mut() {
            ev.clear();
        }
    }

    /// Resets and runs the configured number of noisy rounds plus the final
    /// noiseless readout.
    pub fn run<F: FaultSource + ?Sized>(&mut self, source: &mut F) -> Result<TrialRecord> {
        self.reset();
        let mut history = Vec::with_capacity(self.rounds + 1);
        for _ in 0..self.rounds {
            history.push(self.extraction_round(source)?);
        }
        let final_frame = self.final_frame(source);
        history.push(SyndromeRound {
            round_index: self.rounds,
            x_outcomes: self.layout.syndrome(StabilizerKind::X, &final_frame.x, &final_frame.z),
            z_outcomes: self.layout.syndrome(StabilizerKind::Z, &final_frame.x, &final_frame.z),
        });
        let events = self.events.as_mut().map(std::mem::take).unwrap_or_default();
        Ok(TrialRecord { history, final_frame, events })
    }

    /// Current data error. Leaked data qubits are replaced by a random frame
    /// and marked unleaked.
    fn final_frame<F: FaultSource + ?Sized>(&mut self, source: &mut F) -> DataFrame {
        let n_data = self.layout.num_data();
        let mut frame = DataFrame::clean(n_data);
        for q in 0..n_data {
            let p = self.data_slot[q];
            if self.qubits[p].leaked {
                let outcome = source.induced(&depolarize_channel());
                self.qubits[p] = QubitState::default();
                self.qubits[p].set_frame(outcome);
                self.log(LeakEvent::FinalDepolarized { qubit: p });
            }
            frame.x[q] = self.qubits[p].x_flip;
            frame.z[q] = self.qubits[p].z_flip;
        }
        frame
    }

    fn log(&mut self, event: LeakEvent) {
        if let Some(ev) = self.events.as_mut() {
            ev.push(event);
        }
    }

    fn role_of(&self, physical: usize) -> Role {
        if self.anc_slot.contains(&physical) {
            Role::Ancilla
        } else {
            Role::Data
        }
    }

    fn noise<F: FaultSource + ?Sized>(
        &mut self,
        physical: usize,
        kind: SiteKind,
        step: usize,
        source: &mut F,
    ) -> Result<()> {
        let sp = species_index(self.species[physical]);
        let site = Site { round: self.round, step, qubit: physical, kind };
        let qubit = &mut self.qubits[physical];
        let effect = match kind {
            SiteKind::Gate => apply_gate_noise(qubit, &self.two_qubit[sp], site, source),
            SiteKind::Preparation => apply_gate_noise(qubit, &self.one_qubit[sp], site, source),
            // noise after the closing Hadamard, pulled back through it
            SiteKind::Measurement => apply_gate_noise(qubit, &self.one_qubit[sp], site, &mut HadamardFaults(source)),
            SiteKind::Dephasing => unreachable!("dephasing has its own path"),
        };
        match effect {
            NoiseEffect::None => {}
            NoiseEffect::Leaked => {
                if !self.species[physical].can_leak() {
                    return Err(Error::Species(format!(
                        "{:?} qubit {physical} leaked under {:?}",
                        self.species[physical], self.arch
                    )));
                }
                if self.events.is_some() {
                    let role = self.role_of(physical);
                    self.log(LeakEvent::Leaked { site, role });
                }
            }
            NoiseEffect::Returned => {
                if self.events.is_some() {
                    let role = self.role_of(physical);
                    self.log(LeakEvent::Returned { site, role });
                }
            }
        }
        Ok(())
    }

    fn dephase<F: FaultSource + ?Sized>(&mut self, physical: usize, step: usize, source: &mut F) {
        let site = Site { round: self.round, step, qubit: physical, kind: SiteKind::Dephasing };
        let outcome = source.fault(site, &self.dephasing);
        let q = &mut self.qubits[physical];
        if !q.leaked {
            q.apply(outcome);
        }
    }

    fn cnot<F: FaultSource + ?Sized>(
        &mut self,
        control: usize,
        target: usize,
        step: usize,
        source: &mut F,
    ) -> Result<()> {
        let (c, t) = pair_mut(&mut self.qubits, control, target);
        if c.leaked || t.leaked {
            leak_interaction(c, t, self.model, source)?;
            let round = self.round;
            self.log(LeakEvent::CorruptGate { round, step, control, target });
        } else {
            propagate_cnot(c, t);
        }
        for p in [control, target] {
            self.noise(p, SiteKind::Gate, step, source)?;
            if self.species[p].memory_susceptible() {
                self.dephase(p, step, source);
            }
        }
        Ok(())
    }

    /// One round of syndrome extraction.
    pub fn extraction_round<F: FaultSource + ?Sized>(&mut self, source: &mut F) -> Result<SyndromeRound> {
        let n = self.layout.num_stabilizers();
        let round = self.round;

        for s in 0..2 * n {
            let p = self.anc_slot[s];
            if self.qubits[p].leaked {
                self.log(LeakEvent::Reinitialized { round, qubit: p });
            }
            self.qubits[p] = QubitState::default();
        }

        for s in 0..n {
            self.noise(self.anc_slot[s], SiteKind::Preparation, 0, source)?;
        }

        for step in 0..self.schedule.len() {
            for i in 0..self.schedule[step].len() {
                let g = self.schedule[step][i];
                let a = self.anc_slot[g.stabilizer];
                let q = self.data_slot[g.data];
                let (c, t) = if g.ancilla_controls { (a, q) } else { (q, a) };
                self.cnot(c, t, step + 1, source)?;
            }
            if self.idle_dephasing {
                self.idle_step(step, source);
            }
        }

        if self.arch.swap_lrc() {
            for s in 0..2 * n {
                let q = self.swap_partner[s];
                std::mem::swap(&mut self.anc_slot[s], &mut self.data_slot[q]);
            }
        }

        let mut x_outcomes = Vec::with_capacity(n);
        for s in 0..n {
            let p = self.anc_slot[s];
            self.noise(p, SiteKind::Measurement, 0, source)?;
            x_outcomes.push(self.read(p, |q| q.z_flip, source));
        }
        let mut z_outcomes = Vec::with_capacity(n);
        for s in n..2 * n {
            let p = self.anc_slot[s];
            z_outcomes.push(self.read(p, |q| q.x_flip, source));
        }

        self.round += 1;
        Ok(SyndromeRound { round_index: round, x_outcomes, z_outcomes })
    }

    fn read<F: FaultSource + ?Sized>(&self, p: usize, bit: impl Fn(&QubitState) -> bool, source: &mut F) -> bool {
        let q = &self.qubits[p];
        if q.leaked {
            match self.readout {
                LeakedReadout::Bright => true,
                LeakedReadout::Random => source.induced(&self.coin) == FaultOutcome::PauliX,
            }
        } else {
            bit(q)
        }
    }

    fn idle_step<F: FaultSource + ?Sized>(&mut self, step: usize, source: &mut F) {
        self.idle_mask.fill(false);
        for g in &self.schedule[step] {
            self.idle_mask[self.anc_slot[g.stabilizer]] = true;
            self.idle_mask[self.data_slot[g.data]] = true;
        }
        for p in 0..self.qubits.len() {
            if !self.idle_mask[p] && self.species[p].memory_susceptible() {
                self.dephase(p, step + 1, source);
            }
        }
    }
}

/// Conjugates spontaneous outcomes by a Hadamard.
struct HadamardFaults<'s, F: ?Sized>(&'s mut F);

impl<F: FaultSource + ?Sized> FaultSource for HadamardFaults<'_, F> {
    fn fault(&mut self, site: Site, channel: &Channel) -> FaultOutcome {
        self.0.fault(site, channel).hadamard()
    }

    fn induced(&mut self, channel: &Channel) -> FaultOutcome {
        self.0.induced(channel)
    }
}

fn pair_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

/// Runs one trial with its own layout and simulator.
pub fn run_trial<R: Rng>(config: &TrialConfig, rng: &mut R) -> Result<TrialRecord> {
    config.validate()?;
    let layout = ToricLayout::new(config.d)?;
    let mut sim = Simulator::from_config(&layout, config)?.with_event_log();
    sim.run(&mut RandomFaults(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::TrialConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Noiseless except for `outcome` at every site matching `pick`; induced
    /// draws replay `script` and then sample `rng`.
    struct Inject<P> {
        pick: P,
        outcome: FaultOutcome,
        script: Vec<FaultOutcome>,
        rng: ChaCha8Rng,
    }

    impl<P: FnMut(Site) -> bool> FaultSource for Inject<P> {
        fn fault(&mut self, site: Site, _channel: &Channel) -> FaultOutcome {
            if (self.pick)(site) {
                self.outcome
            } else {
                FaultOutcome::Identity
            }
        }

        fn induced(&mut self, channel: &Channel) -> FaultOutcome {
            if self.script.is_empty() {
                channel.sample(&mut self.rng)
            } else {
                self.script.remove(0)
            }
        }
    }

    fn inject<P: FnMut(Site) -> bool>(pick: P, outcome: FaultOutcome, script: Vec<FaultOutcome>) -> Inject<P> {
        Inject { pick, outcome, script, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    fn state(x: bool, z: bool) -> QubitState {
        QubitState { x_flip: x, z_flip: z, leaked: false }
    }

    // 4x4 real matrices: X^x Z^z on each qubit, control is the high bit
    type M = [[f64; 4]; 4];

    fn mul(a: &M, b: &M) -> M {
        let mut c = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        c
    }

    fn pauli(xc: bool, zc: bool, xt: bool, zt: bool) -> M {
        let one = |x: bool, z: bool| -> [[f64; 2]; 2] {
            let zm = if z { [[1.0, 0.0], [0.0, -1.0]] } else { [[1.0, 0.0], [0.0, 1.0]] };
            if x {
                [zm[1], zm[0]]
            } else {
                zm
            }
        };
        let (c, t) = (one(xc, zc), one(xt, zt));
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = c[i >> 1][j >> 1] * t[i & 1][j & 1];
            }
        }
        m
    }

    #[test]
    fn cnot_matches_matrix_conjugation() {
        let mut cnot = [[0.0; 4]; 4];
        for (i, j) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
            cnot[i][j] = 1.0;
        }
        for bits in 0u8..16 {
            let b = |k: u8| bits >> k & 1 == 1;
            let image = mul(&mul(&cnot, &pauli(b(0), b(1), b(2), b(3))), &cnot);
            let (mut c, mut t) = (state(b(0), b(1)), state(b(2), b(3)));
            propagate_cnot(&mut c, &mut t);
            let expect = pauli(c.x_flip, c.z_flip, t.x_flip, t.z_flip);
            let neg: M = expect.map(|r| r.map(|v| -v));
            assert!(image == expect || image == neg, "input {bits:04b}");
        }
        // control Y spreads X onto the target
        let (mut c, mut t) = (state(true, true), state(false, false));
        propagate_cnot(&mut c, &mut t);
        assert_eq!((c, t), (state(true, true), state(true, false)));
    }

    #[test]
    fn leak_interaction_outcomes() {
        let leaked = QubitState { leaked: true, ..QubitState::default() };
        let clean = QubitState::default();
        let cases = [
            (LeakageModel::MolmerSorensen, true, vec![(false, false), (true, false)]),
            (LeakageModel::MolmerSorensen, false, vec![(false, false), (false, true)]),
            (LeakageModel::Depolarizing, true, vec![(false, false), (true, false), (true, true), (false, true)]),
            (LeakageModel::Depolarizing, false, vec![(false, false), (true, false), (true, true), (false, true)]),
        ];
        for (model, control_leaked, expect) in cases {
            let mut seen = Vec::new();
            for o in FaultOutcome::ALL.into_iter().filter(|o| *o != FaultOutcome::Leak) {
                let mut src = inject(|_| false, FaultOutcome::Identity, vec![o]);
                let (mut c, mut t) = if control_leaked { (leaked, clean) } else { (clean, leaked) };
                leak_interaction(&mut c, &mut t, model, &mut src).unwrap();
                let (l, u) = if control_leaked { (c, t) } else { (t, c) };
                assert_eq!(l, leaked);
                // the channel's support decides which scripted outcomes are legal
                let channel = match (model, control_leaked) {
                    (LeakageModel::Depolarizing, _) => depolarize_channel(),
                    (LeakageModel::MolmerSorensen, true) => bit_twirl_channel(),
                    (LeakageModel::MolmerSorensen, false) => phase_twirl_channel(),
                };
                if channel.support().contains(&o) && !seen.contains(&(u.x_flip, u.z_flip)) {
                    seen.push((u.x_flip, u.z_flip));
                }
            }
            seen.sort();
            let mut expect = expect;
            expect.sort();
            assert_eq!(seen, expect, "{model:?} control leaked {control_leaked}");
        }
        let mut src = inject(|_| false, FaultOutcome::Identity, vec![]);
        let (mut a, mut b) = (leaked, leaked);
        leak_interaction(&mut a, &mut b, LeakageModel::Depolarizing, &mut src).unwrap();
        assert_eq!((a, b), (leaked, leaked));
        let (mut a, mut b) = (clean, clean);
        assert!(leak_interaction(&mut a, &mut b, LeakageModel::MolmerSorensen, &mut src).is_err());
    }

    #[test]
    fn ms_twirl_frequencies() {
        let mut rng = RandomFaults(ChaCha8Rng::seed_from_u64(11));
        let n = 200_000;
        let mut flips = 0;
        for _ in 0..n {
            let (mut c, mut t) = (QubitState { leaked: true, ..QubitState::default() }, QubitState::default());
            leak_interaction(&mut c, &mut t, LeakageModel::MolmerSorensen, &mut rng).unwrap();
            flips += t.x_flip as usize;
            assert!(!t.z_flip);
        }
        let sd = (n as f64 * 0.25).sqrt();
        assert!((flips as f64 - n as f64 / 2.0).abs() < 5.0 * sd);
    }

    #[test]
    fn gate_noise_return_statistics() {
        let site = Site { round: 0, step: 1, qubit: 0, kind: SiteKind::Gate };
        let zeeman = zeeman_scatter_channel(0.9).unwrap();
        let mut src = RandomFaults(ChaCha8Rng::seed_from_u64(3));
        for _ in 0..10_000 {
            let mut q = QubitState { leaked: true, ..QubitState::default() };
            assert_eq!(apply_gate_noise(&mut q, &zeeman, site, &mut src), NoiseEffect::None);
            assert!(q.leaked);
        }
        let hyper = hyperfine_scatter_channel(0.4).unwrap();
        let n = 400_000;
        let mut returned = 0usize;
        let mut frames = [0usize; 4];
        for _ in 0..n {
            let mut q = QubitState { leaked: true, ..QubitState::default() };
            if apply_gate_noise(&mut q, &hyper, site, &mut src) == NoiseEffect::Returned {
                assert!(!q.leaked);
                returned += 1;
                frames[q.x_flip as usize * 2 + q.z_flip as usize] += 1;
            }
        }
        let within = |count: usize, trials: usize, p: f64| {
            let sd = (trials as f64 * p * (1.0 - p)).sqrt();
            (count as f64 - trials as f64 * p).abs() < 5.0 * sd
        };
        assert!(within(returned, n, 0.1), "{returned}");
        for f in frames {
            assert!(within(f, returned, 0.25), "{frames:?}");
        }
        let mut q = QubitState::default();
        let mut leak = inject(|_| true, FaultOutcome::Leak, vec![]);
        assert_eq!(apply_gate_noise(&mut q, &hyper, site, &mut leak), NoiseEffect::Leaked);
        assert_eq!(q, QubitState { leaked: true, ..QubitState::default() });
    }

    fn noiseless(layout: &ToricLayout, arch: Architecture, model: LeakageModel) -> Simulator<'_> {
        Simulator::new(layout, arch, model, &NoiseParams::noiseless(), layout.d()).unwrap().with_event_log()
    }

    #[test]
    fn zero_noise_is_silent() {
        let l = ToricLayout::new(5).unwrap();
        for arch in Architecture::ALL {
            for model in LeakageModel::ALL {
                let mut sim = noiseless(&l, arch, model);
                let rec = sim.run(&mut RandomFaults(ChaCha8Rng::seed_from_u64(1))).unwrap();
                assert_eq!(rec.history.len(), 6);
                assert!(rec.history.iter().all(|r| r.x_outcomes.iter().chain(&r.z_outcomes).all(|&b| !b)));
                assert_eq!(rec.final_frame, DataFrame::clean(50));
                assert!(rec.events.is_empty());
            }
        }
    }

    #[test]
    fn data_x_error_flips_two_z_checks() {
        let l = ToricLayout::new(3).unwrap();
        for arch in Architecture::ALL {
            for q in 0..l.num_data() {
                let mut sim = noiseless(&l, arch, LeakageModel::Depolarizing);
                sim.reset();
                let p = sim.data_qubit(q);
                sim.qubit_mut(p).x_flip = true;
                let round = sim.extraction_round(&mut inject(|_| false, FaultOutcome::Identity, vec![])).unwrap();
                assert_eq!(round.z_outcomes.iter().filter(|&&b| b).count(), 2);
                assert!(round.x_outcomes.iter().all(|&b| !b));
                let lit: Vec<usize> = (0..9).filter(|&s| round.z_outcomes[s]).collect();
                assert!(lit.iter().all(|&s| l.support(StabilizerKind::Z, s).contains(&q)));
            }
        }
    }

    #[test]
    fn swap_lrc_preserves_frame() {
        let l = ToricLayout::new(3).unwrap();
        let mut sim = noiseless(&l, Architecture::HyperfineWithSwapLrc, LeakageModel::MolmerSorensen);
        sim.reset();
        let p = sim.data_qubit(4);
        sim.qubit_mut(p).z_flip = true;
        let mut quiet = inject(|_| false, FaultOutcome::Identity, vec![]);
        let first = sim.extraction_round(&mut quiet).unwrap();
        assert_ne!(sim.data_qubit(4), p);
        assert!(sim.qubit(sim.data_qubit(4)).z_flip);
        let second = sim.extraction_round(&mut quiet).unwrap();
        assert_eq!(first, SyndromeRound { round_index: 0, ..second.clone() });
        assert_eq!(first.x_outcomes.iter().filter(|&&b| b).count(), 2);
    }

    fn first_gate_of(sim: &Simulator, kind: StabilizerKind, s: usize) -> impl FnMut(Site) -> bool {
        let a = sim.ancilla_qubit(kind, s);
        move |site: Site| site.round == 0 && site.step == 1 && site.kind == SiteKind::Gate && site.qubit == a
    }

    #[test]
    fn mixed_ancilla_leak_corrupts_three_gates() {
        let l = ToricLayout::new(3).unwrap();
        for model in LeakageModel::ALL {
            for kind in StabilizerKind::BOTH {
                let mut sim = noiseless(&l, Architecture::MixedSpecies, model);
                let pick = first_gate_of(&sim, kind, 4);
                let rec = sim.run(&mut inject(pick, FaultOutcome::Leak, vec![])).unwrap();
                let corrupt = rec.events.iter().filter(|e| matches!(e, LeakEvent::CorruptGate { .. })).count();
                assert_eq!(corrupt, 3, "{model:?} {kind:?}");
                assert!(rec.events.iter().any(|e| matches!(e, LeakEvent::Reinitialized { round: 1, .. })));
            }
        }
    }

    #[test]
    fn leaked_x_ancilla_twirls_all_four_neighbours() {
        let l = ToricLayout::new(3).unwrap();
        let s = 4;
        let support = *l.support(StabilizerKind::X, s);
        let mut patterns = std::collections::BTreeMap::new();
        // every assignment of the four twirls, listed by hand
        for mask in 0u8..16 {
            let mut sim = noiseless(&l, Architecture::MixedSpecies, LeakageModel::MolmerSorensen);
            sim.reset();
            let a = sim.ancilla_qubit(StabilizerKind::X, s);
            let script = (0..4).map(|k| if mask >> k & 1 == 1 { FaultOutcome::PauliX } else { FaultOutcome::Identity }).collect();
            let mut src = inject(move |site: Site| site.kind == SiteKind::Preparation && site.qubit == a, FaultOutcome::Leak, script);
            let round = sim.extraction_round(&mut src).unwrap();
            let mut x = vec![false; l.num_data()];
            for (k, &q) in support.iter().enumerate() {
                x[q] = mask >> k & 1 == 1;
            }
            assert!(round.x_outcomes[s]);
            assert_eq!(round.x_outcomes.iter().filter(|&&b| b).count(), 1);
            for q in 0..l.num_data() {
                let st = sim.qubit(sim.data_qubit(q));
                assert_eq!((st.x_flip, st.z_flip), (x[q], false), "mask {mask:04b} qubit {q}");
            }
            // twirls after a neighbouring Z check has already run show up one round later
            let next = sim.extraction_round(&mut inject(|_| false, FaultOutcome::Identity, vec![])).unwrap();
            assert_eq!(next.z_outcomes, l.syndrome(StabilizerKind::Z, &x, &[false; 18]), "mask {mask:04b}");
            *patterns.entry(round.z_outcomes).or_insert(0usize) += 1;
        }
        // sampled twirls reproduce the enumerated syndrome distribution
        let n = 64_000;
        let mut sampled = std::collections::BTreeMap::new();
        let mut sim = noiseless(&l, Architecture::MixedSpecies, LeakageModel::MolmerSorensen);
        for seed in 0..n {
            sim.reset();
            let a = sim.ancilla_qubit(StabilizerKind::X, s);
            let mut src = Inject {
                pick: move |site: Site| site.kind == SiteKind::Preparation && site.qubit == a,
                outcome: FaultOutcome::Leak,
                script: vec![],
                rng: ChaCha8Rng::seed_from_u64(seed),
            };
            let round = sim.extraction_round(&mut src).unwrap();
            *sampled.entry(round.z_outcomes).or_insert(0usize) += 1;
        }
        assert_eq!(sampled.keys().collect::<Vec<_>>(), patterns.keys().collect::<Vec<_>>());
        for (k, &count) in &sampled {
            let p = patterns[k] as f64 / 16.0;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((count as f64 - n as f64 * p).abs() < 5.0 * sd);
        }
    }

    fn noisy(arch: Architecture, model: LeakageModel, p_s: f64, seed: u64) -> TrialConfig {
        TrialConfig::new(arch, model, 3, NoiseParams::scattering(p_s).with_pm(0.01)).with_seed(seed)
    }

    #[test]
    fn species_contract_and_leak_lifetimes() {
        for model in LeakageModel::ALL {
            for seed in 0..400 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let rec = run_trial(&noisy(Architecture::PureZeeman, model, 0.05, seed), &mut rng).unwrap();
                assert!(rec.events.is_empty());

                let rec = run_trial(&noisy(Architecture::MixedSpecies, model, 0.05, seed), &mut rng).unwrap();
                for (i, e) in rec.events.iter().enumerate() {
                    if let LeakEvent::Leaked { site, role } = *e {
                        assert_eq!(role, Role::Ancilla);
                        if site.round + 1 < 3 {
                            let later = &rec.events[i..];
                            assert!(later.iter().any(|e| matches!(*e,
                                LeakEvent::Reinitialized { round, qubit } if round == site.round + 1 && qubit == site.qubit)
                                || matches!(*e, LeakEvent::Returned { site: s, .. } if s.qubit == site.qubit)));
                        }
                    }
                }

                let rec = run_trial(&noisy(Architecture::HyperfineWithSwapLrc, model, 0.05, seed), &mut rng).unwrap();
                for (i, e) in rec.events.iter().enumerate() {
                    if let LeakEvent::Leaked { site, role: Role::Data } = *e {
                        if site.round + 1 < 3 {
                            assert!(rec.events[i..].iter().any(|e| matches!(*e,
                                LeakEvent::Reinitialized { round, qubit } if round <= site.round + 1 && qubit == site.qubit)
                                || matches!(*e, LeakEvent::Returned { site: s, .. } if s.qubit == site.qubit && s.round <= site.round + 1)));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn leaking_zeeman_qubit_is_rejected() {
        let l = ToricLayout::new(3).unwrap();
        let mut sim = noiseless(&l, Architecture::PureZeeman, LeakageModel::Depolarizing);
        let err = sim.run(&mut inject(|s| s.kind == SiteKind::Gate, FaultOutcome::Leak, vec![])).unwrap_err();
        assert!(matches!(err, Error::Species(_)));
    }

    #[test]
    fn trials_are_reproducible() {
        for arch in Architecture::ALL {
            let c = noisy(arch, LeakageModel::Depolarizing, 0.02, 17);
            let a = run_trial(&c, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            let b = run_trial(&c, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn random_readout_of_leaked_ancilla() {
        let l = ToricLayout::new(3).unwrap();
        let mut ones = 0;
        for seed in 0..2000u64 {
            let mut sim = noiseless(&l, Architecture::MixedSpecies, LeakageModel::MolmerSorensen).with_readout(LeakedReadout::Random);
            sim.reset();
            let a = sim.ancilla_qubit(StabilizerKind::Z, 0);
            let mut src = Inject {
                pick: move |site: Site| site.qubit == a && site.step == 4 && site.kind == SiteKind::Gate,
                outcome: FaultOutcome::Leak,
                script: vec![],
                rng: ChaCha8Rng::seed_from_u64(seed),
            };
            ones += sim.extraction_round(&mut src).unwrap().z_outcomes[0] as usize;
        }
        assert!((800..1200).contains(&ones), "{ones}");
    }
}
