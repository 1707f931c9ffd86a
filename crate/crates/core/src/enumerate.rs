//! Exhaustive single-fault injection.
//!
//! Every spontaneous location is addressed by its position in the fixed call
//! sequence of [`FaultSource::fault`]. A single fault fixes one location to
//! one non-identity outcome and every other location to the identity. The
//! randomness it induces afterwards (twirls, depolarization, random readout)
//! is walked as a tree: every root-to-leaf path is one deterministic trial.
//! A fault is uncorrectable if any path ends in a logical failure.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channels::{Channel, FaultOutcome, NoiseParams};
use crate::decoder::decode;
use crate::error::Result;
use crate::lattice::ToricLayout;
use crate::simulator::{Architecture, FaultSource, LeakageModel, LeakedReadout, Site, Simulator, TrialRecord};

#[derive(Clone, Debug)]
pub struct EnumerationOptions {
    pub d: usize,
    /// Noisy rounds; `None` means `d`.
    pub rounds: Option<usize>,
    pub readout: LeakedReadout,
    pub idle_dephasing: bool,
    /// Random walks through the induced tree tried before the exhaustive walk.
    pub probes: usize,
    /// Leaves of the exhaustive walk after which a fault is left unresolved.
    pub branch_budget: usize,
}

impl EnumerationOptions {
    pub fn new(d: usize) -> Self {
        EnumerationOptions {
            d,
            rounds: None,
            readout: LeakedReadout::default(),
            idle_dephasing: false,
            probes: 64,
            branch_budget: 1 << 14,
        }
    }
}

/// One injected fault.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Injection {
    pub index: usize,
    pub site: Site,
    pub outcome: FaultOutcome,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnumerationReport {
    pub arch: Architecture,
    pub model: LeakageModel,
    pub d: usize,
    pub rounds: usize,
    pub locations: usize,
    pub faults: usize,
    pub uncorrectable: Vec<Injection>,
    /// Faults whose tree exceeded the budget without a failing leaf.
    pub unresolved: Vec<Injection>,
    pub leaves: u64,
}

/// Outcome of walking one fault's tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Correctable { leaves: u64 },
    Uncorrectable { leaves: u64 },
    Unresolved { leaves: u64 },
}

/// Channel support used for enumeration: every outcome the architecture can
/// produce, independent of the actual rates.
fn enumeration_noise(idle_dephasing: bool) -> NoiseParams {
    NoiseParams { p_s_2q: 0.01, p_s_1q: 0.01, p_m: 0.01, sigma_ug: None, idle_dephasing }
}

struct Recorder(Vec<(Site, Vec<FaultOutcome>)>);

impl FaultSource for Recorder {
    fn fault(&mut self, site: Site, channel: &Channel) -> FaultOutcome {
        let outcomes = channel.support().iter().copied().filter(|&o| o != FaultOutcome::Identity).collect();
        self.0.push((site, outcomes));
        FaultOutcome::Identity
    }

    fn induced(&mut self, _channel: &Channel) -> FaultOutcome {
        unreachable!("a fault-free run induces nothing")
    }
}

enum Branching {
    Random(ChaCha8Rng),
    /// Depth-first odometer: `choices[i]` out of `radix[i]` at the i-th
    /// induced draw.
    Walk { choices: Vec<usize>, radix: Vec<usize>, pos: usize },
}

/// Injects `outcome` at location `target` and resolves induced draws from
/// `branching`.
struct Scripted {
    target: usize,
    outcome: FaultOutcome,
    counter: usize,
    branching: Branching,
}

impl FaultSource for Scripted {
    fn fault(&mut self, _site: Site, _channel: &Channel) -> FaultOutcome {
        let i = self.counter;
        self.counter += 1;
        if i == self.target {
            self.outcome
        } else {
            FaultOutcome::Identity
        }
    }

    fn induced(&mut self, channel: &Channel) -> FaultOutcome {
        let support = channel.support();
        match &mut self.branching {
            Branching::Random(rng) => support[rng.gen_range(0..support.len())],
            Branching::Walk { choices, radix, pos } => {
                if *pos == choices.len() {
                    choices.push(0);
                    radix.push(support.len());
                }
                let c = choices[*pos];
                *pos += 1;
                support[c]
            }
        }
    }
}

impl Scripted {
    /// Moves the odometer to the next leaf; false once the tree is exhausted.
    fn advance(&mut self) -> bool {
        self.counter = 0;
        let Branching::Walk { choices, radix, pos } = &mut self.branching else {
            return true;
        };
        *pos = 0;
        while let (Some(last), Some(&r)) = (choices.last_mut(), radix.last()) {
            if *last + 1 < r {
                *last += 1;
                return true;
            }
            choices.pop();
            radix.pop();
        }
        false
    }
}

pub struct Enumerator<'a> {
    layout: &'a ToricLayout,
    arch: Architecture,
    model: LeakageModel,
    options: EnumerationOptions,
    rounds: usize,
    sites: Vec<(Site, Vec<FaultOutcome>)>,
}

impl<'a> Enumerator<'a> {
    pub fn new(layout: &'a ToricLayout, arch: Architecture, model: LeakageModel, options: EnumerationOptions) -> Result<Self> {
        let rounds = options.rounds.unwrap_or(layout.d());
        let mut e = Enumerator { layout, arch, model, options, rounds, sites: Vec::new() };
        let mut recorder = Recorder(Vec::new());
        e.simulator()?.run(&mut recorder)?;
        e.sites = recorder.0;
        Ok(e)
    }

    fn simulator(&self) -> Result<Simulator<'a>> {
        Ok(Simulator::new(self.layout, self.arch, self.model, &enumeration_noise(self.options.idle_dephasing), self.rounds)?
            .with_readout(self.options.readout))
    }

    /// Every spontaneous location with its non-identity outcomes.
    pub fn sites(&self) -> &[(Site, Vec<FaultOutcome>)] {
        &self.sites
    }

    pub fn injections(&self) -> Vec<Injection> {
        self.sites
            .iter()
            .enumerate()
            .flat_map(|(index, (site, outs))| outs.iter().map(move |&outcome| Injection { index, site: *site, outcome }))
            .collect()
    }

    /// Calls `visit` on the record of every leaf of `fault`'s tree until it
    /// returns false. Returns the number of leaves visited and whether the
    /// walk finished.
    pub fn for_each_leaf(
        &self,
        fault: Injection,
        budget: usize,
        mut visit: impl FnMut(&TrialRecord) -> Result<bool>,
    ) -> Result<(u64, bool)> {
        let mut sim = self.simulator()?;
        let mut source = Scripted {
            target: fault.index,
            outcome: fault.outcome,
            counter: 0,
            branching: Branching::Walk { choices: Vec::new(), radix: Vec::new(), pos: 0 },
        };
        let mut leaves = 0u64;
        loop {
            let record = sim.run(&mut source)?;
            leaves += 1;
            if !visit(&record)? {
                return Ok((leaves, false));
            }
            if !source.advance() {
                return Ok((leaves, true));
            }
            if leaves as usize >= budget {
                return Ok((leaves, false));
            }
        }
    }

    pub fn judge(&self, fault: Injection) -> Result<Verdict> {
        let mut sim = self.simulator()?;
        let mut leaves = 0u64;
        for probe in 0..self.options.probes {
            let rng = ChaCha8Rng::seed_from_u64((fault.index as u64) << 8 ^ probe as u64);
            let mut source = Scripted { target: fault.index, outcome: fault.outcome, counter: 0, branching: Branching::Random(rng) };
            let record = sim.run(&mut source)?;
            leaves += 1;
            let (x, z) = decode(&record, self.layout)?;
            if x || z {
                return Ok(Verdict::Uncorrectable { leaves });
            }
        }
        let mut failed = false;
        let (walked, complete) = self.for_each_leaf(fault, self.options.branch_budget, |record| {
            let (x, z) = decode(record, self.layout)?;
            failed = x || z;
            Ok(!failed)
        })?;
        leaves += walked;
        Ok(if failed {
            Verdict::Uncorrectable { leaves }
        } else if complete {
            Verdict::Correctable { leaves }
        } else {
            Verdict::Unresolved { leaves }
        })
    }

    pub fn run(&self) -> Result<EnumerationReport> {
        let injections = self.injections();
        let verdicts = injections.par_iter().map(|&f| self.judge(f).map(|v| (f, v))).collect::<Result<Vec<_>>>()?;
        let mut report = EnumerationReport {
            arch: self.arch,
            model: self.model,
            d: self.layout.d(),
            rounds: self.rounds,
            locations: self.sites.len(),
            faults: injections.len(),
            uncorrectable: Vec::new(),
            unresolved: Vec::new(),
            leaves: 0,
        };
        for (f, v) in verdicts {
            match v {
                Verdict::Correctable { leaves } => report.leaves += leaves,
                Verdict::Uncorrectable { leaves } => {
                    report.leaves += leaves;
                    report.uncorrectable.push(f);
                }
                Verdict::Unresolved { leaves } => {
                    report.leaves += leaves;
                    report.unresolved.push(f);
                }
            }
        }
        Ok(report)
    }
}

/// Exhaustive single-fault report for one architecture and model.
pub fn enumerate_single_faults(arch: Architecture, model: LeakageModel, options: EnumerationOptions) -> Result<EnumerationReport> {
    let layout = ToricLayout::new(options.d)?;
    Enumerator::new(&layout, arch, model, options)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::StabilizerKind;
    use crate::simulator::SiteKind;

    /// Minimum weight of `bits` times any product of `kind` stabilizers.
    fn coset_weight(layout: &ToricLayout, kind: StabilizerKind, bits: &[bool]) -> usize {
        let n = layout.num_stabilizers();
        (0u32..1 << n)
            .map(|mask| {
                let mut b = bits.to_vec();
                for s in (0..n).filter(|s| mask >> s & 1 == 1) {
                    for &q in layout.support(kind, s) {
                        b[q] ^= true;
                    }
                }
                b.iter().filter(|&&x| x).count()
            })
            .min()
            .unwrap()
    }

    #[test]
    fn location_sequence_is_fixed() {
        let l = ToricLayout::new(3).unwrap();
        let e = Enumerator::new(&l, Architecture::MixedSpecies, LeakageModel::MolmerSorensen, EnumerationOptions::new(3)).unwrap();
        // per round: 9 preparations, 144 gate sites, 72 data dephasing sites, 9 measurements
        assert_eq!(e.sites().len(), 3 * (9 + 144 + 72 + 9));
        assert!(e.sites().iter().all(|(_, o)| !o.is_empty()));
        let hyper = Enumerator::new(&l, Architecture::HyperfineWithSwapLrc, LeakageModel::Depolarizing, EnumerationOptions::new(3)).unwrap();
        assert_eq!(hyper.sites().len(), 3 * (9 + 180 + 9));
        assert!(hyper.sites().iter().all(|(s, _)| s.kind != SiteKind::Dephasing));
    }

    #[test]
    fn walk_visits_every_twirl_branch() {
        let l = ToricLayout::new(3).unwrap();
        let e = Enumerator::new(&l, Architecture::MixedSpecies, LeakageModel::MolmerSorensen, EnumerationOptions::new(3)).unwrap();
        let n = l.num_data();
        // X-check ancilla leaking at the first gate of round 0: three twirled gates remain
        let fault = e
            .injections()
            .into_iter()
            .find(|f| f.site.kind == SiteKind::Gate && f.site.step == 1 && f.site.qubit == n && f.outcome == FaultOutcome::Leak)
            .unwrap();
        let mut seen = std::collections::BTreeSet::new();
        let (leaves, complete) = e
            .for_each_leaf(fault, usize::MAX, |r| {
                seen.insert(r.final_frame.x.clone());
                Ok(true)
            })
            .unwrap();
        assert!(complete);
        assert_eq!(leaves, 8);
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn ms_mixed_single_faults_stay_low_weight() {
        let l = ToricLayout::new(3).unwrap();
        let e = Enumerator::new(&l, Architecture::MixedSpecies, LeakageModel::MolmerSorensen, EnumerationOptions::new(3)).unwrap();
        for f in e.injections() {
            let (_, complete) = e
                .for_each_leaf(f, usize::MAX, |r| {
                    let wx = coset_weight(&l, StabilizerKind::X, &r.final_frame.x);
                    let wz = coset_weight(&l, StabilizerKind::Z, &r.final_frame.z);
                    assert!(wx <= 2 && wz <= 2, "{f:?} gives weights {wx}/{wz}");
                    if f.outcome == FaultOutcome::Leak {
                        // a leaked ancilla only spreads errors of the type it measures
                        assert!(wx == 0 || wz == 0, "{f:?}");
                    }
                    Ok(true)
                })
                .unwrap();
            assert!(complete);
        }
    }

    #[test]
    fn depolarizing_leak_has_adjacent_hook() {
        let l = ToricLayout::new(3).unwrap();
        let e = Enumerator::new(&l, Architecture::MixedSpecies, LeakageModel::Depolarizing, EnumerationOptions::new(3)).unwrap();
        let mut found = false;
        for f in e.injections().into_iter().filter(|f| f.outcome == FaultOutcome::Leak) {
            e.for_each_leaf(f, usize::MAX, |r| {
                for (bits, kind) in [(&r.final_frame.x, StabilizerKind::X), (&r.final_frame.z, StabilizerKind::Z)] {
                    let lit: Vec<usize> = (0..bits.len()).filter(|&q| bits[q]).collect();
                    let other = if kind == StabilizerKind::X { &r.final_frame.z } else { &r.final_frame.x };
                    if lit.len() == 2
                        && other.iter().all(|&b| !b)
                        && l.supports(kind).iter().any(|s| s.contains(&lit[0]) && s.contains(&lit[1]))
                        && coset_weight(&l, kind, bits) == 2
                    {
                        found = true;
                    }
                }
                Ok(!found)
            })
            .unwrap();
            if found {
                break;
            }
        }
        assert!(found);
    }
}
