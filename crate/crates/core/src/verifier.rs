//! The fairness tester.
//!
//! Each probe sends a random request through a [`Broker`], tallies where the
//! VMs landed and files the split in the fair or unsure table. Periodically
//! the tables are consolidated: if the cumulative split over the epoch is
//! approximately efficiently fair, unsure entries are promoted to fair. The
//! counts feed the probability estimate behind the final verdict.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calculus::{
    classify_trace, decide, estimate_triple, estimate_triple_weighted, quotient, CalculusError,
    DecisionThresholds, FairnessState, FairnessTrace, ProbabilityTriple, TauMode, TraceClass,
};
use crate::cloudsim::{Broker, SimError};
use crate::domain::{
    efficient_fair_reference, is_equitable, Apportionment, BottleneckProfile, Color, DomainError,
    ProvisioningRequest, Totals,
};

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("invalid verifier config: {0}")]
    Config(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Calculus(#[from] CalculusError),
    #[error("epoch {epoch} aborted: all {attempts} probes were unsatisfiable")]
    EpochAborted { epoch: u64, attempts: u64 },
    #[error("malformed audit record: {0}")]
    Audit(String),
}

/// Tester settings. Durations are simulated seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub max_x: u32,
    pub samples_per_epoch: u32,
    pub epoch_length: f64,
    pub thresholds: DecisionThresholds,
    pub equity_tolerance: u64,
    /// Probes between consolidations; defaults to a fifth of the epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consolidation_period: Option<u32>,
    pub window: usize,
    pub color_space: usize,
    /// Cost target carried on every probe request.
    pub cost_target: f64,
    #[serde(default)]
    pub tau_mode: TauMode,
    /// Largest number of size rows excluded together during isolation.
    #[serde(default = "default_isolation_cap")]
    pub isolation_cap: usize,
}

fn default_isolation_cap() -> usize {
    2
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            max_x: 50,
            samples_per_epoch: 50,
            epoch_length: 3600.0,
            thresholds: DecisionThresholds::default(),
            equity_tolerance: 1,
            consolidation_period: None,
            window: 4,
            color_space: 1,
            cost_target: 2.0,
            tau_mode: TauMode::TwoEpoch,
            isolation_cap: 2,
        }
    }
}

impl VerifierConfig {
    pub fn period(&self) -> u32 {
        self.consolidation_period.unwrap_or((self.samples_per_epoch / 5).max(1))
    }

    pub fn validate(&self) -> Result<(), VerifierError> {
        let bad = |m: &str| Err(VerifierError::Config(m.to_string()));
        if self.samples_per_epoch == 0 {
            return bad("samples_per_epoch must be at least 1");
        }
        if self.max_x == 0 {
            return bad("max_x must be at least 1");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.color_space == 0 || self.color_space > usize::from(u16::MAX) {
            return bad("color_space must be in [1, 65535]");
        }
        if !(self.epoch_length.is_finite() && self.epoch_length > 0.0) {
            return bad("epoch_length must be positive");
        }
        if !(self.cost_target.is_finite() && self.cost_target >= 0.0) {
            return bad("cost_target must be non-negative");
        }
        match self.consolidation_period {
            Some(0) => return bad("consolidation_period must be at least 1"),
            Some(p) if p > self.samples_per_epoch => {
                return bad("consolidation_period exceeds samples_per_epoch")
            }
            _ => {}
        }
        self.thresholds.validate()?;
        Ok(())
    }
}

/// One observed split together with the efficient-fair split the tester
/// computed for it at probe time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub observed: Apportionment,
    pub reference: Apportionment,
}

pub type TableKey = (u32, Color);

/// Fair and unsure sample stores, keyed by request size and color. Each
/// entry holds one per-supplier split.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FairnessTables {
    pub fair_table: BTreeMap<TableKey, Vec<TableEntry>>,
    pub unsure_table: BTreeMap<TableKey, Vec<TableEntry>>,
}

fn count(t: &BTreeMap<TableKey, Vec<TableEntry>>) -> u64 {
    t.values().map(|v| v.len() as u64).sum()
}

impl FairnessTables {
    pub fn fair_len(&self) -> u64 {
        count(&self.fair_table)
    }

    pub fn unsure_len(&self) -> u64 {
        count(&self.unsure_table)
    }

    pub fn is_empty(&self) -> bool {
        self.fair_table.is_empty() && self.unsure_table.is_empty()
    }

    pub fn insert(&mut self, key: TableKey, entry: TableEntry, fair: bool) {
        let table = if fair { &mut self.fair_table } else { &mut self.unsure_table };
        table.entry(key).or_default().push(entry);
    }

    pub fn entries(&self) -> impl Iterator<Item = (&TableKey, &TableEntry)> {
        self.fair_table
            .iter()
            .chain(&self.unsure_table)
            .flat_map(|(k, v)| v.iter().map(move |e| (k, e)))
    }

    /// Move every unsure entry into the fair table; returns how many moved.
    fn promote_unsure(&mut self) -> u64 {
        let moved = self.unsure_len();
        for (k, mut v) in std::mem::take(&mut self.unsure_table) {
            self.fair_table.entry(k).or_default().append(&mut v);
        }
        moved
    }

    fn suppliers(&self) -> usize {
        self.entries().map(|(_, e)| e.observed.len()).max().unwrap_or(0)
    }

    /// Cumulative observed and reference totals plus sample count, skipping
    /// rows whose size is in `excluded`.
    fn cumulative(&self, excluded: &[u32]) -> (Totals, Totals, u64) {
        let n = self.suppliers();
        let (mut obs, mut reference, mut samples) = (Totals::zeros(n), Totals::zeros(n), 0);
        for ((size, _), e) in self.entries() {
            if excluded.contains(size) {
                continue;
            }
            obs.add(&e.observed);
            reference.add(&e.reference);
            samples += 1;
        }
        (obs, reference, samples)
    }
}

/// Per-epoch counts. `moved_units` counts entries promoted from the unsure
/// table this epoch and is always covered by `fair_units`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochLedger {
    pub epoch_index: u64,
    pub fair_units: u64,
    pub unsure_units: u64,
    pub moved_units: u64,
    pub epoch_length: f64,
    pub samples_per_epoch: u32,
    /// Probes the broker could not place; not counted as samples.
    pub skipped: u64,
    /// VMs provisioned by accepted probes.
    pub vms_provisioned: u64,
}

impl EpochLedger {
    pub fn new(epoch_index: u64, config: &VerifierConfig) -> Self {
        Self {
            epoch_index,
            epoch_length: config.epoch_length,
            samples_per_epoch: config.samples_per_epoch,
            ..Self::default()
        }
    }

    pub fn total_units(&self) -> u64 {
        self.fair_units + self.unsure_units
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub state: FairnessState,
    pub apportionment: Apportionment,
    pub reference: Apportionment,
}

/// Single-request check: fair when the observed split is within `tolerance`
/// of the efficient-fair split under the bottlenecks seen just before the
/// request was placed. An inequitable split is only unsure at this level.
pub fn simple_fairness_test(
    broker: &mut dyn Broker,
    request: &ProvisioningRequest,
    tolerance: u64,
) -> Result<ProbeOutcome, VerifierError> {
    let profile = BottleneckProfile::observe(broker.market(), request.color, request.cost_target)?;
    let reference = efficient_fair_reference(request.size, &profile)?;
    let provisioned = broker.provision(request)?;
    let apportionment = Apportionment::from_tags(&provisioned.provider_tags, profile.len());
    let state = if is_equitable(&apportionment, &reference, tolerance)? {
        FairnessState::CurrFair
    } else {
        FairnessState::CurrUnsure
    };
    Ok(ProbeOutcome { state, apportionment, reference })
}

/// Cumulative equity check over both tables. Tolerance scales with the
/// number of samples in scope.
pub fn consolidate(tables: &mut FairnessTables, ledger: &mut EpochLedger, tolerance: u64) -> FairnessState {
    if tables.is_empty() {
        return FairnessState::CurrUnsure;
    }
    let (obs, reference, samples) = tables.cumulative(&[]);
    if obs.max_deviation(&reference) <= tolerance * samples {
        let moved = tables.promote_unsure();
        ledger.moved_units += moved;
        ledger.fair_units += moved;
        ledger.unsure_units -= moved;
        FairnessState::CurrFair
    } else if 2 * tables.unsure_len() < samples {
        FairnessState::CurrUnsure
    } else {
        FairnessState::CurrUnfair
    }
}

/// Probability triple, decision and quotients for one broker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessVerdict {
    pub decision: bool,
    pub fq: f64,
    pub uq: f64,
    pub triple: ProbabilityTriple,
    pub trace_class: TraceClass,
}

impl FairnessVerdict {
    fn unsure() -> Self {
        Self {
            decision: false,
            fq: 0.5,
            uq: 0.5,
            triple: ProbabilityTriple::new(0.0, 0.0, 1.0),
            trace_class: TraceClass::Indeterminate,
        }
    }
}

/// Combine the probability estimate with the trace: a broker whose trace
/// reads as unfair is never declared fair.
pub fn verdict(
    current: &EpochLedger,
    history: &[EpochLedger],
    trace: &FairnessTrace,
    config: &VerifierConfig,
) -> Result<FairnessVerdict, VerifierError> {
    let estimate = match config.tau_mode {
        TauMode::TwoEpoch => estimate_triple(current, history.last()),
        TauMode::Weighted => estimate_triple_weighted(current, history),
    };
    let triple = match estimate {
        Ok(t) => t,
        Err(CalculusError::NoSamples) => return Ok(FairnessVerdict::unsure()),
        Err(e) => return Err(e.into()),
    };
    let trace_class = if trace.is_empty() {
        TraceClass::Indeterminate
    } else {
        classify_trace(trace, config.window)?
    };
    let decision = decide(&triple, &config.thresholds) && trace_class != TraceClass::Unfair;
    let (fq, uq) = quotient(&triple);
    Ok(FairnessVerdict { decision, fq, uq, triple, trace_class })
}

/// Search for request sizes whose removal makes the cumulative split
/// equitable: single rows first, then combinations up to `cap` rows.
/// Among equally small exclusion sets the one leaving the smallest deviation
/// wins. Returns an empty set when no such exclusion exists.
pub fn isolate_unfair_sizes(tables: &FairnessTables, tolerance: u64, cap: usize) -> BTreeSet<u32> {
    let equitable = |excluded: &[u32]| -> Option<u64> {
        let (obs, reference, samples) = tables.cumulative(excluded);
        let dev = obs.max_deviation(&reference);
        (samples > 0 && dev <= tolerance * samples).then_some(dev)
    };
    if tables.is_empty() || equitable(&[]).is_some() {
        return BTreeSet::new();
    }
    let sizes: Vec<u32> = tables.entries().map(|((s, _), _)| *s).collect::<BTreeSet<_>>().into_iter().collect();
    let mut combo = Vec::new();
    for k in 1..=cap.min(sizes.len()) {
        let mut best: Option<(u64, Vec<u32>)> = None;
        for_each_combination(&sizes, k, &mut combo, &mut |c| {
            if let Some(dev) = equitable(c) {
                if best.as_ref().is_none_or(|(d, _)| dev < *d) {
                    best = Some((dev, c.to_vec()));
                }
            }
        });
        if let Some((_, set)) = best {
            return set.into_iter().collect();
        }
    }
    BTreeSet::new()
}

fn for_each_combination(items: &[u32], k: usize, buf: &mut Vec<u32>, f: &mut dyn FnMut(&[u32])) {
    if buf.len() == k {
        f(buf);
        return;
    }
    for (i, &x) in items.iter().enumerate() {
        if items.len() - i < k - buf.len() {
            break;
        }
        buf.push(x);
        for_each_combination(&items[i + 1..], k, buf, f);
        buf.pop();
    }
}

/// Line-oriented audit trail of one verifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AuditRecord {
    Probe {
        epoch: u64,
        probe: u64,
        time: f64,
        size: u32,
        color: Color,
        apportionment: Apportionment,
        state: FairnessState,
    },
    Skipped {
        epoch: u64,
        probe: u64,
        time: f64,
        size: u32,
        color: Color,
    },
    Consolidation {
        epoch: u64,
        probe: u64,
        time: f64,
        state: FairnessState,
        moved: u64,
    },
}

pub const AUDIT_HEADER: &str = "kind,epoch,probe,time,size,color,apportionment,state,moved";

impl fmt::Display for AuditRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuditRecord::Probe { epoch, probe, time, size, color, apportionment, state } => {
                write!(f, "probe,{epoch},{probe},{time},{size},{color},{apportionment},{state},")
            }
            AuditRecord::Skipped { epoch, probe, time, size, color } => {
                write!(f, "skipped,{epoch},{probe},{time},{size},{color},,,")
            }
            AuditRecord::Consolidation { epoch, probe, time, state, moved } => {
                write!(f, "consolidation,{epoch},{probe},{time},,,,{state},{moved}")
            }
        }
    }
}

fn parse_state(s: &str) -> Result<FairnessState, VerifierError> {
    match s {
        "fair" => Ok(FairnessState::CurrFair),
        "unfair" => Ok(FairnessState::CurrUnfair),
        "unsure" => Ok(FairnessState::CurrUnsure),
        other => Err(VerifierError::Audit(format!("unknown state {other:?}"))),
    }
}

impl FromStr for AuditRecord {
    type Err = VerifierError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || VerifierError::Audit(line.to_string());
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad());
        let epoch = num(f[1])?;
        let probe = num(f[2])?;
        let time: f64 = f[3].parse().map_err(|_| bad())?;
        let size = || f[4].parse::<u32>().map_err(|_| bad());
        let color = || f[5].parse::<u16>().map(Color).map_err(|_| bad());
        match f[0] {
            "probe" => {
                let counts = f[6]
                    .split(';')
                    .map(|c| c.parse::<u32>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(AuditRecord::Probe {
                    epoch,
                    probe,
                    time,
                    size: size()?,
                    color: color()?,
                    apportionment: Apportionment::new(counts),
                    state: parse_state(f[7])?,
                })
            }
            "skipped" => Ok(AuditRecord::Skipped { epoch, probe, time, size: size()?, color: color()? }),
            "consolidation" => Ok(AuditRecord::Consolidation {
                epoch,
                probe,
                time,
                state: parse_state(f[7])?,
                moved: num(f[8])?,
            }),
            _ => Err(bad()),
        }
    }
}

pub fn write_audit<W: Write>(mut w: W, records: &[AuditRecord]) -> io::Result<()> {
    writeln!(w, "{AUDIT_HEADER}")?;
    for r in records {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

pub fn read_audit<R: BufRead>(r: R) -> Result<Vec<AuditRecord>, VerifierError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| VerifierError::Audit(e.to_string()))?;
        if (i == 0 && line == AUDIT_HEADER) || line.is_empty() {
            continue;
        }
        out.push(line.parse()?);
    }
    Ok(out)
}

/// Stateful tester for one broker: tables and ledger of the running epoch,
/// the ledgers of finished epochs and the consolidation trace.
#[derive(Debug, Clone)]
pub struct Verifier {
    config: VerifierConfig,
    tables: FairnessTables,
    ledger: EpochLedger,
    history: Vec<EpochLedger>,
    trace: FairnessTrace,
    epoch_trace_start: usize,
    probes_in_epoch: u64,
    audit: Vec<AuditRecord>,
    record_audit: bool,
}

impl Verifier {
    pub fn new(config: VerifierConfig) -> Result<Self, VerifierError> {
        config.validate()?;
        let ledger = EpochLedger::new(0, &config);
        Ok(Self {
            config,
            tables: FairnessTables::default(),
            ledger,
            history: Vec::new(),
            trace: FairnessTrace::default(),
            epoch_trace_start: 0,
            probes_in_epoch: 0,
            audit: Vec::new(),
            record_audit: false,
        })
    }

    pub fn with_audit(mut self) -> Self {
        self.record_audit = true;
        self
    }

    pub fn config(&self) -> &VerifierConfig {
        &self.config
    }

    pub fn tables(&self) -> &FairnessTables {
        &self.tables
    }

    pub fn ledger(&self) -> &EpochLedger {
        &self.ledger
    }

    pub fn history(&self) -> &[EpochLedger] {
        &self.history
    }

    pub fn trace(&self) -> &FairnessTrace {
        &self.trace
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.audit
    }

    /// Thresholds may be retuned between evaluations.
    pub fn set_thresholds(&mut self, t: DecisionThresholds) {
        self.config.thresholds = t;
    }

    fn now(&self) -> f64 {
        let step = self.config.epoch_length / f64::from(self.config.samples_per_epoch);
        self.ledger.epoch_index as f64 * self.config.epoch_length + self.probes_in_epoch as f64 * step
    }

    fn log(&mut self, r: AuditRecord) {
        if self.record_audit {
            self.audit.push(r);
        }
    }

    /// Accepted samples so far in the running epoch.
    pub fn samples_in_epoch(&self) -> u64 {
        self.ledger.total_units()
    }

    /// Start a new epoch: earlier tables become stale and are dropped, the
    /// finished ledger is archived and the broker's clock ticks over.
    pub fn begin_epoch(&mut self, broker: &mut dyn Broker) {
        if self.probes_in_epoch > 0 || self.ledger.total_units() > 0 {
            let next = self.ledger.epoch_index + 1;
            let done = std::mem::replace(&mut self.ledger, EpochLedger::new(next, &self.config));
            self.history.push(done);
        }
        self.tables = FairnessTables::default();
        self.probes_in_epoch = 0;
        self.epoch_trace_start = self.trace.len();
        broker.begin_epoch();
    }

    /// One probe. Returns `None` when the broker could not place the request.
    pub fn probe<R: Rng + ?Sized>(
        &mut self,
        broker: &mut dyn Broker,
        rng: &mut R,
    ) -> Result<Option<FairnessState>, VerifierError> {
        let size = rng.gen_range(1..=self.config.max_x);
        let color = Color(rng.gen_range(0..self.config.color_space) as u16);
        let request = ProvisioningRequest::new(size, color, self.config.cost_target, self.config.max_x)?;
        let (epoch, probe, time) = (self.ledger.epoch_index, self.probes_in_epoch, self.now());
        self.probes_in_epoch += 1;
        let outcome = match simple_fairness_test(broker, &request, self.config.equity_tolerance) {
            Ok(o) => o,
            Err(VerifierError::Sim(e)) if e.is_unsatisfiable() => {
                self.ledger.skipped += 1;
                self.log(AuditRecord::Skipped { epoch, probe, time, size, color });
                return Ok(None);
            }
            Err(VerifierError::Domain(DomainError::Unsatisfiable)) => {
                self.ledger.skipped += 1;
                self.log(AuditRecord::Skipped { epoch, probe, time, size, color });
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let fair = outcome.state.is_fair();
        self.ledger.vms_provisioned += outcome.apportionment.total();
        if fair {
            self.ledger.fair_units += 1;
        } else {
            self.ledger.unsure_units += 1;
        }
        self.log(AuditRecord::Probe {
            epoch,
            probe,
            time,
            size,
            color,
            apportionment: outcome.apportionment.clone(),
            state: outcome.state,
        });
        self.tables.insert(
            (size, color),
            TableEntry { observed: outcome.apportionment, reference: outcome.reference },
            fair,
        );
        if self.samples_in_epoch().is_multiple_of(u64::from(self.config.period())) {
            self.consolidate_now();
        }
        Ok(Some(outcome.state))
    }

    fn consolidate_now(&mut self) -> FairnessState {
        let before = self.ledger.moved_units;
        let state = consolidate(&mut self.tables, &mut self.ledger, self.config.equity_tolerance);
        self.trace.push(state);
        let (epoch, probe, time) = (self.ledger.epoch_index, self.probes_in_epoch, self.now());
        let moved = self.ledger.moved_units - before;
        self.log(AuditRecord::Consolidation { epoch, probe, time, state, moved });
        state
    }

    /// Probe until `target` samples of the running epoch are accepted.
    /// Unsatisfiable probes are retried, up to four attempts per sample.
    pub fn run_until<R: Rng + ?Sized>(
        &mut self,
        broker: &mut dyn Broker,
        rng: &mut R,
        target: u64,
    ) -> Result<(), VerifierError> {
        let max_attempts = 4 * u64::from(self.config.samples_per_epoch);
        while self.samples_in_epoch() < target && self.probes_in_epoch < max_attempts {
            self.probe(broker, rng)?;
        }
        if self.samples_in_epoch() == 0 && self.probes_in_epoch > 0 {
            return Err(VerifierError::EpochAborted {
                epoch: self.ledger.epoch_index,
                attempts: self.probes_in_epoch,
            });
        }
        Ok(())
    }

    /// Run a whole epoch from a fresh start and archive its ledger.
    pub fn run_epoch<R: Rng + ?Sized>(
        &mut self,
        broker: &mut dyn Broker,
        rng: &mut R,
    ) -> Result<(FairnessTables, EpochLedger, FairnessTrace), VerifierError> {
        self.begin_epoch(broker);
        self.run_until(broker, rng, u64::from(self.config.samples_per_epoch))?;
        let trace = FairnessTrace::new(self.trace.states()[self.epoch_trace_start..].to_vec());
        Ok((self.tables.clone(), self.ledger.clone(), trace))
    }

    /// Verdict on the running epoch, which may be only partly observed.
    pub fn verdict(&self) -> Result<FairnessVerdict, VerifierError> {
        verdict(&self.ledger, &self.history, &self.trace, &self.config)
    }

    pub fn isolate_unfair_sizes(&self) -> BTreeSet<u32> {
        isolate_unfair_sizes(&self.tables, self.config.equity_tolerance, self.config.isolation_cap)
    }
}
