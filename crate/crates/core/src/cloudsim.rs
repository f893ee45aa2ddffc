//! In-process supplier clouds and broker policies.
//!
//! A [`SimulatedBroker`] owns its suppliers and a [`DeficitLedger`] and places
//! every request according to its [`BrokerPolicy`]. The verifier only ever
//! sees it through the [`Broker`] trait, so ground-truth labels stay in the
//! harness.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    efficient_fair_reference, Apportionment, BottleneckProfile, Color, DomainError,
    ProvisioningRequest,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("invalid broker policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid supplier template: {0}")]
    InvalidSuppliers(String),
    #[error("not enough capacity for {size} VMs of color {color}")]
    InsufficientCapacity { size: u32, color: Color },
}

impl SimError {
    /// Whether the request simply could not be placed, as opposed to a
    /// configuration fault.
    pub fn is_unsatisfiable(&self) -> bool {
        matches!(
            self,
            SimError::Domain(DomainError::Unsatisfiable) | SimError::InsufficientCapacity { .. }
        )
    }
}

/// One supplier cloud: configured per-color capacity, what is left of it in
/// the running epoch, and per-color unit cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplierState {
    pub id: usize,
    capacity: Vec<u32>,
    remaining: Vec<u32>,
    unit_cost: Vec<f64>,
}

impl SupplierState {
    pub fn new(id: usize, capacity: Vec<u32>, unit_cost: Vec<f64>) -> Result<Self, SimError> {
        if capacity.len() != unit_cost.len() || capacity.is_empty() {
            return Err(SimError::InvalidSuppliers(format!(
                "supplier {id}: {} capacities vs {} unit costs",
                capacity.len(),
                unit_cost.len()
            )));
        }
        if let Some(c) = unit_cost.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(SimError::InvalidSuppliers(format!("supplier {id}: unit cost {c}")));
        }
        Ok(Self { id, remaining: capacity.clone(), capacity, unit_cost })
    }

    /// Same capacity and cost for every color.
    pub fn uniform(id: usize, colors: usize, capacity: u32, unit_cost: f64) -> Self {
        Self {
            id,
            capacity: vec![capacity; colors],
            remaining: vec![capacity; colors],
            unit_cost: vec![unit_cost; colors],
        }
    }

    pub fn color_space(&self) -> usize {
        self.capacity.len()
    }

    fn slot(&self, color: Color) -> Result<usize, DomainError> {
        Color::checked(color.0, self.capacity.len()).map(Color::index)
    }

    pub fn remaining(&self, color: Color) -> Result<u32, DomainError> {
        Ok(self.remaining[self.slot(color)?])
    }

    pub fn capacity(&self, color: Color) -> Result<u32, DomainError> {
        Ok(self.capacity[self.slot(color)?])
    }

    pub fn unit_cost(&self, color: Color) -> Result<f64, DomainError> {
        Ok(self.unit_cost[self.slot(color)?])
    }

    pub fn set_unit_cost(&mut self, color: Color, cost: f64) -> Result<(), DomainError> {
        let i = self.slot(color)?;
        self.unit_cost[i] = cost;
        Ok(())
    }

    /// Overwrite what is left this epoch, e.g. to model an exhausted supplier.
    pub fn set_remaining(&mut self, color: Color, left: u32) -> Result<(), DomainError> {
        let i = self.slot(color)?;
        self.remaining[i] = left.min(self.capacity[i]);
        Ok(())
    }

    fn consume(&mut self, color: Color, count: u32) {
        let i = color.index();
        debug_assert!(self.remaining[i] >= count);
        self.remaining[i] -= count;
    }

    pub fn reset(&mut self) {
        self.remaining.clone_from(&self.capacity);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    EpochFair,
    Biased,
    SizeDependentBiased,
}

/// Behavioural profile of a simulated broker.
///
/// `min_chunk` is the smallest slice of a single request that a fair broker
/// places on one supplier. With the default of 1 every request is spread
/// over all available suppliers; larger values keep requests on fewer clouds
/// and leave the deficit ledger to even things out over the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrokerPolicy {
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub favored_supplier: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_threshold: Option<u32>,
    #[serde(default = "default_min_chunk")]
    pub min_chunk: u32,
}

fn default_min_chunk() -> u32 {
    1
}

pub const MIN_BIAS_RATE: f64 = 0.25;
pub const MAX_BIAS_RATE: f64 = 0.45;

impl BrokerPolicy {
    pub fn epoch_fair() -> Self {
        Self {
            kind: PolicyKind::EpochFair,
            favored_supplier: None,
            bias_rate: None,
            size_threshold: None,
            min_chunk: 1,
        }
    }

    pub fn epoch_fair_chunked(min_chunk: u32) -> Self {
        Self { min_chunk, ..Self::epoch_fair() }
    }

    pub fn biased(favored: usize, rate: f64) -> Self {
        Self {
            kind: PolicyKind::Biased,
            favored_supplier: Some(favored),
            bias_rate: Some(rate),
            size_threshold: None,
            min_chunk: 1,
        }
    }

    pub fn size_dependent(favored: usize, rate: f64, threshold: u32) -> Self {
        Self {
            kind: PolicyKind::SizeDependentBiased,
            size_threshold: Some(threshold),
            ..Self::biased(favored, rate)
        }
    }

    pub fn validate(&self, suppliers: usize, max_x: u32) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidPolicy(m));
        if self.min_chunk == 0 {
            return bad("min_chunk must be positive".into());
        }
        if self.kind == PolicyKind::EpochFair {
            return Ok(());
        }
        match self.favored_supplier {
            None => return bad(format!("{:?} needs favored_supplier", self.kind)),
            Some(f) if f >= suppliers => {
                return bad(format!("favored supplier {f} out of range for {suppliers} suppliers"))
            }
            _ => {}
        }
        match self.bias_rate {
            None => return bad(format!("{:?} needs bias_rate", self.kind)),
            Some(r) if !(MIN_BIAS_RATE..=MAX_BIAS_RATE).contains(&r) => {
                return bad(format!("bias_rate {r} outside [{MIN_BIAS_RATE}, {MAX_BIAS_RATE}]"))
            }
            _ => {}
        }
        if self.kind == PolicyKind::SizeDependentBiased {
            match self.size_threshold {
                None => return bad("size-dependent-biased needs size_threshold".into()),
                Some(k) if k == 0 || k > max_x => {
                    return bad(format!("size_threshold {k} outside [1, {max_x}]"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Whether this policy skews the given request size.
    pub fn skews(&self, size: u32) -> bool {
        match self.kind {
            PolicyKind::EpochFair => false,
            PolicyKind::Biased => true,
            PolicyKind::SizeDependentBiased => size > self.size_threshold.unwrap_or(u32::MAX),
        }
    }
}

/// Running per-epoch bookkeeping of a broker.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DeficitLedger {
    /// Cumulative allocation minus cumulative efficient-fair entitlement.
    pub balance: Vec<i64>,
    pub allocated: Vec<u64>,
    /// Allocation made on the fair path only; epoch-fair placement levels
    /// this, so skewed placements are never paid back by fair ones.
    pub leveled: Vec<u64>,
    /// VM volume of requests that went through the biased path.
    pub skewed_volume: u64,
    /// VMs handed to the favored supplier on the biased path.
    pub favored_granted: u64,
}

impl DeficitLedger {
    pub fn new(n: usize) -> Self {
        Self { balance: vec![0; n], allocated: vec![0; n], leveled: vec![0; n], skewed_volume: 0, favored_granted: 0 }
    }

    pub fn clear(&mut self) {
        self.balance.iter_mut().for_each(|b| *b = 0);
        self.allocated.iter_mut().for_each(|a| *a = 0);
        self.leveled.iter_mut().for_each(|a| *a = 0);
        self.skewed_volume = 0;
        self.favored_granted = 0;
    }

    fn record(&mut self, observed: &Apportionment, reference: &Apportionment) {
        for (i, (&o, &r)) in observed.counts().iter().zip(reference.counts()).enumerate() {
            self.allocated[i] += u64::from(o);
            self.balance[i] += i64::from(o) - i64::from(r);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisionResult {
    pub apportionment: Apportionment,
    /// Supplier id of every provisioned VM.
    pub provider_tags: Vec<usize>,
}

impl ProvisionResult {
    fn from_counts(apportionment: Apportionment) -> Self {
        let provider_tags = apportionment
            .counts()
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(i, c as usize))
            .collect();
        Self { apportionment, provider_tags }
    }
}

/// Hand `amount` units to `candidates` one at a time, always to the candidate
/// with the smallest `level + granted` (lowest index on ties), never past a cap.
fn water_fill(amount: u32, candidates: &[usize], level: &[u64], caps: &[u32], out: &mut [u32]) -> u32 {
    let mut left = amount;
    while left > 0 {
        let pick = candidates
            .iter()
            .copied()
            .filter(|&i| out[i] < caps[i])
            .min_by_key(|&i| (level[i] + u64::from(out[i]), i));
        match pick {
            Some(i) => {
                out[i] += 1;
                left -= 1;
            }
            None => break,
        }
    }
    left
}

/// Place one request according to `policy`, decrementing supplier capacity
/// and updating the ledger.
pub fn broker_provision(
    policy: &BrokerPolicy,
    request: &ProvisioningRequest,
    suppliers: &mut [SupplierState],
    ledger: &mut DeficitLedger,
) -> Result<ProvisionResult, SimError> {
    let n = suppliers.len();
    if ledger.allocated.len() != n {
        *ledger = DeficitLedger::new(n);
    }
    let profile = BottleneckProfile::observe(suppliers, request.color, request.cost_target)?;
    let reference = efficient_fair_reference(request.size, &profile)?;
    let available: Vec<usize> = profile.available().collect();
    let caps: Vec<u32> = suppliers
        .iter()
        .map(|s| s.remaining(request.color))
        .collect::<Result<_, _>>()?;
    let insufficient = || SimError::InsufficientCapacity { size: request.size, color: request.color };
    if available.iter().map(|&i| u64::from(caps[i])).sum::<u64>() < u64::from(request.size) {
        return Err(insufficient());
    }

    let mut counts = vec![0u32; n];
    if policy.skews(request.size) {
        let favored = policy.favored_supplier.expect("validated policy");
        let rate = policy.bias_rate.expect("validated policy");
        let mut granted = 0;
        if available.contains(&favored) {
            let target = (rate * (ledger.skewed_volume + u64::from(request.size)) as f64).round() as u64;
            let owed = target.saturating_sub(ledger.favored_granted);
            granted = owed.min(u64::from(request.size)).min(u64::from(caps[favored])) as u32;
        }
        counts[favored] = granted;
        let others: Vec<usize> = available.iter().copied().filter(|&i| i != favored).collect();
        // Even split over the others with lowest-index remainder, as in the reference.
        let flat = vec![0u64; n];
        let mut left = water_fill(request.size - granted, &others, &flat, &caps, &mut counts);
        if left > 0 && available.contains(&favored) {
            let room = caps[favored] - counts[favored];
            let extra = left.min(room);
            counts[favored] += extra;
            left -= extra;
        }
        if left > 0 {
            return Err(insufficient());
        }
        ledger.skewed_volume += u64::from(request.size);
        ledger.favored_granted += u64::from(counts[favored]);
    } else {
        let spread = (request.size / policy.min_chunk).clamp(1, available.len() as u32) as usize;
        let mut order = available.clone();
        order.sort_by_key(|&i| (ledger.leveled[i], i));
        let mut chosen: Vec<usize> = order.iter().copied().take(spread).collect();
        let mut left = water_fill(request.size, &chosen, &ledger.leveled, &caps, &mut counts);
        if left > 0 {
            // Chosen suppliers ran out of room; spill over onto the rest.
            chosen = order;
            left = water_fill(left, &chosen, &ledger.leveled, &caps, &mut counts);
        }
        if left > 0 {
            return Err(insufficient());
        }
        for (l, &c) in ledger.leveled.iter_mut().zip(&counts) {
            *l += u64::from(c);
        }
    }

    let apportionment = Apportionment::new(counts);
    for (s, &c) in suppliers.iter_mut().zip(apportionment.counts()) {
        s.consume(request.color, c);
    }
    ledger.record(&apportionment, &reference);
    Ok(ProvisionResult::from_counts(apportionment))
}

/// Restore every supplier to its configured capacity and clear the ledger.
pub fn epoch_reset(suppliers: &mut [SupplierState], ledger: &mut DeficitLedger) {
    suppliers.iter_mut().for_each(SupplierState::reset);
    ledger.clear();
}

/// The only view of a broker the fairness tester gets.
pub trait Broker {
    /// Public supplier market state (capacity left and unit costs).
    fn market(&self) -> &[SupplierState];
    fn provision(&mut self, request: &ProvisioningRequest) -> Result<ProvisionResult, SimError>;
    /// Epoch boundary on the shared simulated clock.
    fn begin_epoch(&mut self);
}

#[derive(Debug, Clone)]
pub struct SimulatedBroker {
    policy: BrokerPolicy,
    suppliers: Vec<SupplierState>,
    ledger: DeficitLedger,
}

impl SimulatedBroker {
    pub fn new(policy: BrokerPolicy, suppliers: Vec<SupplierState>, max_x: u32) -> Result<Self, SimError> {
        policy.validate(suppliers.len(), max_x)?;
        if suppliers.is_empty() {
            return Err(SimError::InvalidSuppliers("no suppliers".into()));
        }
        let ledger = DeficitLedger::new(suppliers.len());
        Ok(Self { policy, suppliers, ledger })
    }

    pub fn ledger(&self) -> &DeficitLedger {
        &self.ledger
    }

    pub fn suppliers_mut(&mut self) -> &mut [SupplierState] {
        &mut self.suppliers
    }
}

impl Broker for SimulatedBroker {
    fn market(&self) -> &[SupplierState] {
        &self.suppliers
    }

    fn provision(&mut self, request: &ProvisioningRequest) -> Result<ProvisionResult, SimError> {
        broker_provision(&self.policy, request, &mut self.suppliers, &mut self.ledger)
    }

    fn begin_epoch(&mut self) {
        epoch_reset(&mut self.suppliers, &mut self.ledger);
    }
}

/// Per-supplier override inside a [`SupplierTemplate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplierOverride {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_cost: Option<Vec<f64>>,
}

/// Configuration of the supplier market shared by every simulated broker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplierTemplate {
    pub count: usize,
    pub color_space: usize,
    /// Per-color capacity applied to every supplier.
    pub capacity: Vec<u32>,
    /// Per-color unit cost applied to every supplier.
    pub unit_cost: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<SupplierOverride>,
}

impl Default for SupplierTemplate {
    fn default() -> Self {
        Self {
            count: 5,
            color_space: 1,
            capacity: vec![1000],
            unit_cost: vec![1.0],
            overrides: Vec::new(),
        }
    }
}

impl SupplierTemplate {
    pub fn build(&self) -> Result<Vec<SupplierState>, SimError> {
        if self.count == 0 || self.color_space == 0 {
            return Err(SimError::InvalidSuppliers("count and color_space must be positive".into()));
        }
        if self.capacity.len() != self.color_space || self.unit_cost.len() != self.color_space {
            return Err(SimError::InvalidSuppliers(format!(
                "capacity and unit_cost need {} entries",
                self.color_space
            )));
        }
        let mut out: Vec<SupplierState> = (0..self.count)
            .map(|id| SupplierState::new(id, self.capacity.clone(), self.unit_cost.clone()))
            .collect::<Result<_, _>>()?;
        for o in &self.overrides {
            let base = out
                .get(o.id)
                .ok_or_else(|| SimError::InvalidSuppliers(format!("override for unknown supplier {}", o.id)))?;
            let capacity = o.capacity.clone().unwrap_or_else(|| base.capacity.clone());
            let unit_cost = o.unit_cost.clone().unwrap_or_else(|| base.unit_cost.clone());
            if capacity.len() != self.color_space || unit_cost.len() != self.color_space {
                return Err(SimError::InvalidSuppliers(format!(
                    "override for supplier {} has wrong color count",
                    o.id
                )));
            }
            out[o.id] = SupplierState::new(o.id, capacity, unit_cost)?;
        }
        Ok(out)
    }
}
