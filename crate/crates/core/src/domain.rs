//! Provisioning flows and the efficient-fairness reference model.
//!
//! A provisioning request for `size` VMs of some [`Color`] is split by a broker
//! into an [`Apportionment`]: one VM count per supplier cloud. A supplier that
//! cannot serve the color within the request's cost target is *bottlenecked*
//! and may legitimately receive nothing. Among the remaining suppliers the
//! unbiased split is the integer max-min (water-filling) allocation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloudsim::SupplierState;

/// Default number of distinct colors when a config does not say otherwise.
pub const DEFAULT_COLOR_SPACE: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("color {color} outside color space of {cardinality}")]
    UnknownColor { color: u16, cardinality: usize },
    #[error("request size {size} outside [1, {max_x}]")]
    InvalidSize { size: u32, max_x: u32 },
    #[error("negative or non-finite cost target {0}")]
    InvalidCostTarget(f64),
    #[error("every supplier is bottlenecked; request cannot be placed")]
    Unsatisfiable,
    #[error("apportionment length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("apportionment sum mismatch: {left} vs {right}")]
    SumMismatch { left: u64, right: u64 },
}

/// Requirement bundle (size class plus availability class) of a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Color(pub u16);

impl Color {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn checked(id: u16, cardinality: usize) -> Result<Self, DomainError> {
        if (id as usize) < cardinality {
            Ok(Color(id))
        } else {
            Err(DomainError::UnknownColor { color: id, cardinality })
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProvisioningRequest {
    pub size: u32,
    pub color: Color,
    /// Highest acceptable unit cost per VM.
    pub cost_target: f64,
}

impl ProvisioningRequest {
    pub fn new(size: u32, color: Color, cost_target: f64, max_x: u32) -> Result<Self, DomainError> {
        if size == 0 || size > max_x {
            return Err(DomainError::InvalidSize { size, max_x });
        }
        if !(cost_target.is_finite() && cost_target >= 0.0) {
            return Err(DomainError::InvalidCostTarget(cost_target));
        }
        Ok(Self { size, color, cost_target })
    }
}

/// Per-supplier VM counts for one request. The total is the request size.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Apportionment(Vec<u32>);

impl Apportionment {
    pub fn new(counts: Vec<u32>) -> Self {
        Self(counts)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&c| u64::from(c)).sum()
    }

    /// Tally provider tags (one supplier id per VM) into counts.
    pub fn from_tags(tags: &[usize], n: usize) -> Self {
        let mut counts = vec![0; n];
        for &t in tags {
            counts[t] += 1;
        }
        Self(counts)
    }
}

impl From<Vec<u32>> for Apportionment {
    fn from(counts: Vec<u32>) -> Self {
        Self(counts)
    }
}

impl fmt::Display for Apportionment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Which suppliers could not serve the request at hand.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BottleneckProfile(Vec<bool>);

impl BottleneckProfile {
    pub fn new(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    pub fn none(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_bottlenecked(&self, supplier: usize) -> bool {
        self.0[supplier]
    }

    pub fn available(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| !b).map(|(i, _)| i)
    }

    /// Capture the profile of every supplier for one color and cost target.
    pub fn observe(
        suppliers: &[SupplierState],
        color: Color,
        cost_target: f64,
    ) -> Result<Self, DomainError> {
        suppliers
            .iter()
            .map(|s| bottleneck_check(s, color, cost_target))
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }
}

/// True when the supplier cannot provision `color` within `cost_target`:
/// either it has no capacity left or its unit cost exceeds the target.
pub fn bottleneck_check(
    supplier: &SupplierState,
    color: Color,
    cost_target: f64,
) -> Result<bool, DomainError> {
    let remaining = supplier.remaining(color)?;
    let cost = supplier.unit_cost(color)?;
    Ok(remaining == 0 || cost > cost_target)
}

/// Integer max-min apportionment of `size` VMs over the suppliers that are
/// not bottlenecked. Remainder units go to the lowest-indexed suppliers.
pub fn efficient_fair_reference(
    size: u32,
    bottlenecks: &BottleneckProfile,
) -> Result<Apportionment, DomainError> {
    let available: Vec<usize> = bottlenecks.available().collect();
    if available.is_empty() {
        return Err(DomainError::Unsatisfiable);
    }
    let k = available.len() as u32;
    let (base, remainder) = (size / k, size % k);
    let mut counts = vec![0; bottlenecks.len()];
    for (rank, &i) in available.iter().enumerate() {
        counts[i] = base + u32::from((rank as u32) < remainder);
    }
    Ok(Apportionment(counts))
}

/// Per-supplier comparison of an observed split against a reference split.
pub fn is_equitable(
    observed: &Apportionment,
    reference: &Apportionment,
    tolerance: u64,
) -> Result<bool, DomainError> {
    Ok(max_deviation(observed, reference)? <= tolerance)
}

/// Largest absolute per-supplier difference between two equal-sum splits.
pub fn max_deviation(observed: &Apportionment, reference: &Apportionment) -> Result<u64, DomainError> {
    if observed.len() != reference.len() {
        return Err(DomainError::LengthMismatch { left: observed.len(), right: reference.len() });
    }
    if observed.total() != reference.total() {
        return Err(DomainError::SumMismatch { left: observed.total(), right: reference.total() });
    }
    Ok(observed
        .counts()
        .iter()
        .zip(reference.counts())
        .map(|(&o, &r)| u64::from(o.abs_diff(r)))
        .max()
        .unwrap_or(0))
}

/// Cumulative per-supplier totals, wide enough for whole-epoch sums.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals(pub Vec<u64>);

impl Totals {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn add(&mut self, a: &Apportionment) {
        if self.0.len() < a.len() {
            self.0.resize(a.len(), 0);
        }
        for (t, &c) in self.0.iter_mut().zip(a.counts()) {
            *t += u64::from(c);
        }
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn max_deviation(&self, other: &Totals) -> u64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| a.abs_diff(b))
            .max()
            .unwrap_or(0)
    }
}
