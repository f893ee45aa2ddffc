//! Verifying that a multi-cloud broker spreads VM placements equitably.
//!
//! A tester issues randomized provisioning requests, compares each split to
//! the efficient max-min split, consolidates the results over time and
//! reports the probability that the broker is fair.

pub mod adaptive;
pub mod calculus;
pub mod cloudsim;
pub mod domain;
pub mod harness;
pub mod verifier;

pub use adaptive::{ControllerMode, ControllerState, FeedbackEvent};
pub use calculus::{DecisionThresholds, FairnessState, FairnessTrace, ProbabilityTriple, TraceClass};
pub use cloudsim::{Broker, BrokerPolicy, SimulatedBroker, SupplierState, SupplierTemplate};
pub use domain::{Apportionment, BottleneckProfile, Color, ProvisioningRequest};
pub use verifier::{FairnessVerdict, Verifier, VerifierConfig};
