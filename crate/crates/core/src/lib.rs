//! Joint scheduling and power control for a downlink shared by real-time
//! (deadline-constrained) and non-real-time (throughput) users.

pub mod config;
pub mod engine;
pub mod error;
pub mod kernels;
pub mod queues;
pub mod region;
pub mod sched;
pub mod sweep;
pub mod traffic;

pub use config::{PerUser, SystemConfig};
pub use engine::{run, run_with_observer, RunReport, SlotObserver};
pub use error::{Error, Result};
pub use sched::{SchedulerKind, SlotDecision};
pub use traffic::{ChannelModel, PacketModel};
pub use region::{in_lambert_region, stress_stability, RegionCertificate, RegionQuery};
pub use sweep::{SweepAxis, SweepRow, SweepSpec};
