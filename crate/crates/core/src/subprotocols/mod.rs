//! Event sub-protocols built on the extension engine.

pub mod maneuver;
pub mod tolling;
pub mod view;

pub use maneuver::{ManeuverConfig, ManeuverSp, ManeuverTrigger};
pub use tolling::{TollAdvert, TollClient, TollProvider, TollingConfig, Zone};
pub use view::{ViewConfig, ViewSp};
