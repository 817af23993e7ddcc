//! Control-plane core for a monitoring-as-a-service platform: domain model,
//! probe catalog, state store, cloud bridge, API gateway and the two
//! reconciliation controllers.

pub mod api;
pub mod bridge;
pub mod catalog;
pub mod claim_controller;
pub mod clock;
pub mod error;
pub mod events;
mod fsutil;
pub mod model;
pub mod store;
pub mod testkit;
pub mod unit_controller;
