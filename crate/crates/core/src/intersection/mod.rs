//! Risk-aware intersection domain.

pub mod layout;
pub mod library;
pub mod planner;
pub mod scenario;
pub mod sim;
pub mod vehicle;
