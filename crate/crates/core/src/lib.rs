pub mod collision;
pub mod constraints;
pub mod harness;
pub mod lsgm;
pub mod metrics;
pub mod mobil;
pub mod planner;
pub mod track;
pub mod traffic;
pub mod vehicle;
