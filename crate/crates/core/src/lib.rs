pub mod advisors;
pub mod frontier;
pub mod grid;
pub mod helpers;
pub mod mapping;
pub mod planner;
pub mod policy;
pub mod regions;
pub mod scene;
pub mod harness;
