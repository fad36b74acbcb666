pub mod degrade;
pub mod descriptors;
pub mod features;
pub mod harness;
pub mod imagekit;
pub mod locator;
pub mod matching;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
