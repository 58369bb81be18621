pub mod data;
pub mod metrics;
pub mod models;
pub mod objectives;
pub mod pipeline;
pub mod signal;
pub mod tensor;
