pub mod expr;
pub mod pipeline;
