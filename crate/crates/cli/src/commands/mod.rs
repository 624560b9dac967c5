pub mod corpus;
pub mod diagnose;
pub mod fir;
pub mod mix;
pub mod mlp;
