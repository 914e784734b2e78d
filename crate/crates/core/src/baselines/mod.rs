pub mod gpcn;
pub mod mhn;
