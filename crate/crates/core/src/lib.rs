pub mod blocks;
pub mod cli;
pub mod conditions;
pub mod estimate;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod povm;
pub mod sld;
pub mod tolerances;
