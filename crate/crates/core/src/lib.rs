pub mod data;
pub mod eval;
pub mod model;
pub mod registry;
pub mod tensor;
pub mod training;
