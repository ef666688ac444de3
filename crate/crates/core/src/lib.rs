pub mod cli;
pub mod data;
pub mod lexicon;
pub mod matcher;
pub mod model;
pub mod tensor;
pub mod train;
pub mod vocab;
