//! Files: the binary container, model files, and delimited text.

pub mod container;
pub mod model_file;
pub mod text;
