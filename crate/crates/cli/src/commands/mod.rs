pub mod eval;
pub mod gen;
pub mod matching;
pub mod sweep;
pub mod viz;
