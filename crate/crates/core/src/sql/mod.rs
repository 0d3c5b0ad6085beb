pub mod ast;
pub mod dump;
pub mod engine;
pub mod parser;
pub mod value;

pub use ast::Statement;
pub use engine::{Engine, EngineError, QuirkConfig};
pub use parser::{parse_statement, parse_transaction};
