pub mod bench;
pub mod corpus;
pub mod decision;
pub mod error;
pub mod eval;
pub mod hash;
pub mod llm;
pub mod probe;
pub mod retrieval;
pub mod softlabel;
pub mod tensor;
