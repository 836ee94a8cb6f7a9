pub mod exec;
pub mod grounding;
pub mod harness;
pub mod lang;
pub mod tensor;
pub mod verify;
