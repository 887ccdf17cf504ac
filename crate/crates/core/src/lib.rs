pub mod angular;
pub mod browser;
pub mod dom;
pub mod llm;
pub mod markup;
pub mod model;
pub mod patch_angular;
pub mod patch_static;
pub mod pipeline;
pub mod prompt;
pub mod rules;
pub mod segments;
pub mod verify;
pub mod vision;
