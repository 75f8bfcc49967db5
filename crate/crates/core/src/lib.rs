pub mod model;
pub mod providers;
pub mod templates;
pub mod text;
pub mod neural;
pub mod detect;
pub mod resolve;
pub mod retrieval;
pub mod generate;
pub mod evaluate;
pub mod config;
pub mod pipeline;
pub mod cli;
