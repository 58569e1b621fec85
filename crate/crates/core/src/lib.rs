pub mod analysis;
pub mod data;
pub mod engine;
pub mod error;
pub mod objective;
pub mod prox;
pub mod rng;
pub mod sim;
pub mod trajectory;
