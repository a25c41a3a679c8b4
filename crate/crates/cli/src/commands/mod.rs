pub mod classify;
pub mod data;
pub mod embed;
pub mod evaluate;
pub mod generate;
pub mod report;
