pub mod domain;
pub mod error;
pub mod forest;
pub mod learners;
pub mod seeding;
pub mod sim;
pub mod dml;
pub mod decision;
pub mod evaluation;
pub mod interpreter;
pub mod io;
pub mod commands;
