pub mod reconstruct;
pub mod report;
pub mod simulate;
pub mod verify;
