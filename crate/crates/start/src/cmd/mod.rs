pub mod bench;
pub mod gap;
pub mod train;
pub mod verify;
