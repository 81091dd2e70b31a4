pub mod density;
pub mod gxt;
pub mod malliavin;
pub mod simulate;
pub mod verify;
