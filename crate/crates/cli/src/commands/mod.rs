pub mod bounds;
pub mod grid;
pub mod inspect;
pub mod perturb;
pub mod small_sample;
pub mod train;
