pub mod augment;
pub mod autodiff;
pub mod corpus;
pub mod dsp;
pub mod evalx;
pub mod model;
pub mod pgm;
pub mod tensor;
pub mod train;
pub mod visualtext;
