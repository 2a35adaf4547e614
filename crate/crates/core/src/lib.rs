pub mod specfun;
pub mod quadrature;
pub mod kernels;
pub mod moments;
pub mod simulate;
pub mod regress;
pub mod verify;
