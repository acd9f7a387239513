pub mod app;
pub mod budget;
pub mod design;
pub mod error;
pub mod excursion;
pub mod explicit;
pub mod grid;
pub mod hyper;
pub mod implicit;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod operators;
pub mod rng;
pub mod sampling;
