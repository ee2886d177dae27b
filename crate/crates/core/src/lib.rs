pub mod codec;
pub mod primitives;
pub mod hbs;
pub mod cbkem;
pub mod keystore;
pub mod easyapi;
pub mod minitls;
pub mod mailenv;
