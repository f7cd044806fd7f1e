pub mod client;
pub mod codec;
pub mod context;
pub mod crypto;
pub mod gateway;
pub mod kdc;
pub mod net;
pub mod protocol;
