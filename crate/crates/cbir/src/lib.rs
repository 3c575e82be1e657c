//! Std-side companion to `cbir-core`: image decoding, the persisted index
//! format, corpus scanning, evaluation reports, the HTTP service and the CLI.

pub mod cli;
pub mod clock;
pub mod corpus;
pub mod decode;
pub mod index_file;
pub mod manifest;
pub mod report;
pub mod service;

pub use clock::WallClock;
pub use decode::{decode_image, encode_png, DecodeError};
pub use index_file::{load_index, read_index, save_index, write_index, FormatError};
