#![allow(dead_code)]

pub mod ops;
pub mod oracle;
pub mod published;
