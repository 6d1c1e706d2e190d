#![allow(dead_code)]

pub mod brook_evans;
pub mod qp;
