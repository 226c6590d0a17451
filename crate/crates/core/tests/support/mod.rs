#![allow(dead_code)]

pub mod toy_flow;
pub mod toy_model;
