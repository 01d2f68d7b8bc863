#![allow(dead_code)]

pub mod boosting;
pub mod gmm;
pub mod itml;
pub mod lasso;
