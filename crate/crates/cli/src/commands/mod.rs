pub mod corrupt;
pub mod evaluate;
pub mod gen_data;
pub mod generate;
pub mod lm_train;
pub mod sweep;
pub mod train;
