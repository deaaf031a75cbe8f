pub mod control;
pub mod datagen;
pub mod landscape;
pub mod mca;
pub mod shading;
pub mod simulate;
pub mod testkit;
