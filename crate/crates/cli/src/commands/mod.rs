pub mod datagen;
pub mod fit;
pub mod replay;
