pub mod assemblage;
pub mod empirical;
pub mod exposure;
pub mod hermitian;
pub mod presets;
pub mod sdp;
pub mod steering;
pub mod strategies;
