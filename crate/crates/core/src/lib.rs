//! Vision-only racing control. A kinematic bicycle simulator and a software
//! camera renderer feed an attention CNN trained with clipped PPO; the CNN sits
//! on a small reverse-mode autodiff library. The eval module measures transfer
//! across textures and lighting and draws saliency maps.

pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod kinematics;
pub mod policy;
pub mod ppo;
pub mod render;
pub mod tensor;
pub mod track;

pub use error::{Error, Result};
