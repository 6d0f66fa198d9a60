//! File formats.
//!
//! | what            | format                                   |
//! |-----------------|------------------------------------------|
//! | scenes          | JSON-lines, header record then primitives |
//! | Gaussian clouds | JSON-lines, one record per Gaussian      |
//! | semantic grids  | binary `SQOC`, little-endian             |
//! | depth           | PFM, little-endian                       |
//! | semantics       | P6 PPM through a palette                 |
//! | alpha           | P5 PGM                                   |
//! | cameras         | JSON                                     |

mod atomic;
mod camera;
mod cloud;
mod image;
mod scene;
mod sqoc;

pub use atomic::write_atomic;
pub use camera::{camera_from_json, camera_to_json, read_camera};
pub use cloud::{read_cloud, write_cloud};
pub use image::{default_palette, parse_palette, write_pfm, write_pgm, write_ppm, Palette};
pub use scene::{read_scene, read_scene_from, write_scene, SCENE_VERSION};
pub use sqoc::{read_sqoc, write_sqoc, SqocGrid, SQOC_MAGIC, SQOC_VERSION};
