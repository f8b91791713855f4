//! Warps synthetic faces onto the average-face template using their true landmarks.
//!
//! ```text
//! cargo run --example align_faces -- out/aligned
//! ```

use std::path::PathBuf;

use lowres_landmarks::eval::{align_affine, CanonicalTemplate};
use lowres_landmarks::synth::{augment, generate_face, io, FaceConfig};
use lowres_landmarks::Error;

fn main() -> lowres_landmarks::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/aligned".into()));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let cfg = FaceConfig::default();
    let template = CanonicalTemplate::average_face(cfg.keypoints, 48)?;
    for seed in 0..4 {
        let face = augment(&generate_face(seed, &cfg)?, seed + 10);
        let a = align_affine(&face.image, &face.landmarks, &face.visible, &template)?;
        let m = a.transform;
        println!(
            "face {seed}: [{:.3} {:.3} {:.2}; {:.3} {:.3} {:.2}] residual {:.3} px",
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], a.residual
        );
        io::save_png(&out.join(format!("{seed}_input.png")), &face.image)?;
        io::save_png(&out.join(format!("{seed}_aligned.png")), &a.image)?;
    }
    Ok(())
}
