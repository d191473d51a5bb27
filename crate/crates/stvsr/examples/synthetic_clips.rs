//! Generates a small synthetic dataset (textured rectangles moving over a
//! drifting background) and prints the resulting clip index.

use stvsr::data::{load_index, write_synthetic_dataset, Split, SyntheticSpec};

fn main() {
    let dir = std::env::temp_dir().join("stvsr_synthetic_example");
    let spec = SyntheticSpec::default();
    let records = write_synthetic_dataset(&dir, 3, 42, &spec, Split::Train).unwrap();
    println!("wrote {} clips under {}", records.len(), dir.display());
    for clip in load_index(&dir).unwrap() {
        println!(
            "  {} split={} motion={} frames={}",
            clip.id,
            clip.split,
            clip.motion,
            clip.frames.len()
        );
        for f in clip.frames.iter().take(2) {
            println!("    {}", f.display());
        }
        println!("    ...");
    }
    println!("frame size: {}x{} px, {} frames per clip", spec.size, spec.size, spec.frame_count);
}
