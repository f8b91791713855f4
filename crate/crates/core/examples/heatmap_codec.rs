//! Encodes landmarks as Gaussian heatmaps and decodes them back.

use lowres_landmarks::synth::{decode_heatmaps, encode_heatmaps, HEATMAP_SIGMA};

fn main() -> lowres_landmarks::Result<()> {
    let landmarks = [[10.25, 12.5], [21.75, 12.0], [16.0, 17.3], [11.6, 23.1], [20.4, 23.9]];
    let visible = [true, true, true, false, true];
    let stack = encode_heatmaps(&landmarks, &visible, 32, HEATMAP_SIGMA)?;
    println!("stack shape {:?}", stack.shape());
    for (i, (d, p)) in decode_heatmaps(&stack, landmarks.len())?.iter().zip(&landmarks).enumerate() {
        if !d.visible {
            println!("point {i}: not visible (confidence {:.2})", d.confidence);
            continue;
        }
        let err = (d.point[0] - p[0]).hypot(d.point[1] - p[1]);
        println!(
            "point {i}: true {p:?} decoded [{:.2}, {:.2}] confidence {:.2} error {err:.3}",
            d.point[0], d.point[1], d.confidence
        );
    }
    Ok(())
}
