//! Probes the learned embeddings: style information in the style and
//! speaker embeddings, speaker identity by nearest centroid, and speaker
//! information at three stages of the last flow layer. Optional argument:
//! checkpoint.

use stylefusion::eval::disentanglement;

mod support;

fn main() {
    let (_, model, store, data) = support::model_and_data();
    let d = disentanglement(&model, &store, &data.train, &data.held).unwrap();
    println!("style probe on emb_style         {:>6.1} %", d.style_on_style);
    println!("style probe on emb_speaker       {:>6.1} %  (chance {:.0} %)", d.style_on_speaker, d.style_chance);
    println!("speaker nearest centroid         {:>6.1} %", d.speaker_centroid);
    println!("speaker probe, flow input        {:>6.1} %", d.speaker_probe_input);
    println!("speaker probe, post speaker      {:>6.1} %", d.speaker_probe_post_speaker);
    println!("speaker probe, post style        {:>6.1} %", d.speaker_probe_post_style);
}
