//! Synthesis with prompt only, style reference only, and both. Optional
//! argument: checkpoint path.

use stylefusion::model::SynthRequest;

mod support;

fn main() {
    let (cfg, model, store, data) = support::model_and_data();
    let speaker = &data.held.utterances[0];
    let style = data.held.utterances.iter().find(|u| u.style_id != speaker.style_id).unwrap();
    let prompt = "please sound angry and tense";
    let text = "meet me by the river";
    for (label, p, s) in [
        ("prompt only", Some(prompt), None),
        ("audio only", None, Some(&style.spectrogram)),
        ("prompt and audio", Some(prompt), Some(&style.spectrogram)),
    ] {
        let out = model
            .synthesize(
                &store,
                &SynthRequest {
                    text,
                    speaker_ref: &speaker.spectrogram,
                    prompt: p,
                    style_ref: s,
                    seed: 1,
                    temperature: cfg.temperature,
                    gate: None,
                },
            )
            .unwrap();
        println!("{label:<17} {} frames, durations {:?}", out.spectrogram.rows(), out.durations);
    }
    let out = model
        .synthesize(
            &store,
            &SynthRequest {
                text,
                speaker_ref: &speaker.spectrogram,
                prompt: Some(prompt),
                style_ref: None,
                seed: 1,
                temperature: cfg.temperature,
                gate: None,
            },
        )
        .unwrap();
    stylefusion::spectrogram::write(std::path::Path::new("example_synth.spec"), &out.spectrogram).unwrap();
    println!("wrote example_synth.spec");
}
