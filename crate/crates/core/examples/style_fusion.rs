//! The multimodal front end: prompt, style-audio and speaker embeddings,
//! the gated style combination and the gradient reversal layer.

use stylefusion::corpus::{generate_corpus, CorpusParams};
use stylefusion::gsf_encoder::{combine_style_values, grl};
use stylefusion::model::StyleFusionModel;
use stylefusion::nn::Ctx;
use stylefusion::RunConfig;
use stylefusion_autodiff::{Mat, Tape};

fn main() {
    let cfg = RunConfig::desk();
    let corpus = generate_corpus(&CorpusParams::new(2, 4, 1, cfg.seed));
    let (model, store) = StyleFusionModel::build::<f32>(&cfg).unwrap();
    let (happy, angry) = (&corpus.utterances[1], &corpus.utterances[3]);

    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let m = model.gsf.encode_modalities(ctx, Some(&happy.prompt), Some(&angry.spectrogram), &happy.spectrogram).unwrap();
    let prompt = m.style_prompt.value().into_vec();
    let audio = m.style_audio.unwrap().value().into_vec();
    println!("prompt \"{}\", style reference {}, speaker reference {}", happy.prompt, angry.id, happy.id);
    println!("emb_style dim {}, emb_speaker dim {}", prompt.len(), m.speaker.value().len());
    for gate in [0.0, 1.0] {
        let s = combine_style_values(&audio, &prompt, gate).unwrap();
        println!("gate {gate}: emb_style[..4] = {:?}", &s[..4]);
    }

    // The reversal layer passes values through and flips gradients.
    let x = tape.leaf(Mat::row_vector(vec![1.0f32, -2.0, 3.0]));
    let y = grl(x, 0.5);
    let g = tape.backward(y.sum());
    println!("grl forward {:?}, gradient {:?}", y.value().data(), g.wrt(x).unwrap().data());
}
