//! Natural-language style prompts: the three augmentation strategies over
//! the built-in lexicon, and how the prompt encoder places them.

use stylefusion::corpus::{augment_prompt, style_bank, PromptLexicon, PromptStrategy};
use stylefusion::eval::cosine;
use stylefusion::model::StyleFusionModel;
use stylefusion::nn::Ctx;
use stylefusion::RunConfig;
use stylefusion_autodiff::Tape;

fn main() {
    let lexicon = PromptLexicon::builtin();
    let styles = style_bank(4);
    for s in &styles {
        for (i, strategy) in PromptStrategy::ALL.into_iter().enumerate() {
            let p = augment_prompt(&s.style_name, &lexicon, strategy, i as u64).unwrap();
            println!("{:<8} {:<13} {p}", s.style_name, format!("{strategy:?}"));
        }
    }

    // Untrained encoder: identical prompts coincide, different ones do not.
    let (model, store) = StyleFusionModel::build::<f64>(&RunConfig::desk()).unwrap();
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let embed = |p: &str| model.gsf.encode_prompt(ctx, p).unwrap().value().into_vec();
    let a = embed("speak in a cheerful voice");
    println!("cos(same prompt)      {:.4}", cosine(&a, &embed("speak in a cheerful voice")));
    println!("cos(different prompt) {:.4}", cosine(&a, &embed("sound gloomy and slow")));
}
