#![allow(dead_code)]

use muse_core::backends::{HashedImageExtractor, ImageConfig};
use muse_core::data::{ImageRef, Sample, Split, Vocabulary};
use muse_core::ingest::Dataset;
use muse_core::model::{Model, ModelConfig, Variant};
use muse_core::training::{Phase, TrainConfig};

pub const IMAGE_WIDTH: usize = 8;

pub fn image_config() -> ImageConfig {
    ImageConfig {
        regions: 3,
        width: IMAGE_WIDTH,
        require_files: false,
    }
}

pub fn model_config(variant: Variant, width: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        variant,
        text_width: width,
        heads,
        text_layers: 1,
        encoder_depth: 1,
        decoder_layers: 1,
        max_token_length: 16,
        image: image_config(),
    }
}

pub fn extractor() -> HashedImageExtractor {
    HashedImageExtractor::new(image_config())
}

pub const PAIRS: [(&str, &str); 8] = [
    ("what a lovely day", "the day is rainy and cold"),
    ("i love waiting in traffic", "nobody enjoys traffic jams"),
    ("great job team", "the team lost badly"),
    ("my favourite monday again", "mondays are disliked"),
    ("best service ever", "the service was slow"),
    ("so glad the train is late", "late trains are annoying"),
    ("wow such a quiet party", "the party is very loud"),
    ("perfect time for rain", "rain ruined the picnic"),
];

pub fn explanation_samples(ocr: bool) -> Vec<Sample> {
    PAIRS
        .iter()
        .enumerate()
        .map(|(i, (c, e))| {
            let s = Sample::new(format!("s{i}"), *c, *e)
                .with_image(ImageRef::Path(format!("img{i}.jpg")))
                .with_split(Split::Train);
            if ocr && i % 2 == 0 {
                s.with_ocr(format!("sign {i}"))
            } else {
                s
            }
        })
        .collect()
}

pub fn dataset(samples: Vec<Sample>) -> Dataset {
    Dataset::new(samples).unwrap()
}

pub fn vocab(ds: &Dataset) -> Vocabulary {
    Vocabulary::build(&ds.split(Split::Train), 1).unwrap()
}

/// Linearly separable pretraining set: the caption word decides the label.
pub fn labelled_samples() -> Vec<Sample> {
    let words = ["love", "adore", "enjoy", "like", "hate", "loathe", "dislike", "detest"];
    words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            Sample::new(format!("p{i}"), format!("i {w} rain"), "")
                .with_image(ImageRef::Path(format!("p{i}.jpg")))
                .with_split(Split::Train)
                .with_label(i < 4)
        })
        .collect()
}

pub fn toy_train(phase: Phase, epochs: usize) -> TrainConfig {
    TrainConfig {
        phase,
        epochs,
        batch_size: 4,
        lr_encoder: 3e-3,
        lr_lm_head: 3e-3,
        lr_other: 3e-3,
        ..TrainConfig::default()
    }
}

pub fn model(cfg: ModelConfig, vocab: &Vocabulary) -> Model {
    Model::new(cfg, vocab.len()).unwrap()
}
