use std::ffi::{CStr, CString};
use std::ptr;

use pthought::corpus::{EmbeddingTable, ParaphraseGroup, Vocab};
use pthought::metrics::pearson;
use pthought::model::checkpoint::Checkpoint;
use pthought::model::{EncoderVariant, Model, ModelConfig, SentenceEncoder, TextEncoder};
use pthought::train::TrainConfig;
use pthought_ffi::*;

fn last_error() -> String {
    let p = pt_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn write_checkpoint(dir: &std::path::Path) -> std::path::PathBuf {
    let group = ParaphraseGroup::from_captions(
        "g",
        &[
            "a dog runs in the park".to_string(),
            "the dog is running".to_string(),
        ],
    )
    .unwrap();
    let vocab = Vocab::build([&group]);
    let config = ModelConfig {
        variant: EncoderVariant::TwoLayerBi,
        vocab_size: vocab.len(),
        embed_dim: 5,
        hidden_dim: 3,
        shared_output: false,
    };
    let model = Model::init(config, EmbeddingTable::random(vocab.len(), 5, 7), 1).unwrap();
    let path = dir.join("ckpt.json");
    Checkpoint::new(&model, &vocab, &TrainConfig::default())
        .save(&path)
        .unwrap();
    path
}

#[test]
fn model_embeds_like_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_checkpoint(dir.path());
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut model: *mut PtModel = ptr::null_mut();
    assert_eq!(
        unsafe { pt_model_load(cpath.as_ptr(), false, &mut model) },
        PtStatus::Ok
    );
    let width = unsafe { pt_model_width(model) };
    assert_eq!(width, 6);

    let text = CString::new("the dog runs").unwrap();
    let mut buf = vec![0.0; width];
    assert_eq!(
        unsafe { pt_model_embed(model, text.as_ptr(), buf.as_mut_ptr(), width) },
        PtStatus::Ok
    );

    let ckpt = Checkpoint::load(&path).unwrap();
    let expected = TextEncoder::from_checkpoint(&ckpt, false)
        .unwrap()
        .encode_texts(&["the dog runs"])
        .unwrap();
    assert_eq!(buf, expected[0].values());

    let mut short = vec![0.0; width - 1];
    assert_eq!(
        unsafe { pt_model_embed(model, text.as_ptr(), short.as_mut_ptr(), short.len()) },
        PtStatus::BufferTooSmall
    );

    let oov = CString::new("a zebra runs").unwrap();
    assert_eq!(
        unsafe { pt_model_embed(model, oov.as_ptr(), buf.as_mut_ptr(), width) },
        PtStatus::InvalidInput
    );
    assert!(last_error().contains("zebra"));
    unsafe { pt_model_free(model) };

    let mut lenient: *mut PtModel = ptr::null_mut();
    assert_eq!(
        unsafe { pt_model_load(cpath.as_ptr(), true, &mut lenient) },
        PtStatus::Ok
    );
    assert_eq!(
        unsafe { pt_model_embed(lenient, oov.as_ptr(), buf.as_mut_ptr(), width) },
        PtStatus::Ok
    );
    unsafe { pt_model_free(lenient) };
}

#[test]
fn load_errors_map_to_codes() {
    let mut model: *mut PtModel = ptr::null_mut();
    let missing = CString::new("/nonexistent/ckpt.json").unwrap();
    assert_eq!(
        unsafe { pt_model_load(missing.as_ptr(), false, &mut model) },
        PtStatus::Io
    );
    assert!(model.is_null());
    assert_eq!(
        unsafe { pt_model_load(ptr::null(), false, &mut model) },
        PtStatus::NullArgument
    );
    assert!(last_error().contains("path"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "{not json").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { pt_model_load(junk.as_ptr(), false, &mut model) },
        PtStatus::Parse
    );

    let bad_utf8 = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { pt_model_load(bad_utf8.as_ptr().cast(), false, &mut model) },
        PtStatus::InvalidUtf8
    );
    assert_eq!(unsafe { pt_model_width(ptr::null()) }, 0);
    unsafe { pt_model_free(ptr::null_mut()) };
}

#[test]
fn embedding_set_coherence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vectors.tsv");
    std::fs::write(
        &path,
        "a\t0\t1\t0\na\t1\t1\t0\nb\t0\t1\t0\nb\t1\t0\t1\nc\t0\t3\t4\n",
    )
    .unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut set: *mut PtEmbeddingSet = ptr::null_mut();
    assert_eq!(
        unsafe { pt_embedding_set_load(cpath.as_ptr(), &mut set) },
        PtStatus::Ok
    );
    assert_eq!(unsafe { pt_embedding_set_group_count(set) }, 2);
    let mut total = f64::NAN;
    assert_eq!(
        unsafe { pt_embedding_set_p_coherence_total(set, &mut total) },
        PtStatus::Ok
    );
    assert!((total - 0.5).abs() < 1e-12);
    assert_eq!(
        unsafe { pt_embedding_set_p_coherence_total(set, ptr::null_mut()) },
        PtStatus::NullArgument
    );
    unsafe { pt_embedding_set_free(set) };
}

#[test]
fn metrics_match_the_library() {
    let u = [3.0, 4.0];
    let v = [4.0, 3.0];
    let mut out = 0.0;
    assert_eq!(
        unsafe { pt_pair_score(u.as_ptr(), v.as_ptr(), 2, &mut out) },
        PtStatus::Ok
    );
    assert!((out - 24.0 / 25.0).abs() < 1e-15);

    let zero = [0.0, 0.0];
    assert_eq!(
        unsafe { pt_pair_score(u.as_ptr(), zero.as_ptr(), 2, &mut out) },
        PtStatus::InvalidInput
    );

    let x = [1.0, 2.0, 3.0, 4.0];
    let y = [2.0, 1.0, 4.0, 3.0];
    assert_eq!(
        unsafe { pt_pearson(x.as_ptr(), y.as_ptr(), 4, &mut out) },
        PtStatus::Ok
    );
    assert_eq!(out, pearson(&x, &y).unwrap());
    let flat = [1.0; 4];
    assert_ne!(
        unsafe { pt_pearson(x.as_ptr(), flat.as_ptr(), 4, &mut out) },
        PtStatus::Ok
    );
}

#[test]
fn sts_target_distribution() {
    let mut d = [0.0; 5];
    assert_eq!(unsafe { pt_sts_target(3.7, d.as_mut_ptr()) }, PtStatus::Ok);
    let expected = [0.0, 0.0, 0.3, 0.7, 0.0];
    for (a, b) in d.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(unsafe { pt_sts_target(5.0, d.as_mut_ptr()) }, PtStatus::Ok);
    assert_eq!(d, [0.0, 0.0, 0.0, 0.0, 1.0]);
    assert_eq!(
        unsafe { pt_sts_target(5.5, d.as_mut_ptr()) },
        PtStatus::InvalidInput
    );
    assert_eq!(
        unsafe { pt_sts_target(1.0, ptr::null_mut()) },
        PtStatus::NullArgument
    );
}

#[test]
fn header_is_current() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pthought.h"))
            .unwrap();
    for name in [
        "pt_last_error_message",
        "pt_model_load",
        "pt_model_free",
        "pt_model_width",
        "pt_model_embed",
        "pt_embedding_set_load",
        "pt_embedding_set_group_count",
        "pt_embedding_set_p_coherence_total",
        "pt_embedding_set_free",
        "pt_pair_score",
        "pt_pearson",
        "pt_sts_target",
    ] {
        assert!(
            header.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    assert!(header.contains("typedef struct PtModel PtModel;"));
    assert!(header.contains("PT_STATUS_BUFFER_TOO_SMALL = 8"));
}
