use std::ffi::{CStr, CString};
use std::ptr;

use mtl_wavenet::corpus::{generate_utterance, CorpusSpec};
use mtl_wavenet::inference::{synthesize_utterance, SamplerConfig};
use mtl_wavenet::model::{ConditionMode, FeatureNormalizer, ModelConfig, MtlWaveNet};
use mtl_wavenet_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mtwn_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn saved_model(mode: ConditionMode, dir: &std::path::Path) -> (CString, MtlWaveNet) {
    let spec = CorpusSpec {
        n_utterances: 2,
        n_test: 0,
        min_frames: 6,
        max_frames: 8,
        ..CorpusSpec::default()
    };
    let utts: Vec<_> = (0..2).map(|i| generate_utterance(&spec, i).unwrap()).collect();
    let mut m = MtlWaveNet::new(
        &ModelConfig::tiny(),
        mode,
        spec.linguistic_dim(),
        80,
        FeatureNormalizer::fit(&utts).unwrap(),
        5,
    )
    .unwrap();
    // Non-zero output layer so synthesis is not uniform noise.
    for id in m.params.ids().collect::<Vec<_>>() {
        if m.params.name(id).starts_with("wavenet.out2") {
            for (k, v) in m.params.get_mut(id).data_mut().iter_mut().enumerate() {
                *v = ((k * 7919) % 13) as f64 * 0.05 - 0.3;
            }
        }
    }
    let path = dir.join(format!("{}.mtwn", mode.as_str().replace('+', "_")));
    m.save(&path, serde_json::json!({"kind": "model"})).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), m)
}

#[test]
fn load_info_synthesize_free() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model) = saved_model(ConditionMode::Mtl, dir.path());
    let mut h: *mut MtwnModel = ptr::null_mut();
    assert_eq!(unsafe { mtwn_model_load(path.as_ptr(), &mut h) }, MtwnStatus::Ok);
    assert!(!h.is_null());

    let mut info = MtwnModelInfo {
        mode: MtwnMode::Linguistic,
        linguistic_dim: 0,
        frame_shift: 0,
        receptive_field: 0,
    };
    assert_eq!(unsafe { mtwn_model_info(h, &mut info) }, MtwnStatus::Ok);
    assert_eq!(info.mode, MtwnMode::Mtl);
    assert_eq!(
        (info.linguistic_dim, info.frame_shift, info.receptive_field),
        (11, 80, 8)
    );

    let spec = CorpusSpec {
        min_frames: 6,
        max_frames: 8,
        ..CorpusSpec::default()
    };
    let utt = generate_utterance(&spec, 0).unwrap();
    let frames = utt.num_frames();
    let sampler = MtwnSampler {
        argmax: 0,
        temperature: 1.0,
        seed: 42,
    };
    let mut needed = 0usize;
    let st = unsafe {
        mtwn_synthesize(
            h,
            utt.linguistic.data().as_ptr(),
            frames,
            ptr::null(),
            ptr::null(),
            &sampler,
            16000,
            ptr::null_mut(),
            0,
            &mut needed,
        )
    };
    assert_eq!(st, MtwnStatus::BufferTooSmall);
    assert_eq!(needed, frames * 80);
    assert!(last_error().contains("capacity"));

    let mut out = vec![0.0; needed];
    let mut len = 0usize;
    let st = unsafe {
        mtwn_synthesize(
            h,
            utt.linguistic.data().as_ptr(),
            frames,
            ptr::null(),
            ptr::null(),
            &sampler,
            16000,
            out.as_mut_ptr(),
            out.len(),
            &mut len,
        )
    };
    assert_eq!(st, MtwnStatus::Ok, "{}", last_error());
    assert_eq!(len, needed);
    assert!(last_error().is_empty());

    let direct = synthesize_utterance(
        &model,
        &utt,
        &SamplerConfig {
            seed: 42,
            ..SamplerConfig::default()
        },
        false,
    )
    .unwrap();
    assert_eq!(out, direct.waveform.samples);
    unsafe { mtwn_model_free(h) };
}

#[test]
fn f0_model_requires_f0_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = saved_model(ConditionMode::LinguisticPlusF0, dir.path());
    let mut h: *mut MtwnModel = ptr::null_mut();
    assert_eq!(unsafe { mtwn_model_load(path.as_ptr(), &mut h) }, MtwnStatus::Ok);
    let ling = vec![0.0; 11 * 3];
    let sampler = MtwnSampler {
        argmax: 1,
        temperature: 1.0,
        seed: 0,
    };
    let mut out = vec![0.0; 240];
    let mut len = 0;
    let st = unsafe {
        mtwn_synthesize(
            h,
            ling.as_ptr(),
            3,
            ptr::null(),
            ptr::null(),
            &sampler,
            16000,
            out.as_mut_ptr(),
            240,
            &mut len,
        )
    };
    assert_eq!(st, MtwnStatus::InvalidArgument);
    assert!(last_error().contains("F0"));
    let logf0 = [5.0f64.ln(), 0.0, 5.0f64.ln()];
    let vuv = [1.0, 0.0, 1.0];
    let st = unsafe {
        mtwn_synthesize(
            h,
            ling.as_ptr(),
            3,
            logf0.as_ptr(),
            vuv.as_ptr(),
            &sampler,
            16000,
            out.as_mut_ptr(),
            240,
            &mut len,
        )
    };
    assert_eq!(st, MtwnStatus::Ok, "{}", last_error());
    unsafe { mtwn_model_free(h) };
}

#[test]
fn errors_map_to_codes() {
    let mut h: *mut MtwnModel = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.mtwn").unwrap();
    assert_eq!(unsafe { mtwn_model_load(missing.as_ptr(), &mut h) }, MtwnStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("/nonexistent/model.mtwn"));
    assert_eq!(unsafe { mtwn_model_load(ptr::null(), &mut h) }, MtwnStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.mtwn");
    std::fs::write(&junk, b"not a container").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { mtwn_model_load(junk.as_ptr(), &mut h) }, MtwnStatus::Format);

    let mut info = std::mem::MaybeUninit::<MtwnModelInfo>::uninit();
    assert_eq!(
        unsafe { mtwn_model_info(ptr::null(), info.as_mut_ptr()) },
        MtwnStatus::NullPointer
    );
    unsafe { mtwn_model_free(ptr::null_mut()) };
}

#[test]
fn codec_entry_points() {
    let mut b = 0u8;
    assert_eq!(unsafe { mtwn_mulaw_encode(-1.0, &mut b) }, MtwnStatus::Ok);
    assert_eq!(b, 0);
    assert_eq!(unsafe { mtwn_mulaw_encode(1.0, &mut b) }, MtwnStatus::Ok);
    assert_eq!(b, 255);
    assert_eq!(unsafe { mtwn_mulaw_encode(f64::NAN, &mut b) }, MtwnStatus::Numeric);
    for bin in 0..256u32 {
        let mut x = 0.0;
        assert_eq!(unsafe { mtwn_mulaw_decode(bin, &mut x) }, MtwnStatus::Ok);
        assert_eq!(unsafe { mtwn_mulaw_encode(x, &mut b) }, MtwnStatus::Ok);
        assert_eq!(u32::from(b), bin);
    }
    let mut x = 0.0;
    assert_eq!(unsafe { mtwn_mulaw_decode(256, &mut x) }, MtwnStatus::Dimension);
    assert_eq!(
        unsafe { mtwn_mulaw_encode(0.0, ptr::null_mut()) },
        MtwnStatus::NullPointer
    );
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mtl_wavenet.h")).unwrap();
    for f in [
        "mtwn_last_error",
        "mtwn_version",
        "mtwn_model_load",
        "mtwn_model_free",
        "mtwn_model_info",
        "mtwn_synthesize",
        "mtwn_mulaw_encode",
        "mtwn_mulaw_decode",
        "typedef struct MtwnModel MtwnModel",
        "MTWN_STATUS_BUFFER_TOO_SMALL = 7",
    ] {
        assert!(header.contains(f), "header lacks {f}");
    }
    let v = unsafe { CStr::from_ptr(mtwn_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
