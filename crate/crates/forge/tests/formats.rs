use std::fs;

use concept_forge::error::ForgeError;
use concept_forge::npy;
use concept_forge::storeio::{load_store, save_store, ACTIVATIONS, MANIFEST};
use concept_forge_core::store::{ActivationStore, Dtype, ImageEntry, Manifest, Pooling, Tensor};
use concept_forge_core::{Error as CoreError, Matrix};
use proptest::prelude::*;

fn ids(n: usize) -> Vec<ImageEntry> {
    (0..n).map(|i| ImageEntry::new(format!("img{i}"))).collect()
}

fn write_raw(dir: &std::path::Path, npy_bytes: &[u8], manifest: &Manifest) {
    fs::write(dir.join(ACTIVATIONS), npy_bytes).unwrap();
    fs::write(dir.join(MANIFEST), serde_json::to_vec(manifest).unwrap()).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn store_round_trips_bit_exactly(
        m in 1usize..12,
        d in 1usize..9,
        bits in proptest::collection::vec(any::<u64>(), 108),
    ) {
        // arbitrary finite doubles, including subnormals and signed zeros
        let data: Vec<f64> = (0..m * d)
            .map(|i| f64::from_bits(bits[i % bits.len()].rotate_left(i as u32)))
            .map(|v| if v.is_finite() { v } else { -0.0 })
            .collect();
        let store = ActivationStore::from_matrix(Matrix::from_vec(m, d, data).unwrap(), ids(m), "layer:tag", Dtype::F64).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_store(dir.path(), &store).unwrap();
        let back = load_store(dir.path()).unwrap().store;
        prop_assert_eq!(back.layer_name(), "layer:tag");
        prop_assert_eq!(back.images(), store.images());
        let same = back.data().as_slice().iter().zip(store.data().as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }
}

#[test]
fn float32_files_widen_exactly() {
    let vals: Vec<f32> = vec![0.1, -3.5, 1e-30, 7.0, f32::MAX, 2.5];
    let mut bytes = b"\x93NUMPY\x01\x00".to_vec();
    let header = "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }";
    bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for v in &vals {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let dir = tempfile::tempdir().unwrap();
    write_raw(
        dir.path(),
        &bytes,
        &Manifest::new("l", Pooling::PrePooled, ids(2)),
    );
    let s = load_store(dir.path()).unwrap().store;
    assert_eq!(s.dtype(), Dtype::F32);
    for (a, b) in s.data().as_slice().iter().zip(&vals) {
        assert_eq!(*a, *b as f64);
    }
}

#[test]
fn spatial_store_is_pooled_on_load() {
    let t = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0], Dtype::F64).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_raw(
        dir.path(),
        &npy::encode(t.shape(), t.data()),
        &Manifest::new("l", Pooling::Spatial, ids(1)),
    );
    let s = load_store(dir.path()).unwrap().store;
    assert_eq!(s.data().as_slice(), &[2.5]);
}

#[test]
fn load_errors_are_classified() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let two_d = npy::encode(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);

    // no manifest: input error naming the file
    fs::write(p.join(ACTIVATIONS), &two_d).unwrap();
    let e = load_store(p).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains(MANIFEST), "{e}");

    write_raw(p, &two_d, &Manifest::new("l", Pooling::PrePooled, ids(3)));
    let e = load_store(p).unwrap_err();
    assert!(matches!(
        e,
        ForgeError::Core(CoreError::ManifestMismatch(_))
    ));
    assert_eq!(e.exit_code(), 3);

    let four_d = npy::encode(&[2, 1, 1, 2], &[1.0; 4]);
    write_raw(p, &four_d, &Manifest::new("l", Pooling::PrePooled, ids(2)));
    assert!(matches!(
        load_store(p),
        Err(ForgeError::Core(CoreError::ManifestMismatch(_)))
    ));

    write_raw(
        p,
        &npy::encode(&[2, 2], &[1.0, f64::NAN, 0.0, 0.0]),
        &Manifest::new("l", Pooling::PrePooled, ids(2)),
    );
    let e = load_store(p).unwrap_err();
    assert!(matches!(e, ForgeError::Core(CoreError::Data(_))));
    assert_eq!(e.exit_code(), 3);

    let mut m = Manifest::new("l", Pooling::PrePooled, ids(2));
    m.images[1].thumb = Some("/etc/passwd".into());
    write_raw(p, &two_d, &m);
    assert_eq!(load_store(p).unwrap_err().exit_code(), 3);

    let mut bad = two_d.clone();
    bad[0] = 0;
    write_raw(p, &bad, &Manifest::new("l", Pooling::PrePooled, ids(2)));
    assert!(matches!(load_store(p), Err(ForgeError::Format(_))));

    fs::write(p.join(MANIFEST), b"{not json").unwrap();
    assert_eq!(load_store(p).unwrap_err().exit_code(), 2);
}

#[test]
fn manifest_json_layout() {
    let text = r#"{"layer_name": "Mixed_7b:post-relu", "pooling": "spatial",
        "images": [{"id": "a", "thumb": "thumbs/a.jpg", "label": "dog"}, {"id": "b", "thumb": null, "label": null}]}"#;
    let m: Manifest = serde_json::from_str(text).unwrap();
    assert_eq!(m.pooling, Pooling::Spatial);
    assert_eq!(m.images[0].thumb.as_deref(), Some("thumbs/a.jpg"));
    assert_eq!(m.images[1].label, None);
    let out = serde_json::to_value(&m).unwrap();
    assert_eq!(out["pooling"], "spatial");
    assert_eq!(out["images"][1]["thumb"], serde_json::Value::Null);
}
