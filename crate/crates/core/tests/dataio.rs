use std::fs;
use std::path::Path;

use hire::dataio::{
    load_dataset, read_payload, synth_write, write_dataset, write_payload, DatasetManifest, Dims, SynthConfig,
    BOXES_FILE, EDGES_FILE, IMAGES_FILE, MANIFEST_FILE, SENTENCES_FILE,
};
use hire::HireError;
use sha2::{Digest, Sha256};

const FILES: [&str; 5] = [MANIFEST_FILE, IMAGES_FILE, BOXES_FILE, EDGES_FILE, SENTENCES_FILE];

/// SHA-256 over the files of `train/` then `val/`, in `FILES` order.
fn checksum(root: &Path) -> String {
    let mut h = Sha256::new();
    for split in ["train", "val"] {
        for f in FILES {
            h.update(fs::read(root.join(split).join(f)).unwrap());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn manifest(dir: &Path) -> DatasetManifest {
    serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
}

fn save_manifest(dir: &Path, m: &DatasetManifest) {
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(m).unwrap()).unwrap();
}

#[test]
fn pinned_seed_7_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_write(&SynthConfig::new(7, 32, 1, Dims::TOY), dir.path()).unwrap();
    assert_eq!(data.train.images.len(), 32);
    assert_eq!(data.train.sentences.len(), 32);
    assert_eq!(checksum(dir.path()), "3c8bb33ca39ca722c91120029b35c8362eb7fd3340308f4dff3caee1cc73c900");
}

#[test]
fn write_then_load_is_bitwise_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_write(&SynthConfig::new(3, 9, 5, Dims::TOY), dir.path()).unwrap();
    for (split, ds) in [("train", &data.train), ("val", &data.val)] {
        let back = load_dataset(&dir.path().join(split)).unwrap();
        assert_eq!(&back, ds);
        for (a, b) in back.images.iter().zip(&ds.images) {
            let bits = |t: &hire::numcore::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.features), bits(&b.features));
        }
        // writing the loaded copy reproduces the same bytes
        let again = tempfile::tempdir().unwrap();
        write_dataset(&back, again.path()).unwrap();
        for f in FILES {
            assert_eq!(fs::read(again.path().join(f)).unwrap(), fs::read(dir.path().join(split).join(f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn dangling_image_link_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    synth_write(&SynthConfig::new(1, 4, 2, Dims::TOY), dir.path()).unwrap();
    let train = dir.path().join("train");
    let mut m = manifest(&train);
    m.sentences[3].image_id = "nowhere".into();
    let sid = m.sentences[3].id.clone();
    save_manifest(&train, &m);
    match load_dataset(&train) {
        Err(HireError::DanglingLink { sentence, image }) => {
            assert_eq!(sentence, sid);
            assert_eq!(image, "nowhere");
        }
        other => panic!("expected a dangling link, got {other:?}"),
    }
}

#[test]
fn manifest_and_payload_dims_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    synth_write(&SynthConfig::new(1, 4, 1, Dims::TOY), dir.path()).unwrap();
    let train = dir.path().join("train");
    let mut m = manifest(&train);
    m.dims.region_dim += 1;
    save_manifest(&train, &m);
    match load_dataset(&train) {
        Err(HireError::DimMismatch { manifest, payload, .. }) => {
            assert_eq!((manifest, payload), (Dims::TOY.region_dim + 1, Dims::TOY.region_dim));
        }
        other => panic!("expected a dim mismatch, got {other:?}"),
    }
}

#[test]
fn corrupt_payloads_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    synth_write(&SynthConfig::new(1, 4, 1, Dims::TOY), dir.path()).unwrap();
    let train = dir.path().join("train");

    let p = train.join(IMAGES_FILE);
    let mut bytes = fs::read(&p).unwrap();
    bytes[0] = b'X';
    fs::write(&p, &bytes).unwrap();
    assert!(matches!(load_dataset(&train), Err(HireError::BadMagic { .. })));

    let q = dir.path().join("short.bin");
    write_payload(&q, &[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut bytes = fs::read(&q).unwrap();
    bytes.truncate(bytes.len() - 2);
    fs::write(&q, &bytes).unwrap();
    assert!(matches!(read_payload(&q), Err(HireError::Dataset(_))));
}

#[test]
fn out_of_range_edges_name_the_image() {
    let dir = tempfile::tempdir().unwrap();
    synth_write(&SynthConfig::new(1, 4, 1, Dims::TOY), dir.path()).unwrap();
    let train = dir.path().join("train");
    let m = manifest(&train);
    write_payload(&train.join(EDGES_FILE), &[1, 3], &[2.0, 0.0, 7.0]).unwrap();
    match load_dataset(&train) {
        Err(HireError::EdgeOutOfRange { image, i, j, k }) => {
            assert_eq!((image.as_str(), i, j, k), (m.images[2].as_str(), 0, 7, Dims::TOY.regions));
        }
        other => panic!("expected an edge range error, got {other:?}"),
    }
}
