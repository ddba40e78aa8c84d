use std::path::Path;

use vidtext::formats::{
    decode_checkpoint, encode_checkpoint, load_embeddings, load_relevance, manifest_path, save_embeddings,
    save_relevance, NamedTensor, EMBEDDING_MAGIC, RELEVANCE_MAGIC,
};
use vidtext::numerics::Matrix;
use vidtext::objective::RelevanceMatrix;
use vidtext::retrieval::EmbeddingMatrix;
use vidtext::Error;

#[test]
fn embedding_file_layout_is_little_endian() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.bin");
    let m = Matrix::new(2, 3, vec![1.0f32, -2.0, 0.5, f32::MAX, -0.0, 3.25]).unwrap();
    save_embeddings(&p, &EmbeddingMatrix::new(vec!["a".into(), "b c".into()], m.clone()).unwrap()).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..8], EMBEDDING_MAGIC);
    assert_eq!(&bytes[..8], b"TRETEMB1");
    assert_eq!(bytes[8..12], 1u32.to_le_bytes());
    assert_eq!(bytes[12..20], 2u64.to_le_bytes());
    assert_eq!(bytes[20..28], 3u64.to_le_bytes());
    let payload: Vec<u8> = m.as_slice().iter().flat_map(|x| x.to_le_bytes()).collect();
    assert_eq!(&bytes[28..], &payload[..]);
    assert_eq!(std::fs::read_to_string(manifest_path(&p)).unwrap(), "0\ta\n1\tb c\n");
}

#[test]
fn relevance_uses_its_own_magic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.bin");
    let r = RelevanceMatrix::new(Matrix::new(1, 2, vec![0.25f32, 1.0]).unwrap()).unwrap();
    save_relevance(&p, &r).unwrap();
    assert_eq!(&std::fs::read(&p).unwrap()[..8], RELEVANCE_MAGIC);
    assert_eq!(load_relevance::<f32>(&p).unwrap().data(), r.data());
    assert!(matches!(load_embeddings::<f32>(&p), Err(Error::BadMagic { .. }) | Err(Error::Io { .. })));
}

#[test]
fn f64_values_round_to_f32_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.bin");
    let m = Matrix::new(1, 2, vec![0.1f64, 1.0 / 3.0]).unwrap();
    save_embeddings(&p, &EmbeddingMatrix::with_index_ids(m).unwrap()).unwrap();
    let back: EmbeddingMatrix<f64> = load_embeddings(&p).unwrap();
    assert_eq!(back.data().as_slice(), &[0.1f32 as f64, (1.0f32 / 3.0) as f64]);
}

#[test]
fn manifest_must_match_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.bin");
    save_embeddings(&p, &EmbeddingMatrix::with_index_ids(Matrix::<f32>::zeros(3, 2)).unwrap()).unwrap();
    std::fs::write(manifest_path(&p), "0\tx\n1\ty\n").unwrap();
    assert!(load_embeddings::<f32>(&p).is_err());
    std::fs::remove_file(manifest_path(&p)).unwrap();
    assert!(matches!(load_embeddings::<f32>(&p), Err(Error::Io { .. })));
}

#[test]
fn checkpoint_container_round_trips_and_rejects_damage() {
    let tensors = vec![
        NamedTensor {
            name: "w".into(),
            shape: (2, 2),
            data: vec![1.0, 2.0, f32::NAN, -0.0],
        },
        NamedTensor {
            name: "b".into(),
            shape: (1, 1),
            data: vec![3.0],
        },
    ];
    let bytes = encode_checkpoint("a = 1\n", &tensors);
    assert_eq!(&bytes[..8], b"TRETCKP1");
    let (meta, back) = decode_checkpoint(Path::new("c"), &bytes).unwrap();
    assert_eq!(meta, "a = 1\n");
    assert_eq!(back.len(), 2);
    assert_eq!(back[0].data[2].to_bits(), f32::NAN.to_bits());
    assert_eq!(back[0].data[3].to_bits(), (-0.0f32).to_bits());

    assert!(matches!(decode_checkpoint(Path::new("c"), &bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
    let mut v = bytes.clone();
    v[8] = 9;
    assert!(matches!(decode_checkpoint(Path::new("c"), &v), Err(Error::UnsupportedVersion { .. })));
    let mut extra = bytes;
    extra.push(0);
    assert!(matches!(decode_checkpoint(Path::new("c"), &extra), Err(Error::Malformed { .. })));
    assert!(matches!(decode_checkpoint(Path::new("c"), b"TRE"), Err(Error::BadMagic { .. })));
}
