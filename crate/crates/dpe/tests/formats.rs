use dpe::tensor_file::{TensorFile, TensorFileError, MAGIC};
use proptest::prelude::*;

fn tensor() -> impl Strategy<Value = TensorFile> {
    prop::collection::vec(0u32..5, 0..4).prop_flat_map(|dims| {
        let n = dims.iter().product::<u32>() as usize;
        prop::collection::vec(any::<u32>().prop_map(f32::from_bits), n)
            .prop_map(move |data| TensorFile::new(dims.clone(), data).unwrap())
    })
}

fn bits(t: &TensorFile) -> Vec<u32> {
    t.data.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn layout_is_little_endian() {
    let t = TensorFile::new(vec![2], vec![1.0, -2.0]).unwrap();
    let b = t.to_bytes();
    assert_eq!(&b[..5], MAGIC);
    assert_eq!(&b[5..9], &1u32.to_le_bytes());
    assert_eq!(&b[9..13], &2u32.to_le_bytes());
    assert_eq!(&b[13..17], &1.0f32.to_le_bytes());
    assert_eq!(&b[17..21], &(-2.0f32).to_le_bytes());
    assert_eq!(&b[21..], &crc32fast::hash(&b[..21]).to_le_bytes());
}

proptest! {
    #[test]
    fn round_trip_is_bit_exact(t in tensor()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dpet");
        t.write(&path).unwrap();
        let back = TensorFile::read(&path).unwrap();
        prop_assert_eq!(&back.dims, &t.dims);
        prop_assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn any_corrupted_byte_is_rejected(t in tensor(), pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let mut bytes = t.to_bytes();
        let i = pos.index(bytes.len());
        bytes[i] ^= flip;
        prop_assert!(TensorFile::from_bytes(&bytes).is_err());
    }

    #[test]
    fn corrupted_payload_or_checksum_fails_the_crc(t in tensor(), pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let mut bytes = t.to_bytes();
        let header = 5 + 4 * (1 + t.dims.len());
        let i = header + pos.index(bytes.len() - header);
        bytes[i] ^= flip;
        let checksum = matches!(TensorFile::from_bytes(&bytes), Err(TensorFileError::Checksum { .. }));
        prop_assert!(checksum);
    }

    #[test]
    fn truncation_and_trailing_bytes_are_rejected(t in tensor(), cut in any::<prop::sample::Index>()) {
        let bytes = t.to_bytes();
        let n = cut.index(bytes.len());
        prop_assert!(TensorFile::from_bytes(&bytes[..n]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        let trailing = matches!(TensorFile::from_bytes(&longer), Err(TensorFileError::Trailing(1)));
        prop_assert!(trailing);
    }
}
