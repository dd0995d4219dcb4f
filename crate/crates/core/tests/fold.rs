use asnet_core::fold::{fold, q_of, unfold};
use asnet_core::RawSignalMatrix;
use proptest::prelude::*;

fn signal_from_bits(m: usize, n: usize, bits: &[u32]) -> RawSignalMatrix {
    let data = bits.iter().map(|&b| f32::from_bits(b)).collect();
    RawSignalMatrix::from_vec(m, n, 1.0, data).unwrap()
}

/// Bit patterns of finite floats of either sign, subnormals included.
fn finite_bits() -> impl Strategy<Value = u32> {
    any::<u32>().prop_map(|b| b & 0xff7f_ffff)
}

fn shape_and_bits() -> impl Strategy<Value = (usize, usize, usize, Vec<u32>)> {
    (1usize..=24)
        .prop_flat_map(|side| (Just(side), 1..=side, 1usize..=400))
        .prop_flat_map(|(side, n, m)| {
            (
                Just(side),
                Just(n),
                Just(m),
                prop::collection::vec(finite_bits(), m * n),
            )
        })
}

proptest! {
    #[test]
    fn roundtrip_is_bit_exact((side, n, m, bits) in shape_and_bits()) {
        let s = signal_from_bits(m, n, &bits);
        let f = fold(&s, side, true).unwrap();
        let back = unfold(&f, m, n, 1.0).unwrap();
        let got: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, bits);
    }

    #[test]
    fn channels_are_offset_decimations((side, n, m, bits) in shape_and_bits()) {
        let s = signal_from_bits(m, n, &bits);
        let f = fold(&s, side, true).unwrap();
        #[allow(clippy::manual_div_ceil)] // spelled out as an independent oracle
        let q = (m + side - 1) / side;
        prop_assert_eq!(f.q, q);
        prop_assert_eq!(f.data.len(), q * side * side);
        for k in 0..q {
            for i in 0..side {
                for j in 0..side {
                    let t = i * q + k;
                    let want = if t < m && j < n { bits[t * n + j] } else { 0 };
                    prop_assert_eq!(f.get(k, i, j).to_bits(), want);
                }
            }
        }
    }

    #[test]
    fn energy_is_preserved((side, n, m, raw) in shape_and_bits()) {
        // small integers keep every sum exact
        let data: Vec<f32> = raw.iter().map(|&b| (b % 17) as f32 - 8.0).collect();
        let s = RawSignalMatrix::from_vec(m, n, 1.0, data.clone()).unwrap();
        let f = fold(&s, side, true).unwrap();
        let energy = |v: &[f32]| v.iter().map(|x| x * x).sum::<f32>();
        prop_assert_eq!(energy(&f.data), energy(&data));
    }
}

#[test]
fn six_rows_on_side_two() {
    let s = RawSignalMatrix::from_vec(6, 2, 1.0, (0..12).map(|v| v as f32).collect()).unwrap();
    let f = fold(&s, 2, true).unwrap();
    assert_eq!(f.q, 3);
    // channel k holds rows k and k + 3
    assert_eq!(
        f.data,
        vec![0., 1., 6., 7., 2., 3., 8., 9., 4., 5., 10., 11.]
    );
}

#[test]
fn full_size_shapes() {
    assert_eq!(q_of(1500, 128), 12);
    assert_eq!(q_of(2560, 128), 20);
    assert_eq!(q_of(128, 128), 1);
    let f = fold(&RawSignalMatrix::zeros(1500, 32, 40e6), 128, true).unwrap();
    assert_eq!((f.q, f.pad_time, f.pad_sensors), (12, 36, 96));
}
