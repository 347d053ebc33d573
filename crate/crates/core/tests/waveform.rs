use mccdma::codes::walsh_hadamard_set;
use mccdma::linalg::complex_gaussian;
use mccdma::waveform::{despread, map_symbols, spread_symbol, Modem, ModulationScheme};
use mccdma::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_column(seed: u64, n: usize) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| complex_gaussian(&mut rng, 1.0)).collect()
}

fn size_and_cp() -> impl Strategy<Value = (usize, usize)> {
    prop::sample::select(vec![8usize, 16, 64, 256])
        .prop_flat_map(|n| (Just(n), prop::sample::select(vec![0, n / 8, n / 4])))
}

proptest! {
    #[test]
    fn roundtrip_is_identity((n, cp) in size_and_cp(), seed in any::<u64>()) {
        let modem = Modem::new(n, cp).unwrap();
        let x = random_column(seed, n);
        let y = modem.demodulate(&modem.modulate(&x).unwrap(), n).unwrap();
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn prefix_copies_the_tail((n, cp) in size_and_cp(), seed in any::<u64>()) {
        let s = Modem::new(n, cp).unwrap().modulate(&random_column(seed, n)).unwrap();
        prop_assert_eq!(s.len(), n + cp);
        prop_assert_eq!(&s[..cp], &s[n..]);
    }

    #[test]
    fn unitary_transform_keeps_energy((n, cp) in size_and_cp(), seed in any::<u64>()) {
        let x = random_column(seed, n);
        let s = Modem::new(n, cp).unwrap().modulate(&x).unwrap();
        let ex: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let es: f64 = s[cp..].iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((ex - es).abs() < 1e-9 * ex.max(1.0));
    }

    #[test]
    fn partial_load_zero_pads(seed in any::<u64>(), n_sc in 1usize..64) {
        let modem = Modem::new(64, 8).unwrap();
        let x = random_column(seed, n_sc);
        let back = modem.demodulate(&modem.modulate(&x).unwrap(), 64).unwrap();
        for (k, z) in back.iter().enumerate() {
            let want = if k < n_sc { x[k] } else { Complex64::new(0.0, 0.0) };
            prop_assert!((z - want).norm() < 1e-12);
        }
    }

    #[test]
    fn spread_then_despread_recovers_each_user(
        bits in prop::collection::vec(0u8..2, 16),
        scale in 0.1f64..10.0,
    ) {
        let codes = walsh_hadamard_set(8).unwrap();
        let symbols = map_symbols(&bits, ModulationScheme::Qpsk).unwrap();
        let mut chips = vec![Complex64::new(0.0, 0.0); 8];
        for (s, code) in symbols.iter().zip(&codes) {
            for (c, v) in chips.iter_mut().zip(spread_symbol(*s, code)) {
                *c += v * scale;
            }
        }
        let ones = vec![Complex64::new(1.0, 0.0); 8];
        let gains = vec![Complex64::new(scale, 0.0); 8];
        for (s, code) in symbols.iter().zip(&codes) {
            let x = despread(&chips, code, &ones, &gains).unwrap();
            prop_assert!((x - s).norm() < 1e-12);
        }
    }
}

#[test]
fn demap_inverts_map_for_both_schemes() {
    let bits: Vec<u8> = (0..64).map(|i| ((i * 7) % 3 % 2) as u8).collect();
    for scheme in [ModulationScheme::Bpsk, ModulationScheme::Qpsk] {
        let symbols = map_symbols(&bits, scheme).unwrap();
        assert_eq!(symbols.len(), 64 / scheme.bits_per_symbol());
        assert_eq!(scheme.demap(&symbols), bits);
        for s in &symbols {
            assert!((s.norm() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn modem_rejects_bad_geometry() {
    assert!(Modem::new(0, 0).is_err());
    assert!(Modem::new(16, 16).is_err());
    let modem = Modem::new(16, 2).unwrap();
    assert!(modem.modulate(&vec![Complex64::new(1.0, 0.0); 17]).is_err());
    assert!(modem
        .demodulate(&vec![Complex64::new(0.0, 0.0); 17], 16)
        .is_err());
}
