use ctxseg_data::netpbm::{read_pgm, read_ppm, write_pgm, write_ppm, GrayImage, RgbImage};
use proptest::prelude::*;

proptest! {
    #[test]
    fn ppm_round_trip_is_byte_exact(
        w in 1u32..20,
        h in 1u32..20,
        seed in any::<u64>(),
    ) {
        let mut rng = ctxseg_core::Rng::new(seed, 0);
        let mut img = RgbImage::new(w, h);
        for v in img.data.iter_mut() {
            *v = rng.below(256) as u8;
        }
        let bytes = write_ppm(&img);
        let back = read_ppm(&bytes).unwrap();
        prop_assert_eq!(&back, &img);
        prop_assert_eq!(write_ppm(&back), bytes);
    }

    #[test]
    fn pgm_round_trip_is_byte_exact(
        w in 1u32..20,
        h in 1u32..20,
        seed in any::<u64>(),
    ) {
        let mut rng = ctxseg_core::Rng::new(seed, 1);
        let mut img = GrayImage::new(w, h);
        for v in img.data.iter_mut() {
            *v = rng.below(256) as u8;
        }
        let bytes = write_pgm(&img);
        let back = read_pgm(&bytes).unwrap();
        prop_assert_eq!(&back, &img);
        prop_assert_eq!(write_pgm(&back), bytes);
    }
}
