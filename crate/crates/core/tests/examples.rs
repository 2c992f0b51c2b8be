//! Every example runs to completion.

macro_rules! example {
    ($name:ident) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", stringify!($name), ".rs"));
        }

        #[test]
        fn $name() {
            $name::run().unwrap();
        }
    };
}

example!(white_equivalence);
example!(localization_born);
example!(imaginary_unitary);
example!(ou_nonmarkovian);
example!(rex_phase_scan);
example!(noise_fidelity);
example!(furutsu_novikov);
example!(convergence);
example!(norm_conservation);
example!(scenario_run);
