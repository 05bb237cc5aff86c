//! Reference computations kept independent of the library's filter code.
#![allow(dead_code)]

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use proptest::prelude::*;
use trust_dynamics::ModelParameters;

/// Conditions the joint Gaussian over `(T, y)` on `y` by forming the dense
/// 4×4 covariance and inverting its observation block directly.
pub fn conditioning_oracle(
    params: &ModelParameters,
    prior_mean: f64,
    prior_var: f64,
    y: [f64; 3],
) -> (f64, f64) {
    let c = Vector3::from(params.c);
    let mut joint = Matrix4::<f64>::zeros();
    joint[(0, 0)] = prior_var;
    for i in 0..3 {
        joint[(0, i + 1)] = prior_var * c[i];
        joint[(i + 1, 0)] = prior_var * c[i];
        for j in 0..3 {
            joint[(i + 1, j + 1)] =
                prior_var * c[i] * c[j] + if i == j { params.r[i] } else { 0.0 };
        }
    }
    let mean = Vector4::new(
        prior_mean,
        c[0] * prior_mean,
        c[1] * prior_mean,
        c[2] * prior_mean,
    );

    let syy: Matrix3<f64> = joint.fixed_view::<3, 3>(1, 1).into_owned();
    let sty = joint.fixed_view::<1, 3>(0, 1).into_owned();
    let lu = syy.lu();
    let dy = Vector3::from(y) - mean.fixed_rows::<3>(1);
    let weights = lu.solve(&dy).expect("observation block invertible");
    let gain_t = lu
        .solve(&sty.transpose())
        .expect("observation block invertible");
    let post_mean = mean[0] + (sty * weights)[(0, 0)];
    let post_var = joint[(0, 0)] - (sty * gain_t)[(0, 0)];
    (post_mean, post_var)
}

/// Plain matrix-form Riccati recursion on the predicted variance, starting
/// from `p0` and run for exactly `iterations` steps.
pub fn brute_force_riccati(params: &ModelParameters, p0: f64, iterations: usize) -> f64 {
    let c = Vector3::from(params.c);
    let r = Matrix3::from_diagonal(&Vector3::from(params.r));
    let mut p = p0;
    for _ in 0..iterations {
        let s = c * c.transpose() * p + r;
        let s_inv = s.try_inverse().expect("innovation covariance invertible");
        let posterior = p - (c.transpose() * s_inv * c)[(0, 0)] * p * p;
        p = params.a * params.a * posterior + params.q;
    }
    p
}

/// Random parameters valid for estimation, spanning a few orders of magnitude.
pub fn arb_params() -> impl Strategy<Value = ModelParameters> {
    (
        0.5f64..1.2,
        prop::array::uniform3(-2.0f64..2.0),
        prop::array::uniform3(1e-3f64..0.5),
        0.0f64..2.0,
        prop::array::uniform3(1e-3f64..1.0),
    )
        .prop_map(|(a, b, c, q, r)| ModelParameters {
            a,
            b,
            c,
            q,
            r,
            sem: None,
        })
}
