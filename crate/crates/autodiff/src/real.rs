use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Scalar type the tensor core is generic over. f32 is the training default,
/// f64 exists to make finite-difference gradient checks tight.
pub trait Real:
    Float + NumAssign + FromPrimitive + Sum + Send + Sync + Debug + Display + Default + 'static
{
    /// Short name used by checkpoint manifests ("f32" / "f64").
    const NAME: &'static str;

    #[inline]
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("Real converts to f64")
    }

    /// exp() tuned for the activation hot loop. The f32 override trades the
    /// libm call for a branchless polynomial accurate to a few ulp, which the
    /// vectorizer can keep inside the SIMD loop.
    #[inline]
    fn fast_exp(self) -> Self {
        self.exp()
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn fast_exp(self) -> Self {
        exp_f32(self)
    }
}

/// Cephes-style expf: exp(x) = 2^k * exp(r) with r = x - k*ln2 split in two
/// steps for precision and exp(r) approximated by a degree-6 polynomial.
#[inline]
pub(crate) fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_375;
    const LN2_LO: f32 = -2.121_944_4e-4;
    // Below/above these the result saturates to 0 / +inf in f32 anyway.
    let x = x.clamp(-87.336_544, 88.722_839);

    let k = (x * LOG2E).round();
    let r = k.mul_add(-LN2_HI, x);
    let r = k.mul_add(-LN2_LO, r);

    // exp(r) on r in [-ln2/2, ln2/2], Horner form.
    let mut p = 1.987_569_1e-4_f32;
    p = p.mul_add(r, 1.398_199_9e-3);
    p = p.mul_add(r, 8.333_452e-3);
    p = p.mul_add(r, 4.166_579_5e-2);
    p = p.mul_add(r, 1.666_666_6e-1);
    p = p.mul_add(r, 0.5);
    p = p.mul_add(r * r, r) + 1.0;

    // 2^k via exponent-field assembly; k is within [-127, 128] after clamp.
    let two_k = f32::from_bits((((k as i32) + 127) as u32) << 23);
    p * two_k
}
