//! Prime-order groups for the base OT.

use rand::{CryptoRng, RngCore};

use super::OtError;

pub trait Group {
    type Scalar;
    type Element: Copy + PartialEq;
    const ELEMENT_LEN: usize;

    fn random_scalar<R: RngCore + CryptoRng>(rng: &mut R) -> Self::Scalar;
    fn base_mul(s: &Self::Scalar) -> Self::Element;
    fn mul(e: &Self::Element, s: &Self::Scalar) -> Self::Element;
    fn add(a: &Self::Element, b: &Self::Element) -> Self::Element;
    fn sub(a: &Self::Element, b: &Self::Element) -> Self::Element;
    fn is_identity(e: &Self::Element) -> bool;
    fn encode(e: &Self::Element) -> Vec<u8>;
    /// Rejects encodings of anything outside the prime-order group.
    fn decode(b: &[u8]) -> Result<Self::Element, OtError>;
}

/// Ristretto255.
pub struct Ristretto;

impl Group for Ristretto {
    type Scalar = curve25519_dalek::Scalar;
    type Element = curve25519_dalek::RistrettoPoint;
    const ELEMENT_LEN: usize = 32;

    fn random_scalar<R: RngCore + CryptoRng>(rng: &mut R) -> Self::Scalar {
        curve25519_dalek::Scalar::random(rng)
    }

    fn base_mul(s: &Self::Scalar) -> Self::Element {
        curve25519_dalek::RistrettoPoint::mul_base(s)
    }

    fn mul(e: &Self::Element, s: &Self::Scalar) -> Self::Element {
        e * s
    }

    fn add(a: &Self::Element, b: &Self::Element) -> Self::Element {
        a + b
    }

    fn sub(a: &Self::Element, b: &Self::Element) -> Self::Element {
        a - b
    }

    fn is_identity(e: &Self::Element) -> bool {
        use curve25519_dalek::traits::Identity;
        *e == curve25519_dalek::RistrettoPoint::identity()
    }

    fn encode(e: &Self::Element) -> Vec<u8> {
        e.compress().to_bytes().to_vec()
    }

    fn decode(b: &[u8]) -> Result<Self::Element, OtError> {
        curve25519_dalek::ristretto::CompressedRistretto::from_slice(b)
            .ok()
            .and_then(|c| c.decompress())
            .ok_or(OtError::BadElement)
    }
}

/// Quadratic residues modulo the safe prime `P = 2Q + 1`, order `Q`.
/// Sixty-two bits: fast and trivially breakable, for tests only.
#[cfg(feature = "insecure-test-group")]
pub struct Schnorr;

#[cfg(feature = "insecure-test-group")]
impl Schnorr {
    pub const P: u64 = 4_611_686_018_427_377_339;
    pub const Q: u64 = 2_305_843_009_213_688_669;
    pub const G: u64 = 4;

    fn mulmod(a: u64, b: u64, m: u64) -> u64 {
        ((a as u128 * b as u128) % m as u128) as u64
    }

    pub fn pow(mut b: u64, mut e: u64) -> u64 {
        let mut r = 1;
        b %= Self::P;
        while e > 0 {
            if e & 1 == 1 {
                r = Self::mulmod(r, b, Self::P);
            }
            b = Self::mulmod(b, b, Self::P);
            e >>= 1;
        }
        r
    }
}

#[cfg(feature = "insecure-test-group")]
impl Group for Schnorr {
    type Scalar = u64;
    type Element = u64;
    const ELEMENT_LEN: usize = 8;

    fn random_scalar<R: RngCore + CryptoRng>(rng: &mut R) -> u64 {
        use rand::Rng;
        rng.gen_range(1..Self::Q)
    }

    fn base_mul(s: &u64) -> u64 {
        Self::pow(Self::G, *s)
    }

    fn mul(e: &u64, s: &u64) -> u64 {
        Self::pow(*e, *s)
    }

    fn add(a: &u64, b: &u64) -> u64 {
        Self::mulmod(*a, *b, Self::P)
    }

    fn sub(a: &u64, b: &u64) -> u64 {
        // b^(P-2) is the inverse of b.
        Self::mulmod(*a, Self::pow(*b, Self::P - 2), Self::P)
    }

    fn is_identity(e: &u64) -> bool {
        *e == 1
    }

    fn encode(e: &u64) -> Vec<u8> {
        e.to_le_bytes().to_vec()
    }

    fn decode(b: &[u8]) -> Result<u64, OtError> {
        let x = u64::from_le_bytes(b.try_into().map_err(|_| OtError::BadElement)?);
        if x == 0 || x >= Self::P || Self::pow(x, Self::Q) != 1 {
            return Err(OtError::BadElement);
        }
        Ok(x)
    }
}
