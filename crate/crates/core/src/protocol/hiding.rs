//! Output hiding: a one-time MAC over the output, masked.
//!
//! For outputs `y_0..y_{n-1}` the hidden output is `n + 1` words:
//! `y_i ^ m_i`, then `tag ^ m_n` with
//! `tag = k_0 ^ k_1*y_0 ^ ... ^ k_n*y_{n-1}` in GF(2^32). Keys and masks
//! are garbler constants compiled into an epilogue, so only the garbler can
//! strip the mask and check the tag.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::mips::{Instr, MipsProgram, Op};

/// Low terms of the field polynomial `x^32 + x^7 + x^3 + x^2 + 1`.
pub const POLY: u32 = 0x8D;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HidingError {
    #[error("output tag does not verify")]
    Mac,
    #[error("expected {expected} words, got {got}")]
    Length { expected: usize, got: usize },
    #[error("hiding needs data word {needed} for the tag but memory has {available} words")]
    NoRoom { needed: usize, available: usize },
    #[error("program must end in HALT to take the hiding epilogue")]
    NoHalt,
}

pub fn gf_mul(mut a: u32, b: u32) -> u32 {
    let mut r = 0;
    for j in 0..32 {
        if (b >> j) & 1 == 1 {
            r ^= a;
        }
        let carry = a >> 31;
        a = (a << 1) ^ (carry.wrapping_neg() & POLY);
    }
    r
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HidingKeys {
    /// `k_0..k_n`.
    pub mac_key: Vec<u32>,
    /// `m_0..m_n`.
    pub mask: Vec<u32>,
}

impl HidingKeys {
    pub fn derive(seed: [u8; 32], n: usize) -> HidingKeys {
        let mut rng = ChaCha20Rng::from_seed(seed);
        HidingKeys {
            mac_key: (0..=n).map(|_| rng.next_u32()).collect(),
            mask: (0..=n).map(|_| rng.next_u32()).collect(),
        }
    }

    pub fn outputs(&self) -> usize {
        self.mask.len() - 1
    }
}

pub fn mac(key: &[u32], y: &[u32]) -> u32 {
    key[1..].iter().zip(y).fold(key[0], |t, (&k, &v)| t ^ gf_mul(k, v))
}

pub fn hide_output(y: &[u32], keys: &HidingKeys) -> Result<Vec<u32>, HidingError> {
    if y.len() != keys.outputs() {
        return Err(HidingError::Length {
            expected: keys.outputs(),
            got: y.len(),
        });
    }
    let mut h: Vec<u32> = y.iter().zip(&keys.mask).map(|(v, m)| v ^ m).collect();
    h.push(mac(&keys.mac_key, y) ^ keys.mask[y.len()]);
    Ok(h)
}

pub fn unhide_output(hidden: &[u32], keys: &HidingKeys) -> Result<Vec<u32>, HidingError> {
    let n = keys.outputs();
    if hidden.len() != n + 1 {
        return Err(HidingError::Length {
            expected: n + 1,
            got: hidden.len(),
        });
    }
    let y: Vec<u32> = hidden[..n].iter().zip(&keys.mask).map(|(v, m)| v ^ m).collect();
    if hidden[n] ^ keys.mask[n] != mac(&keys.mac_key, &y) {
        return Err(HidingError::Mac);
    }
    Ok(y)
}

/// Replaces the trailing HALT with code that overwrites the output region
/// with its hidden form and grows the region by the tag word. The epilogue
/// length depends only on the output count.
pub fn with_hiding_epilogue(p: &MipsProgram, keys: &HidingKeys) -> Result<MipsProgram, HidingError> {
    let (base, n) = p.output_region;
    let (base, n) = (base as usize, n as usize);
    if keys.outputs() != n {
        return Err(HidingError::Length {
            expected: n,
            got: keys.outputs(),
        });
    }
    if base + n + 1 > p.dmem_words {
        return Err(HidingError::NoRoom {
            needed: base + n,
            available: p.dmem_words,
        });
    }
    if p.instructions.last() != Some(&Instr::halt().0) {
        return Err(HidingError::NoHalt);
    }
    const Y: usize = 1;
    const T: usize = 2;
    const ACC: usize = 3;
    const P: usize = 4;
    const C: usize = 5;
    const K: usize = 6;
    let mut code = p.instructions[..p.instructions.len() - 1].to_vec();
    let li32 = |code: &mut Vec<u32>, r: usize, v: u32| {
        code.push(Instr::i(Op::Lui, r, 0, v >> 16).0);
        code.push(Instr::i(Op::Ori, r, r, v & 0xFFFF).0);
    };
    li32(&mut code, P, POLY);
    li32(&mut code, ACC, keys.mac_key[0]);
    for i in 0..n {
        let addr = (base + i) as u32;
        code.push(Instr::i(Op::Lw, Y, 0, addr).0);
        li32(&mut code, K, keys.mask[i]);
        code.push(Instr::r(Op::Xor, T, Y, K, 0).0);
        code.push(Instr::i(Op::Sw, T, 0, addr).0);
        let k = keys.mac_key[i + 1];
        for j in 0..32 {
            // acc ^= y & (bit j of k ? ~0 : 0); y *= x.
            li32(&mut code, K, 0u32.wrapping_sub((k >> j) & 1));
            code.push(Instr::r(Op::And, T, Y, K, 0).0);
            code.push(Instr::r(Op::Xor, ACC, ACC, T, 0).0);
            code.push(Instr::r(Op::Srl, C, 0, Y, 31).0);
            code.push(Instr::r(Op::Sub, C, 0, C, 0).0);
            code.push(Instr::r(Op::And, C, C, P, 0).0);
            code.push(Instr::r(Op::Sll, Y, 0, Y, 1).0);
            code.push(Instr::r(Op::Xor, Y, Y, C, 0).0);
        }
    }
    li32(&mut code, K, keys.mask[n]);
    code.push(Instr::r(Op::Xor, ACC, ACC, K, 0).0);
    code.push(Instr::i(Op::Sw, ACC, 0, (base + n) as u32).0);
    code.push(Instr::halt().0);
    Ok(MipsProgram {
        instructions: code,
        output_region: (base as u32, n as u32 + 1),
        ..p.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mips::{assemble, run_plain, RunOptions};
    use proptest::prelude::*;

    fn poly_mod(mut a: u64, p: u64) -> u64 {
        let d = 63 - p.leading_zeros();
        while a != 0 && 63 - a.leading_zeros() >= d {
            a ^= p << (63 - a.leading_zeros() - d);
        }
        a
    }

    #[test]
    fn field_polynomial_is_irreducible() {
        // Rabin: x^(2^32) = x mod p and gcd(x^(2^16) - x, p) = 1.
        let p = (1u64 << 32) | POLY as u64;
        let mut t = 2u32;
        let mut x16 = 0;
        for i in 1..=32 {
            t = gf_mul(t, t);
            if i == 16 {
                x16 = t;
            }
        }
        assert_eq!(t, 2);
        let (mut a, mut b) = (p, (x16 ^ 2) as u64);
        while b != 0 {
            let r = poly_mod(a, b);
            a = b;
            b = r;
        }
        assert_eq!(a, 1);
    }

    #[test]
    fn zero_mask_exposes_the_tag() {
        let mut k = HidingKeys::derive([1; 32], 2);
        k.mask = vec![0; 3];
        let y = [5, 9];
        assert_eq!(hide_output(&y, &k).unwrap(), vec![5, 9, mac(&k.mac_key, &y)]);
    }

    #[test]
    fn masks_change_the_hidden_output() {
        let y = [1, 2, 3];
        let a = hide_output(&y, &HidingKeys::derive([1; 32], 3)).unwrap();
        let b = hide_output(&y, &HidingKeys::derive([2; 32], 3)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn tampering_is_caught() {
        let k = HidingKeys::derive([4; 32], 2);
        let mut h = hide_output(&[7, 8], &k).unwrap();
        h[0] ^= 1;
        assert_eq!(unhide_output(&h, &k), Err(HidingError::Mac));
    }

    #[test]
    fn epilogue_checks_room_and_halt() {
        let p = assemble(".config dmem=16\n.output 14 2\nHALT\n").unwrap();
        let k = HidingKeys::derive([0; 32], 2);
        assert!(matches!(with_hiding_epilogue(&p, &k), Err(HidingError::NoRoom { .. })));
        let p = assemble(".config dmem=16\n.output 0 1\nADDI r1, r0, 1\n").unwrap();
        assert_eq!(with_hiding_epilogue(&p, &HidingKeys::derive([0; 32], 1)), Err(HidingError::NoHalt));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn round_trip(seed in any::<[u8; 32]>(), y in proptest::collection::vec(any::<u32>(), 0..6)) {
            let k = HidingKeys::derive(seed, y.len());
            prop_assert_eq!(unhide_output(&hide_output(&y, &k).unwrap(), &k).unwrap(), y);
        }

        #[test]
        fn field_multiplication_distributes(a in any::<u32>(), b in any::<u32>(), c in any::<u32>()) {
            prop_assert_eq!(gf_mul(a, b ^ c), gf_mul(a, b) ^ gf_mul(a, c));
            prop_assert_eq!(gf_mul(a, b), gf_mul(b, a));
            prop_assert_eq!(gf_mul(a, 1), a);
        }

        #[test]
        fn epilogue_matches_software(seed in any::<[u8; 32]>(), a in any::<u32>(), b in any::<u32>()) {
            let p = assemble(&format!(
                ".config dmem=16 mult=off\n.output 3 2\n\
                 LUI r7, {}\nORI r7, r7, {}\nSW r7, 3(r0)\n\
                 LUI r7, {}\nORI r7, r7, {}\nSW r7, 4(r0)\nHALT\n",
                a >> 16, a & 0xFFFF, b >> 16, b & 0xFFFF
            )).unwrap();
            let k = HidingKeys::derive(seed, 2);
            let h = with_hiding_epilogue(&p, &k).unwrap();
            let out = run_plain(&h, &[], RunOptions::default()).unwrap();
            prop_assert_eq!(&out.output_words, &hide_output(&[a, b], &k).unwrap());
            let other = with_hiding_epilogue(&p, &HidingKeys::derive([0; 32], 2)).unwrap();
            prop_assert_eq!(h.instructions.len(), other.instructions.len());
        }
    }
}
