//! Fixed-key block-cipher gate hash.

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;

/// A fixed, public 128-bit permutation.
pub trait Prp: Send + Sync {
    fn permute(&self, x: u128) -> u128;

    fn permute_many(&self, xs: &mut [u128]) {
        for x in xs {
            *x = self.permute(*x);
        }
    }

    /// Hardware AES round keys, when this permutation is AES and the CPU
    /// has AES instructions. Lets the gate loops inline the cipher.
    #[cfg(target_arch = "x86_64")]
    fn aes_ni(&self) -> Option<&ni::RoundKeys> {
        None
    }
}

/// AES-128 under a fixed public key.
#[derive(Clone)]
pub struct FixedKeyAes {
    cipher: Aes128,
    #[cfg(target_arch = "x86_64")]
    ni: Option<ni::RoundKeys>,
}

/// The public key; any constant works, it only has to be agreed on.
pub const FIXED_KEY: [u8; 16] = *b"hwgn2-fixed-key!";

impl FixedKeyAes {
    pub fn new() -> FixedKeyAes {
        FixedKeyAes::with_key(FIXED_KEY)
    }

    pub fn with_key(key: [u8; 16]) -> FixedKeyAes {
        FixedKeyAes {
            cipher: Aes128::new(&key.into()),
            #[cfg(target_arch = "x86_64")]
            ni: ni::RoundKeys::new(key),
        }
    }

    /// The portable implementation only, ignoring CPU support.
    pub fn portable(key: [u8; 16]) -> FixedKeyAes {
        FixedKeyAes {
            cipher: Aes128::new(&key.into()),
            #[cfg(target_arch = "x86_64")]
            ni: None,
        }
    }
}

impl Default for FixedKeyAes {
    fn default() -> Self {
        FixedKeyAes::new()
    }
}

impl std::fmt::Debug for FixedKeyAes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FixedKeyAes")
    }
}

impl Prp for FixedKeyAes {
    #[cfg(target_arch = "x86_64")]
    fn aes_ni(&self) -> Option<&ni::RoundKeys> {
        self.ni.as_ref()
    }

    #[inline]
    fn permute(&self, x: u128) -> u128 {
        #[cfg(target_arch = "x86_64")]
        if let Some(k) = &self.ni {
            // SAFETY: keys exist only when the CPU has AES-NI.
            return unsafe { ni::encrypt_one(k, x) };
        }
        let mut block = GenericArray::from(x.to_le_bytes());
        self.cipher.encrypt_block(&mut block);
        u128::from_le_bytes(block.into())
    }

    #[inline]
    fn permute_many(&self, xs: &mut [u128]) {
        // Encrypting in groups lets the backend pipeline the rounds.
        const CHUNK: usize = 8;
        let mut blocks = [GenericArray::from([0u8; 16]); CHUNK];
        for chunk in xs.chunks_mut(CHUNK) {
            for (b, x) in blocks.iter_mut().zip(chunk.iter()) {
                *b = GenericArray::from(x.to_le_bytes());
            }
            let n = chunk.len();
            self.cipher.encrypt_blocks(&mut blocks[..n]);
            for (x, b) in chunk.iter_mut().zip(blocks.iter()) {
                *x = u128::from_le_bytes((*b).into());
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
pub mod ni {
    //! AES-128 encryption with the x86 AES instructions. Callers must only
    //! use these from code compiled with the `aes` target feature, which
    //! [`RoundKeys::new`] checks at runtime.

    use core::arch::x86_64::*;

    #[derive(Clone, Copy)]
    pub struct RoundKeys([__m128i; 11]);

    // The keys are plain data.
    unsafe impl Send for RoundKeys {}
    unsafe impl Sync for RoundKeys {}

    impl RoundKeys {
        pub fn new(key: [u8; 16]) -> Option<RoundKeys> {
            if std::arch::is_x86_feature_detected!("aes")
                && std::arch::is_x86_feature_detected!("sse2")
            {
                // SAFETY: feature presence checked above.
                Some(unsafe { expand(key) })
            } else {
                None
            }
        }
    }

    macro_rules! expand_round {
        ($k:expr, $rcon:literal) => {{
            let t = _mm_shuffle_epi32(_mm_aeskeygenassist_si128($k, $rcon), 0xFF);
            let mut k = $k;
            k = _mm_xor_si128(k, _mm_slli_si128(k, 4));
            k = _mm_xor_si128(k, _mm_slli_si128(k, 4));
            k = _mm_xor_si128(k, _mm_slli_si128(k, 4));
            _mm_xor_si128(k, t)
        }};
    }

    #[target_feature(enable = "aes,sse2")]
    unsafe fn expand(key: [u8; 16]) -> RoundKeys {
        let k0 = _mm_loadu_si128(key.as_ptr() as *const __m128i);
        let k1 = expand_round!(k0, 0x01);
        let k2 = expand_round!(k1, 0x02);
        let k3 = expand_round!(k2, 0x04);
        let k4 = expand_round!(k3, 0x08);
        let k5 = expand_round!(k4, 0x10);
        let k6 = expand_round!(k5, 0x20);
        let k7 = expand_round!(k6, 0x40);
        let k8 = expand_round!(k7, 0x80);
        let k9 = expand_round!(k8, 0x1B);
        let k10 = expand_round!(k9, 0x36);
        RoundKeys([k0, k1, k2, k3, k4, k5, k6, k7, k8, k9, k10])
    }

    #[inline(always)]
    fn load(x: u128) -> __m128i {
        // SAFETY: same size, any bit pattern valid; little-endian layout
        // matches `u128::to_le_bytes`.
        unsafe { core::mem::transmute::<u128, __m128i>(x) }
    }

    #[inline(always)]
    fn store(x: __m128i) -> u128 {
        // SAFETY: as above.
        unsafe { core::mem::transmute::<__m128i, u128>(x) }
    }

    /// # Safety
    /// The CPU must support AES-NI.
    #[inline(always)]
    pub unsafe fn encrypt(k: &RoundKeys, x: u128) -> u128 {
        let mut b = _mm_xor_si128(load(x), k.0[0]);
        for rk in &k.0[1..10] {
            b = _mm_aesenc_si128(b, *rk);
        }
        store(_mm_aesenclast_si128(b, k.0[10]))
    }

    /// # Safety
    /// The CPU must support AES-NI.
    #[target_feature(enable = "aes,sse2")]
    pub unsafe fn encrypt_one(k: &RoundKeys, x: u128) -> u128 {
        encrypt(k, x)
    }

    /// # Safety
    /// The CPU must support AES-NI.
    #[inline(always)]
    pub unsafe fn encrypt4(k: &RoundKeys, x: [u128; 4]) -> [u128; 4] {
        let mut b = x.map(|v| _mm_xor_si128(load(v), k.0[0]));
        for rk in &k.0[1..10] {
            for v in b.iter_mut() {
                *v = _mm_aesenc_si128(*v, *rk);
            }
        }
        b.map(|v| store(_mm_aesenclast_si128(v, k.0[10])))
    }
}

/// Multiplication by x in GF(2^128) modulo x^128 + x^7 + x^2 + x + 1.
#[inline]
pub fn double(x: u128) -> u128 {
    let carry = x >> 127;
    (x << 1) ^ (carry * 0x87)
}

#[inline]
pub fn hash_key(a: u128, b: u128, tweak: u64) -> u128 {
    double(a) ^ double(double(b)) ^ tweak as u128
}

/// `H(A, B, T) = P(K) xor K` with `K = 2A xor 4B xor T`.
#[inline]
pub fn gate_hash<P: Prp + ?Sized>(prp: &P, a: u128, b: u128, tweak: u64) -> u128 {
    let k = hash_key(a, b, tweak);
    prp.permute(k) ^ k
}
