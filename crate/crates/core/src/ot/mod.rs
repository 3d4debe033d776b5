//! 1-out-of-2 oblivious transfer of 16-byte messages.
//!
//! Three messages, batched over all pairs so one transfer is one
//! interaction:
//!
//! * `OT1` sender to receiver: `u16` element length, then `A = g^a`.
//! * `OT2` receiver to sender: `u32` count, then per choice `B = g^b`
//!   (choice 0) or `A g^b` (choice 1).
//! * `OT3` sender to receiver: `u32` count, then per pair
//!   `ct0 ‖ tag0 ‖ ct1 ‖ tag1`, 16 bytes each.
//!
//! Keys are `k0 = H(i, A, B, B^a)` and `k1 = H(i, A, B, (B/A)^a)`; the
//! receiver computes `H(i, A, B, A^b)`, which equals exactly one of them.
//! Each message is sealed as `ct = m xor H("pad", k)` with
//! `tag = H("tag", k, ct)`, so opening the other ciphertext fails the tag.

pub mod group;

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::protocol::channel::{Channel, ChannelError, PayloadReader, PayloadWriter, Tag};
use group::{Group, Ristretto};

pub type Message = [u8; 16];

#[derive(Debug, thiserror::Error)]
pub enum OtError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("group element failed to decode or is not in the group")]
    BadElement,
    #[error("expected {expected} entries, got {got}")]
    Length { expected: usize, got: usize },
    #[error("integrity tag mismatch on transfer {0}")]
    Tag(usize),
    #[error("OT profile {0:?} is not available in this build")]
    ProfileUnavailable(OtProfile),
    #[error("unknown OT profile {0:?}")]
    UnknownProfile(String),
}

/// Group selection. `Test` is a small Schnorr group compiled in only with
/// the `insecure-test-group` feature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum OtProfile {
    #[default]
    Secure,
    Test,
}

impl OtProfile {
    pub const ENV: &'static str = "HWGN2_PROFILE";

    /// Reads `HWGN2_PROFILE` (`secure` or `test`), defaulting to secure.
    pub fn from_env() -> Result<OtProfile, OtError> {
        match std::env::var(Self::ENV) {
            Err(_) => Ok(OtProfile::Secure),
            Ok(v) => v.parse(),
        }
    }

    pub fn is_available(self) -> bool {
        match self {
            OtProfile::Secure => true,
            OtProfile::Test => cfg!(feature = "insecure-test-group"),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            OtProfile::Secure => 0,
            OtProfile::Test => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<OtProfile> {
        match c {
            0 => Some(OtProfile::Secure),
            1 => Some(OtProfile::Test),
            _ => None,
        }
    }

    pub fn element_len(self) -> usize {
        match self {
            OtProfile::Secure => Ristretto::ELEMENT_LEN,
            OtProfile::Test => 8,
        }
    }
}

impl std::str::FromStr for OtProfile {
    type Err = OtError;
    fn from_str(s: &str) -> Result<OtProfile, OtError> {
        match s {
            "secure" => Ok(OtProfile::Secure),
            "test" => Ok(OtProfile::Test),
            other => Err(OtError::UnknownProfile(other.to_string())),
        }
    }
}

/// Bytes of `OT1`, `OT2` and `OT3` payloads for `n` transfers.
pub fn message_sizes(profile: OtProfile, n: usize) -> [usize; 3] {
    let e = profile.element_len();
    [2 + e, 4 + n * e, 4 + n * 64]
}

fn kdf(i: usize, a: &[u8], b: &[u8], p: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"hwgn2/ot/key");
    h.update((i as u64).to_le_bytes());
    h.update(a);
    h.update(b);
    h.update(p);
    h.finalize().into()
}

fn pad(k: &[u8; 32]) -> Message {
    let d = Sha256::new().chain_update(b"pad").chain_update(k).finalize();
    d[..16].try_into().unwrap()
}

fn tag(k: &[u8; 32], ct: &Message) -> Message {
    let d = Sha256::new()
        .chain_update(b"tag")
        .chain_update(k)
        .chain_update(ct)
        .finalize();
    d[..16].try_into().unwrap()
}

fn xor(a: &Message, b: &Message) -> Message {
    std::array::from_fn(|i| a[i] ^ b[i])
}

/// One sealed message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sealed {
    pub ct: Message,
    pub tag: Message,
}

fn seal(k: &[u8; 32], m: &Message) -> Sealed {
    let ct = xor(m, &pad(k));
    Sealed { ct, tag: tag(k, &ct) }
}

fn open(k: &[u8; 32], s: &Sealed) -> Option<Message> {
    (tag(k, &s.ct) == s.tag).then(|| xor(&s.ct, &pad(k)))
}

pub struct Sender<G: Group> {
    a: G::Scalar,
    big_a: G::Element,
    a_bytes: Vec<u8>,
}

impl<G: Group> Sender<G> {
    /// First message.
    pub fn start<R: RngCore + CryptoRng>(rng: &mut R) -> (Sender<G>, Vec<u8>) {
        let a = G::random_scalar(rng);
        let big_a = G::base_mul(&a);
        let a_bytes = G::encode(&big_a);
        let mut w = PayloadWriter::default();
        w.bytes(&(G::ELEMENT_LEN as u16).to_le_bytes()).bytes(&a_bytes);
        (Sender { a, big_a, a_bytes }, w.buf)
    }

    /// Consumes `OT2`, returns `OT3`.
    pub fn respond(&self, ot2: &[u8], pairs: &[(Message, Message)], frame: u64) -> Result<Vec<u8>, OtError> {
        let mut r = PayloadReader::new(ot2, Tag::Ot2, frame);
        let n = r.u32()? as usize;
        if n != pairs.len() {
            return Err(OtError::Length { expected: pairs.len(), got: n });
        }
        let mut w = PayloadWriter::with_capacity(4 + 64 * n);
        w.u32(n as u32);
        for (i, (m0, m1)) in pairs.iter().enumerate() {
            let b_bytes = r.take(G::ELEMENT_LEN)?;
            let b = G::decode(b_bytes)?;
            let p0 = G::mul(&b, &self.a);
            let p1 = G::mul(&G::sub(&b, &self.big_a), &self.a);
            let k0 = kdf(i, &self.a_bytes, b_bytes, &G::encode(&p0));
            let k1 = kdf(i, &self.a_bytes, b_bytes, &G::encode(&p1));
            for s in [seal(&k0, m0), seal(&k1, m1)] {
                w.bytes(&s.ct).bytes(&s.tag);
            }
        }
        r.finish()?;
        Ok(w.buf)
    }
}

pub struct Receiver {
    keys: Vec<[u8; 32]>,
    choices: Vec<bool>,
}

impl Receiver {
    /// Consumes `OT1`, returns the receiver state and `OT2`.
    pub fn respond<G: Group, R: RngCore + CryptoRng>(
        ot1: &[u8],
        choices: &[bool],
        rng: &mut R,
        frame: u64,
    ) -> Result<(Receiver, Vec<u8>), OtError> {
        let mut r = PayloadReader::new(ot1, Tag::Ot1, frame);
        let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        if len != G::ELEMENT_LEN {
            return Err(OtError::BadElement);
        }
        let a_bytes = r.take(len)?.to_vec();
        r.finish()?;
        let big_a = G::decode(&a_bytes)?;
        if G::is_identity(&big_a) {
            return Err(OtError::BadElement);
        }
        let mut w = PayloadWriter::with_capacity(4 + choices.len() * G::ELEMENT_LEN);
        w.u32(choices.len() as u32);
        let mut keys = Vec::with_capacity(choices.len());
        for (i, &c) in choices.iter().enumerate() {
            let b = G::random_scalar(rng);
            let gb = G::base_mul(&b);
            let big_b = if c { G::add(&big_a, &gb) } else { gb };
            let b_bytes = G::encode(&big_b);
            keys.push(kdf(i, &a_bytes, &b_bytes, &G::encode(&G::mul(&big_a, &b))));
            w.bytes(&b_bytes);
        }
        Ok((
            Receiver {
                keys,
                choices: choices.to_vec(),
            },
            w.buf,
        ))
    }

    /// Consumes `OT3` and opens the chosen message of every pair.
    pub fn finish(&self, ot3: &[u8], frame: u64) -> Result<Vec<Message>, OtError> {
        let sealed = parse_ot3(ot3, frame)?;
        if sealed.len() != self.keys.len() {
            return Err(OtError::Length {
                expected: self.keys.len(),
                got: sealed.len(),
            });
        }
        sealed
            .iter()
            .enumerate()
            .map(|(i, pair)| self.open(i, &pair[self.choices[i] as usize]).ok_or(OtError::Tag(i)))
            .collect()
    }

    /// Tries this receiver's key for transfer `i` on any sealed message.
    pub fn open(&self, i: usize, s: &Sealed) -> Option<Message> {
        open(&self.keys[i], s)
    }
}

pub fn parse_ot3(ot3: &[u8], frame: u64) -> Result<Vec<[Sealed; 2]>, OtError> {
    let mut r = PayloadReader::new(ot3, Tag::Ot3, frame);
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(ot3.len() / 64));
    for _ in 0..n {
        let mut next = || -> Result<Sealed, OtError> {
            Ok(Sealed {
                ct: r.take(16)?.try_into().unwrap(),
                tag: r.take(16)?.try_into().unwrap(),
            })
        };
        out.push([next()?, next()?]);
    }
    r.finish()?;
    Ok(out)
}

fn send_with<G: Group, R: RngCore + CryptoRng>(
    pairs: &[(Message, Message)],
    ch: &mut Channel,
    rng: &mut R,
) -> Result<(), OtError> {
    let (s, ot1) = Sender::<G>::start(rng);
    ch.send(Tag::Ot1, &ot1)?;
    let frame = ch.position();
    let ot2 = ch.recv(Tag::Ot2)?;
    let ot3 = s.respond(&ot2, pairs, frame)?;
    ch.send(Tag::Ot3, &ot3)?;
    Ok(())
}

fn receive_with<G: Group, R: RngCore + CryptoRng>(
    choices: &[bool],
    ch: &mut Channel,
    rng: &mut R,
) -> Result<Vec<Message>, OtError> {
    let frame = ch.position();
    let ot1 = ch.recv(Tag::Ot1)?;
    let (r, ot2) = Receiver::respond::<G, R>(&ot1, choices, rng, frame)?;
    ch.send(Tag::Ot2, &ot2)?;
    let frame = ch.position();
    let ot3 = ch.recv(Tag::Ot3)?;
    r.finish(&ot3, frame)
}

/// A sender for whichever group a profile selects, for callers that move
/// the OT messages themselves.
pub enum ProfileSender {
    Secure(Sender<Ristretto>),
    #[cfg(feature = "insecure-test-group")]
    Test(Sender<group::Schnorr>),
}

impl ProfileSender {
    /// Returns the sender and `OT1`.
    pub fn start<R: RngCore + CryptoRng>(profile: OtProfile, rng: &mut R) -> Result<(ProfileSender, Vec<u8>), OtError> {
        match profile {
            OtProfile::Secure => {
                let (s, m) = Sender::start(rng);
                Ok((ProfileSender::Secure(s), m))
            }
            #[cfg(feature = "insecure-test-group")]
            OtProfile::Test => {
                let (s, m) = Sender::start(rng);
                Ok((ProfileSender::Test(s), m))
            }
            #[allow(unreachable_patterns)]
            p => Err(OtError::ProfileUnavailable(p)),
        }
    }

    pub fn respond(&self, ot2: &[u8], pairs: &[(Message, Message)], frame: u64) -> Result<Vec<u8>, OtError> {
        match self {
            ProfileSender::Secure(s) => s.respond(ot2, pairs, frame),
            #[cfg(feature = "insecure-test-group")]
            ProfileSender::Test(s) => s.respond(ot2, pairs, frame),
        }
    }
}

/// Sender side of one batched transfer over `ch`.
pub fn ot_send<R: RngCore + CryptoRng>(
    profile: OtProfile,
    pairs: &[(Message, Message)],
    ch: &mut Channel,
    rng: &mut R,
) -> Result<(), OtError> {
    match profile {
        OtProfile::Secure => send_with::<Ristretto, R>(pairs, ch, rng),
        #[cfg(feature = "insecure-test-group")]
        OtProfile::Test => send_with::<group::Schnorr, R>(pairs, ch, rng),
        #[allow(unreachable_patterns)]
        p => Err(OtError::ProfileUnavailable(p)),
    }
}

/// Receiver side; returns `m_{c_i}` for every pair.
pub fn ot_receive<R: RngCore + CryptoRng>(
    profile: OtProfile,
    choices: &[bool],
    ch: &mut Channel,
    rng: &mut R,
) -> Result<Vec<Message>, OtError> {
    match profile {
        OtProfile::Secure => receive_with::<Ristretto, R>(choices, ch, rng),
        #[cfg(feature = "insecure-test-group")]
        OtProfile::Test => receive_with::<group::Schnorr, R>(choices, ch, rng),
        #[allow(unreachable_patterns)]
        p => Err(OtError::ProfileUnavailable(p)),
    }
}

/// Runs both roles over an in-process loopback pair.
pub fn ot_transfer(
    profile: OtProfile,
    pairs: &[(Message, Message)],
    choices: &[bool],
    seed: [u8; 32],
) -> Result<Vec<Message>, OtError> {
    if pairs.len() != choices.len() {
        return Err(OtError::Length {
            expected: pairs.len(),
            got: choices.len(),
        });
    }
    let (mut a, mut b) = Channel::loopback_pair();
    let mut sender_rng = ChaCha20Rng::from_seed(seed);
    let mut receiver_rng = ChaCha20Rng::from_seed(seed);
    receiver_rng.set_stream(1);
    std::thread::scope(|s| {
        let h = s.spawn(move || ot_send(profile, pairs, &mut a, &mut sender_rng));
        let got = ot_receive(profile, choices, &mut b, &mut receiver_rng);
        let sent = h.join().expect("sender thread panicked");
        sent.and(got)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msgs(n: usize) -> Vec<(Message, Message)> {
        (0..n).map(|i| ([i as u8; 16], [0x80 | i as u8; 16])).collect()
    }

    #[test]
    fn single_and_pair_examples() {
        for p in [OtProfile::Secure, OtProfile::Test] {
            let a = msgs(2);
            assert_eq!(ot_transfer(p, &a[..1], &[false], [1; 32]).unwrap(), vec![a[0].0]);
            assert_eq!(
                ot_transfer(p, &a, &[true, false], [2; 32]).unwrap(),
                vec![a[0].1, a[1].0]
            );
        }
    }

    #[test]
    fn unchosen_message_fails_tag() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (s, ot1) = Sender::<Ristretto>::start(&mut rng);
        let (r, ot2) = Receiver::respond::<Ristretto, _>(&ot1, &[true], &mut rng, 0).unwrap();
        let pairs = msgs(1);
        let ot3 = s.respond(&ot2, &pairs, 0).unwrap();
        assert_eq!(r.finish(&ot3, 0).unwrap(), vec![pairs[0].1]);
        let sealed = parse_ot3(&ot3, 0).unwrap();
        assert_eq!(r.open(0, &sealed[0][0]), None);
    }

    #[test]
    fn tampered_element_aborts() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (s, ot1) = Sender::<Ristretto>::start(&mut rng);
        let (_, mut ot2) = Receiver::respond::<Ristretto, _>(&ot1, &[false], &mut rng, 0).unwrap();
        ot2[4..36].copy_from_slice(&[0xFF; 32]);
        assert!(matches!(s.respond(&ot2, &msgs(1), 0), Err(OtError::BadElement)));
        let mut bad1 = ot1.clone();
        bad1[2..].copy_from_slice(&[0xEE; 32]);
        assert!(Receiver::respond::<Ristretto, _>(&bad1, &[false], &mut rng, 0).is_err());
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            ot_transfer(OtProfile::Test, &msgs(2), &[true], [0; 32]),
            Err(OtError::Length { .. })
        ));
    }

    #[test]
    fn profile_parsing() {
        assert_eq!("test".parse::<OtProfile>().unwrap(), OtProfile::Test);
        assert!("fast".parse::<OtProfile>().is_err());
        assert_eq!(message_sizes(OtProfile::Secure, 3), [34, 100, 196]);
    }
}
