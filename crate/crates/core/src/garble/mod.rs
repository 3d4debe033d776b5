//! Yao garbling with Free-XOR, point-and-permute and GRR3 row reduction.
//!
//! Labels are 128-bit; bit 0 is the permute bit. For every wire the 1-label
//! is the 0-label xor a global offset `R` with `lsb(R) = 1`. Non-free gates
//! carry three ciphertexts: the row the evaluator indexes with permute bits
//! `(0,0)` is forced to the all-zero ciphertext and not stored.

mod hash;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::circuit::{CircuitError, Gate, GateKind, Netlist};

pub use hash::{double, gate_hash, hash_key, FixedKeyAes, Prp, FIXED_KEY};

pub type Seed = [u8; 32];

#[derive(Debug, thiserror::Error)]
pub enum GarbleError {
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error("expected {expected} {what}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("table for gate {got} where gate {expected} was expected")]
    TableOrder { expected: u32, got: u32 },
    #[error("garbled circuit was produced for a different netlist")]
    WrongNetlist,
    #[error("malformed serialized data at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(transparent)]
pub struct WireLabel(pub u128);

impl WireLabel {
    #[inline]
    pub fn lsb(self) -> bool {
        self.0 & 1 == 1
    }

    pub fn to_bytes(self) -> [u8; 16] {
        self.0.to_le_bytes()
    }

    pub fn from_bytes(b: [u8; 16]) -> WireLabel {
        WireLabel(u128::from_le_bytes(b))
    }

    pub fn hamming_weight(self) -> u32 {
        self.0.count_ones()
    }
}

impl std::ops::BitXor for WireLabel {
    type Output = WireLabel;
    fn bitxor(self, rhs: WireLabel) -> WireLabel {
        WireLabel(self.0 ^ rhs.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GarbledTable {
    pub gate_id: u32,
    pub rows: [u128; 3],
}

pub const TABLE_BYTES: usize = 4 + 3 * 16;
pub const LABEL_BYTES: usize = 16;

impl GarbledTable {
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.gate_id.to_le_bytes());
        for r in self.rows {
            out.extend_from_slice(&r.to_le_bytes());
        }
    }

    pub fn read_from(bytes: &[u8]) -> Option<GarbledTable> {
        if bytes.len() < TABLE_BYTES {
            return None;
        }
        let gate_id = u32::from_le_bytes(bytes[0..4].try_into().ok()?);
        let row = |i: usize| {
            let s = 4 + 16 * i;
            u128::from_le_bytes(bytes[s..s + 16].try_into().unwrap())
        };
        Some(GarbledTable {
            gate_id,
            rows: [row(0), row(1), row(2)],
        })
    }
}

/// Serializes a table list as a u32 LE count followed by 52-byte records.
pub fn encode_tables(tables: &[GarbledTable], out: &mut Vec<u8>) {
    out.extend_from_slice(&(tables.len() as u32).to_le_bytes());
    out.reserve(tables.len() * TABLE_BYTES);
    for t in tables {
        t.write_to(out);
    }
}

/// Inverse of [`encode_tables`]; returns the tables and bytes consumed.
pub fn decode_tables(bytes: &[u8]) -> Result<(Vec<GarbledTable>, usize), GarbleError> {
    let n = read_count(bytes, 0)?;
    let need = 4 + n * TABLE_BYTES;
    if bytes.len() < need {
        return Err(GarbleError::Malformed {
            offset: bytes.len(),
            message: format!("table list needs {need} bytes"),
        });
    }
    let tables = bytes[4..need]
        .chunks_exact(TABLE_BYTES)
        .map(|c| GarbledTable::read_from(c).unwrap())
        .collect();
    Ok((tables, need))
}

/// Serializes labels as a u32 LE count followed by 16-byte tokens.
pub fn encode_labels(labels: &[WireLabel], out: &mut Vec<u8>) {
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    out.reserve(labels.len() * LABEL_BYTES);
    for l in labels {
        out.extend_from_slice(&l.to_bytes());
    }
}

pub fn decode_labels(bytes: &[u8]) -> Result<(Vec<WireLabel>, usize), GarbleError> {
    let n = read_count(bytes, 0)?;
    let need = 4 + n * LABEL_BYTES;
    if bytes.len() < need {
        return Err(GarbleError::Malformed {
            offset: bytes.len(),
            message: format!("label list needs {need} bytes"),
        });
    }
    let labels = bytes[4..need]
        .chunks_exact(LABEL_BYTES)
        .map(|c| WireLabel::from_bytes(c.try_into().unwrap()))
        .collect();
    Ok((labels, need))
}

fn read_count(bytes: &[u8], offset: usize) -> Result<usize, GarbleError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .ok_or(GarbleError::Malformed {
            offset,
            message: "truncated length prefix".into(),
        })
}

/// Per input wire, the (0-label, 1-label) pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoding {
    pub pairs: Vec<(WireLabel, WireLabel)>,
}

/// Per output wire, the permute bit of its 0-label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoding {
    pub bits: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GarbledCircuit {
    pub netlist_digest: [u8; 32],
    pub tables: Vec<GarbledTable>,
}

impl Netlist {
    /// SHA-256 over the canonical text form.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }
}

/// Samples a global offset with the permute bit set.
pub fn sample_offset(rng: &mut impl RngCore) -> u128 {
    random_label(rng) | 1
}

pub fn random_label(rng: &mut impl RngCore) -> u128 {
    let mut b = [0u8; 16];
    rng.fill_bytes(&mut b);
    u128::from_le_bytes(b)
}

/// The permutation as seen by the gate loops.
trait Kernel {
    fn p1(&self, k: u128) -> u128;
    fn p4(&self, k: [u128; 4]) -> [u128; 4];
}

struct Portable<'a, P: ?Sized>(&'a P);

impl<P: Prp + ?Sized> Kernel for Portable<'_, P> {
    #[inline(always)]
    fn p1(&self, k: u128) -> u128 {
        self.0.permute(k)
    }
    #[inline(always)]
    fn p4(&self, mut k: [u128; 4]) -> [u128; 4] {
        self.0.permute_many(&mut k);
        k
    }
}

#[cfg(target_arch = "x86_64")]
struct Hardware<'a>(&'a hash::ni::RoundKeys);

#[cfg(target_arch = "x86_64")]
impl Kernel for Hardware<'_> {
    #[inline(always)]
    fn p1(&self, k: u128) -> u128 {
        // SAFETY: round keys exist only when the CPU has AES-NI.
        unsafe { hash::ni::encrypt(self.0, k) }
    }
    #[inline(always)]
    fn p4(&self, k: [u128; 4]) -> [u128; 4] {
        // SAFETY: as above.
        unsafe { hash::ni::encrypt4(self.0, k) }
    }
}

/// Garbles every gate of `netlist` given the inputs' 0-labels.
///
/// `wires` is resized to the wire count and receives every 0-label; non-free
/// gates append their table to `tables`. Gate `g` uses tweak
/// `tweak_base + g`.
pub fn garble_into<P: Prp + ?Sized>(
    prp: &P,
    netlist: &Netlist,
    r: u128,
    input_zero: &[u128],
    tweak_base: u64,
    wires: &mut Vec<u128>,
    tables: &mut Vec<GarbledTable>,
) -> Result<(), GarbleError> {
    netlist.ensure_valid()?;
    debug_assert!(r & 1 == 1);
    if input_zero.len() != netlist.n_inputs() {
        return Err(GarbleError::LengthMismatch {
            what: "input labels",
            expected: netlist.n_inputs(),
            got: input_zero.len(),
        });
    }
    wires.clear();
    wires.resize(netlist.n_wires(), 0);
    wires[..input_zero.len()].copy_from_slice(input_zero);
    tables.reserve(netlist.count_gates().nonfree);
    #[cfg(target_arch = "x86_64")]
    if let Some(k) = prp.aes_ni() {
        // SAFETY: round keys exist only when the CPU has AES-NI.
        unsafe { garble_hw(k, netlist, r, tweak_base, wires, tables) };
        return Ok(());
    }
    garble_loop(&Portable(prp), netlist, r, tweak_base, wires, tables);
    Ok(())
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "aes,sse2")]
unsafe fn garble_hw(
    k: &hash::ni::RoundKeys,
    netlist: &Netlist,
    r: u128,
    tweak_base: u64,
    wires: &mut [u128],
    tables: &mut Vec<GarbledTable>,
) {
    garble_loop(&Hardware(k), netlist, r, tweak_base, wires, tables)
}

#[inline(always)]
fn garble_loop<K: Kernel>(
    k: &K,
    netlist: &Netlist,
    r: u128,
    tweak_base: u64,
    wires: &mut [u128],
    tables: &mut Vec<GarbledTable>,
) {
    let r2 = double(r);
    let r4 = double(r2);
    for g in netlist.gates() {
        let a0 = wires[g.in0 as usize];
        let out0 = match g.kind {
            GateKind::Buf => a0,
            GateKind::Not => a0 ^ r,
            GateKind::Xor => a0 ^ wires[g.in1.unwrap() as usize],
            GateKind::Xnor => a0 ^ wires[g.in1.unwrap() as usize] ^ r,
            kind => {
                let b0 = wires[g.in1.unwrap() as usize];
                let tweak = tweak_base + g.id as u64;
                let (out0, rows) = garble_gate(k, truth_table(kind), a0, b0, r, r2, r4, tweak);
                tables.push(GarbledTable {
                    gate_id: g.id,
                    rows,
                });
                out0
            }
        };
        wires[g.out as usize] = out0;
    }
}

/// Bit `2a + b` holds the gate's output on inputs (a, b).
#[inline(always)]
fn truth_table(kind: GateKind) -> u8 {
    match kind {
        GateKind::And => 0b1000,
        GateKind::Or => 0b1110,
        GateKind::Nand => 0b0111,
        GateKind::Nor => 0b0001,
        GateKind::Xor => 0b0110,
        GateKind::Xnor => 0b1001,
        GateKind::Not => 0b0011,
        GateKind::Buf => 0b1100,
    }
}

#[inline(always)]
fn mask(bit: u128) -> u128 {
    0u128.wrapping_sub(bit & 1)
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn garble_gate<K: Kernel>(
    k: &K,
    tt: u8,
    a0: u128,
    b0: u128,
    r: u128,
    r2: u128,
    r4: u128,
    tweak: u64,
) -> (u128, [u128; 3]) {
    let pa = a0 & 1;
    let pb = b0 & 1;
    // Since doubling is linear, the key for labels (a0 ^ va R, b0 ^ vb R)
    // is the 0-label key plus va 2R plus vb 4R. Row 2i + j holds the labels
    // whose permute bits are (i, j), i.e. plaintext values (i ^ pa, j ^ pb).
    let base = hash_key(a0, b0, tweak);
    let ka = [mask(pa) & r2, mask(pa ^ 1) & r2];
    let kb = [mask(pb) & r4, mask(pb ^ 1) & r4];
    let keys = [
        base ^ ka[0] ^ kb[0],
        base ^ ka[0] ^ kb[1],
        base ^ ka[1] ^ kb[0],
        base ^ ka[1] ^ kb[1],
    ];
    let h = k.p4(keys);
    let v = |row: u128| {
        let va = (row >> 1) ^ pa;
        let vb = (row & 1) ^ pb;
        ((tt >> (2 * va + vb)) & 1) as u128
    };
    let out0 = h[0] ^ keys[0] ^ (mask(v(0)) & r);
    let rows = [
        h[1] ^ keys[1] ^ out0 ^ (mask(v(1)) & r),
        h[2] ^ keys[2] ^ out0 ^ (mask(v(2)) & r),
        h[3] ^ keys[3] ^ out0 ^ (mask(v(3)) & r),
    ];
    (out0, rows)
}

/// Evaluates every gate given one label per input wire.
///
/// `observe` is called after each gate with the gate, its output label and
/// the table row fetched (if any). Tables must be in gate order.
pub fn evaluate_into<P, F>(
    prp: &P,
    netlist: &Netlist,
    inputs: &[u128],
    tables: &[GarbledTable],
    tweak_base: u64,
    wires: &mut Vec<u128>,
    mut observe: F,
) -> Result<(), GarbleError>
where
    P: Prp + ?Sized,
    F: FnMut(&Gate, u128, Option<u128>),
{
    netlist.ensure_valid()?;
    if inputs.len() != netlist.n_inputs() {
        return Err(GarbleError::LengthMismatch {
            what: "input labels",
            expected: netlist.n_inputs(),
            got: inputs.len(),
        });
    }
    let nonfree = netlist.count_gates().nonfree;
    if tables.len() != nonfree {
        return Err(GarbleError::LengthMismatch {
            what: "tables",
            expected: nonfree,
            got: tables.len(),
        });
    }
    wires.clear();
    wires.resize(netlist.n_wires(), 0);
    wires[..inputs.len()].copy_from_slice(inputs);
    #[cfg(target_arch = "x86_64")]
    if let Some(k) = prp.aes_ni() {
        // SAFETY: round keys exist only when the CPU has AES-NI.
        return unsafe { evaluate_hw(k, netlist, tables, tweak_base, wires, &mut observe) };
    }
    evaluate_loop(&Portable(prp), netlist, tables, tweak_base, wires, &mut observe)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "aes,sse2")]
unsafe fn evaluate_hw<F: FnMut(&Gate, u128, Option<u128>)>(
    k: &hash::ni::RoundKeys,
    netlist: &Netlist,
    tables: &[GarbledTable],
    tweak_base: u64,
    wires: &mut [u128],
    observe: &mut F,
) -> Result<(), GarbleError> {
    evaluate_loop(&Hardware(k), netlist, tables, tweak_base, wires, observe)
}

#[inline(always)]
fn evaluate_loop<K: Kernel, F: FnMut(&Gate, u128, Option<u128>)>(
    k: &K,
    netlist: &Netlist,
    tables: &[GarbledTable],
    tweak_base: u64,
    wires: &mut [u128],
    observe: &mut F,
) -> Result<(), GarbleError> {
    let mut next = tables.iter();
    for g in netlist.gates() {
        let a = wires[g.in0 as usize];
        let (out, row) = match g.kind {
            GateKind::Buf | GateKind::Not => (a, None),
            GateKind::Xor | GateKind::Xnor => (a ^ wires[g.in1.unwrap() as usize], None),
            _ => {
                let b = wires[g.in1.unwrap() as usize];
                // Counts were checked by the caller.
                let t = next.next().unwrap();
                if t.gate_id != g.id {
                    return Err(GarbleError::TableOrder {
                        expected: g.id,
                        got: t.gate_id,
                    });
                }
                let idx = (((a & 1) << 1) | (b & 1)) as usize;
                let key = hash_key(a, b, tweak_base + g.id as u64);
                let h = k.p1(key) ^ key;
                if idx == 0 {
                    (h, Some(0))
                } else {
                    let row = t.rows[idx - 1];
                    (h ^ row, Some(row))
                }
            }
        };
        wires[g.out as usize] = out;
        observe(g, out, row);
    }
    Ok(())
}

/// `Gb`: garbles `netlist` with all randomness drawn from `seed`.
pub fn gb(
    netlist: &Netlist,
    seed: &Seed,
) -> Result<(GarbledCircuit, Encoding, Decoding), GarbleError> {
    gb_with_prp(&FixedKeyAes::new(), netlist, seed)
}

pub fn gb_with_prp<P: Prp + ?Sized>(
    prp: &P,
    netlist: &Netlist,
    seed: &Seed,
) -> Result<(GarbledCircuit, Encoding, Decoding), GarbleError> {
    netlist.ensure_valid()?;
    let mut rng = ChaCha20Rng::from_seed(*seed);
    let r = sample_offset(&mut rng);
    let input_zero: Vec<u128> = (0..netlist.n_inputs())
        .map(|_| random_label(&mut rng))
        .collect();
    let mut wires = Vec::new();
    let mut tables = Vec::with_capacity(netlist.count_gates().nonfree);
    garble_into(prp, netlist, r, &input_zero, 0, &mut wires, &mut tables)?;
    let e = Encoding {
        pairs: input_zero
            .iter()
            .map(|&z| (WireLabel(z), WireLabel(z ^ r)))
            .collect(),
    };
    let d = Decoding {
        bits: netlist
            .output_wires()
            .iter()
            .map(|&w| wires[w as usize] & 1 == 1)
            .collect(),
    };
    let f = GarbledCircuit {
        netlist_digest: netlist.digest(),
        tables,
    };
    Ok((f, e, d))
}

/// `En`: selects `e_i[x_i]`.
pub fn en(e: &Encoding, x: &[bool]) -> Result<Vec<WireLabel>, GarbleError> {
    if x.len() != e.pairs.len() {
        return Err(GarbleError::LengthMismatch {
            what: "input bits",
            expected: e.pairs.len(),
            got: x.len(),
        });
    }
    Ok(e.pairs
        .iter()
        .zip(x)
        .map(|(&(l0, l1), &b)| if b { l1 } else { l0 })
        .collect())
}

/// `Ev`: garbled evaluation, one label per output wire.
pub fn ev_garbled(
    netlist: &Netlist,
    f: &GarbledCircuit,
    x: &[WireLabel],
) -> Result<Vec<WireLabel>, GarbleError> {
    ev_garbled_with_prp(&FixedKeyAes::new(), netlist, f, x)
}

pub fn ev_garbled_with_prp<P: Prp + ?Sized>(
    prp: &P,
    netlist: &Netlist,
    f: &GarbledCircuit,
    x: &[WireLabel],
) -> Result<Vec<WireLabel>, GarbleError> {
    if f.netlist_digest != netlist.digest() {
        return Err(GarbleError::WrongNetlist);
    }
    let inputs: Vec<u128> = x.iter().map(|l| l.0).collect();
    let mut wires = Vec::new();
    evaluate_into(prp, netlist, &inputs, &f.tables, 0, &mut wires, |_, _, _| {})?;
    Ok(netlist
        .output_wires()
        .iter()
        .map(|&w| WireLabel(wires[w as usize]))
        .collect())
}

/// `De`: `y_j = lsb(Y_j) xor d_j`.
pub fn de(d: &Decoding, y: &[WireLabel]) -> Result<Vec<bool>, GarbleError> {
    if y.len() != d.bits.len() {
        return Err(GarbleError::LengthMismatch {
            what: "output labels",
            expected: d.bits.len(),
            got: y.len(),
        });
    }
    Ok(y.iter().zip(&d.bits).map(|(l, &b)| l.lsb() ^ b).collect())
}
