//! Frozen handshake vectors produced by `tests/oracles/handshake_oracle.py`,
//! plus an arbitrary-precision X25519 used as an independent oracle.

use std::time::Duration;

use num_bigint::BigUint;
use rand::{CryptoRng, RngCore};
use sliceguard::tunnel::{
    derive_public, finalize, initiate, open_with_key, respond, Initiation, InitiationGuard, Psk, Response,
    StaticKeypair, ZERO_PSK,
};

/// Hands out a fixed sequence of 32-byte blocks.
struct FixedRng(Vec<[u8; 32]>);

impl RngCore for FixedRng {
    fn next_u32(&mut self) -> u32 {
        unimplemented!()
    }
    fn next_u64(&mut self) -> u64 {
        unimplemented!()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        assert_eq!(dest.len(), 32);
        dest.copy_from_slice(&self.0.remove(0));
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

impl CryptoRng for FixedRng {}

struct Vector {
    psk: Psk,
    initiator_public: &'static str,
    responder_public: &'static str,
    msg1: &'static str,
    msg2: &'static str,
    initiator_send: &'static str,
    responder_send: &'static str,
    transcript: &'static str,
    ping_frame: &'static str,
}

const ZERO: Vector = Vector {
    psk: ZERO_PSK,
    initiator_public: "7b4e909bbe7ffe44c465a220037d608ee35897d31ef972f07f74892cb0f73f13",
    responder_public: "0faa684ed28867b97f4a6a2dee5df8ce974e76b7018e3f22a1c4cf2678570f20",
    msg1: "01000000040302017b0d47d93427f8311160781c7c733fd89f88970aef490d8aa0ee19a4cb8a1b140e4980b8154890809ddbd24c0e53893a7c70e1e5fc8b4c6d839d0f7f204c4aa1a87fd8b7d292bbe65366b6ac7ba043e5e0b0789a0522915b643be2b12b23f8576a4fa5836d1218a908f7d243",
    msg2: "020000000d0c0b0a04030201ff2ee45601ec1b67310c7790404585ae697331eee1c1f8cf2419731c1fff3e6bf4b7ceac4eb46c1ebceb527e28e2f08e",
    initiator_send: "9d94ca730fb2a4ea96bc950d7cd0eceac748c54269054a063d0a8df5ae7d59f4",
    responder_send: "2cd154c0dc8cd16cae087743e0b1b04777e1c9507cd87048db29b8bba0400a59",
    transcript: "1f464ef28dae92447db5d0720f398db8a3880022efd46403ff99606df8365683",
    ping_frame: "040000000d0c0b0a0000000000000000ff0f0638b4de6eaf3da789f53f1b62471c721d5f",
};

const PSK_55: Vector = Vector {
    psk: [0x55; 32],
    initiator_public: "7b4e909bbe7ffe44c465a220037d608ee35897d31ef972f07f74892cb0f73f13",
    responder_public: "0faa684ed28867b97f4a6a2dee5df8ce974e76b7018e3f22a1c4cf2678570f20",
    msg1: "01000000040302017b0d47d93427f8311160781c7c733fd89f88970aef490d8aa0ee19a4cb8a1b140e4980b8154890809ddbd24c0e53893a7c70e1e5fc8b4c6d839d0f7f204c4aa1a87fd8b7d292bbe65366b6ac7ba043e5e0b0789a0522915b643be2b12b23f8576a4fa5836d1218a908f7d243",
    msg2: "020000000d0c0b0a04030201ff2ee45601ec1b67310c7790404585ae697331eee1c1f8cf2419731c1fff3e6baa91a6c6baf8eb55d2464b94fa5e9ca7",
    initiator_send: "865a67be990a7959a52e8b060bb62493f9b10af586c6e0dc2b09f9ece495e36f",
    responder_send: "27f59a8f04405ca8f1fbaa5711ac102b59393ff3b82f23cec42228b7b5e4c9df",
    transcript: "b3580338fad0ed06cb1799ce93c3454974b0b2e1beb31eb963bd0affed5c4bc3",
    ping_frame: "040000000d0c0b0a0000000000000000deccb8373159f2861c3723f7c9006d069205866c",
};

fn check(v: &Vector) {
    let a = StaticKeypair::from_private([0x11; 32]);
    let b = StaticKeypair::from_private([0x22; 32]);
    assert_eq!(hex::encode(a.public().0), v.initiator_public);
    assert_eq!(hex::encode(b.public().0), v.responder_public);

    let now = Duration::new(1_700_000_000, 123_456_789);
    let (state, init) = initiate(&a, &b.public(), &v.psk, 0x0102_0304, &now, &mut FixedRng(vec![[0x33; 32]])).unwrap();
    assert_eq!(hex::encode(init.to_bytes()), v.msg1);

    let init = Initiation::parse(&hex::decode(v.msg1).unwrap()).unwrap();
    let mut guard = InitiationGuard::new();
    let r = respond(&b, &v.psk, &init, 0x0a0b_0c0d, &mut guard, &now, &mut FixedRng(vec![[0x44; 32]])).unwrap();
    assert_eq!(hex::encode(r.response.to_bytes()), v.msg2);
    assert_eq!(r.initiator_static, a.public());

    let resp = Response::parse(&hex::decode(v.msg2).unwrap()).unwrap();
    let sa = finalize(state, &resp, &now).unwrap();
    assert_eq!(hex::encode(sa.send_key()), v.initiator_send);
    assert_eq!(hex::encode(sa.recv_key()), v.responder_send);
    assert_eq!(hex::encode(r.session.send_key()), v.responder_send);
    assert_eq!(hex::encode(sa.transcript_hash()), v.transcript);
    assert_eq!(hex::encode(r.session.transcript_hash()), v.transcript);

    let frame = sa.seal(now, b"ping").unwrap();
    assert_eq!(hex::encode(&frame), v.ping_frame);
    assert_eq!(r.session.open(now, &frame).unwrap(), b"ping");
    let (_, counter, pt) = open_with_key(sa.send_key(), &frame).unwrap();
    assert_eq!((counter, pt.as_slice()), (0, &b"ping"[..]));
}

#[test]
fn handshake_matches_reference_without_psk() {
    check(&ZERO);
}

#[test]
fn handshake_matches_reference_with_psk() {
    check(&PSK_55);
}

/// Montgomery ladder over GF(2^255 - 19), straight from the curve definition.
fn x25519_bigint(scalar: [u8; 32], u: [u8; 32]) -> [u8; 32] {
    let p = (BigUint::from(1u8) << 255) - BigUint::from(19u8);
    let a24 = BigUint::from(121_665u32);
    let mut k = scalar;
    k[0] &= 248;
    k[31] &= 127;
    k[31] |= 64;
    let k = BigUint::from_bytes_le(&k);
    let mut u = u;
    u[31] &= 127;
    let x1: BigUint = BigUint::from_bytes_le(&u) % &p;

    let sub = |a: &BigUint, b: &BigUint| -> BigUint { (a + &p - (b % &p)) % &p };
    let (mut x2, mut z2) = (BigUint::from(1u8), BigUint::from(0u8));
    let (mut x3, mut z3) = (x1.clone(), BigUint::from(1u8));
    let mut swap = false;
    for t in (0..255).rev() {
        let bit = k.bit(t);
        if swap != bit {
            std::mem::swap(&mut x2, &mut x3);
            std::mem::swap(&mut z2, &mut z3);
        }
        swap = bit;
        let a = (&x2 + &z2) % &p;
        let aa = (&a * &a) % &p;
        let b = sub(&x2, &z2);
        let bb = (&b * &b) % &p;
        let e = sub(&aa, &bb);
        let c = (&x3 + &z3) % &p;
        let d = sub(&x3, &z3);
        let da = (&d * &a) % &p;
        let cb = (&c * &b) % &p;
        let s = (&da + &cb) % &p;
        x3 = (&s * &s) % &p;
        let diff = sub(&da, &cb);
        z3 = (&x1 * ((&diff * &diff) % &p)) % &p;
        x2 = (&aa * &bb) % &p;
        z2 = (&e * ((&aa + &a24 * &e) % &p)) % &p;
    }
    if swap {
        std::mem::swap(&mut x2, &mut x3);
        std::mem::swap(&mut z2, &mut z3);
    }
    let inv = z2.modpow(&(&p - BigUint::from(2u8)), &p);
    let out = (&x2 * inv) % &p;
    let mut bytes = out.to_bytes_le();
    bytes.resize(32, 0);
    bytes.try_into().unwrap()
}

fn base_point() -> [u8; 32] {
    let mut b = [0u8; 32];
    b[0] = 9;
    b
}

#[test]
fn bigint_ladder_reproduces_published_vector() {
    let sk: [u8; 32] = hex::decode("77076d0a7318a57d3c16c17251b26645df4c2f87ebc0992ab177fba51db92c2a")
        .unwrap()
        .try_into()
        .unwrap();
    assert_eq!(
        hex::encode(x25519_bigint(sk, base_point())),
        "8520f0098930a754748b7ddcb43ef75a0dbf3a0d26381af4eba4a98eaa9b4e6a"
    );
}

#[test]
fn derived_publics_agree_with_bigint_oracle() {
    for seed in 0u8..16 {
        let sk = [seed.wrapping_mul(37).wrapping_add(1); 32];
        assert_eq!(derive_public(&sk).0, x25519_bigint(sk, base_point()), "seed {seed}");
    }
}
