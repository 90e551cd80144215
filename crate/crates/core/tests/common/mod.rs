//! Reference computations written from the hash standard and the wire
//! layout, sharing no code with the library.

#![allow(dead_code)]

const K: [u32; 64] = [
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
];

pub fn sha256(data: &[u8]) -> [u8; 32] {
    let mut h: [u32; 8] = [
        0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab,
        0x5be0cd19,
    ];
    let mut msg = data.to_vec();
    msg.push(0x80);
    while msg.len() % 64 != 56 {
        msg.push(0);
    }
    msg.extend_from_slice(&((data.len() as u64) * 8).to_be_bytes());
    for chunk in msg.chunks(64) {
        let mut w = [0u32; 64];
        for i in 0..16 {
            w[i] = u32::from_be_bytes(chunk[4 * i..4 * i + 4].try_into().unwrap());
        }
        for i in 16..64 {
            let s0 = w[i - 15].rotate_right(7) ^ w[i - 15].rotate_right(18) ^ (w[i - 15] >> 3);
            let s1 = w[i - 2].rotate_right(17) ^ w[i - 2].rotate_right(19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16]
                .wrapping_add(s0)
                .wrapping_add(w[i - 7])
                .wrapping_add(s1);
        }
        let [mut a, mut b, mut c, mut d, mut e, mut f, mut g, mut hh] = h;
        for i in 0..64 {
            let s1 = e.rotate_right(6) ^ e.rotate_right(11) ^ e.rotate_right(25);
            let ch = (e & f) ^ (!e & g);
            let t1 = hh
                .wrapping_add(s1)
                .wrapping_add(ch)
                .wrapping_add(K[i])
                .wrapping_add(w[i]);
            let s0 = a.rotate_right(2) ^ a.rotate_right(13) ^ a.rotate_right(22);
            let maj = (a & b) ^ (a & c) ^ (b & c);
            let t2 = s0.wrapping_add(maj);
            hh = g;
            g = f;
            f = e;
            e = d.wrapping_add(t1);
            d = c;
            c = b;
            b = a;
            a = t1.wrapping_add(t2);
        }
        for (x, y) in h.iter_mut().zip([a, b, c, d, e, f, g, hh]) {
            *x = x.wrapping_add(y);
        }
    }
    let mut out = [0u8; 32];
    for (i, word) in h.iter().enumerate() {
        out[4 * i..4 * i + 4].copy_from_slice(&word.to_be_bytes());
    }
    out
}

/// Tips, then pubkey, then the nonce as 8 big-endian bytes.
pub fn ticket_hash(tips: &[[u8; 32]], pubkey: &[u8; 32], nonce: u64) -> [u8; 32] {
    let mut bytes = Vec::new();
    for t in tips {
        bytes.extend_from_slice(t);
    }
    bytes.extend_from_slice(pubkey);
    bytes.extend_from_slice(&nonce.to_be_bytes());
    sha256(&bytes)
}

pub fn zero_bits(h: &[u8; 32]) -> u32 {
    let mut n = 0;
    for bit in 0..256 {
        if h[bit / 8] & (0x80 >> (bit % 8)) != 0 {
            break;
        }
        n += 1;
    }
    n
}

/// Value of the last `p` bits of the hash.
pub fn chain_index(h: &[u8; 32], p: u32) -> u32 {
    let mut v = 0u32;
    for bit in (256 - p as usize)..256 {
        v = (v << 1) | ((h[bit / 8] >> (7 - bit % 8)) & 1) as u32;
    }
    v
}

pub fn block_id(index: u32, prev: &[u8; 32], payload: &[u8], ticket_hash: &[u8; 32]) -> [u8; 32] {
    let mut bytes = index.to_be_bytes().to_vec();
    bytes.extend_from_slice(prev);
    bytes.extend_from_slice(&sha256(payload));
    bytes.extend_from_slice(ticket_hash);
    sha256(&bytes)
}

pub fn genesis_id(index: u32, p: u32, d: u32) -> [u8; 32] {
    let mut bytes = b"MULTISTRAND-GENESIS".to_vec();
    bytes.extend_from_slice(&index.to_be_bytes());
    bytes.push(p as u8);
    bytes.extend_from_slice(&(d as u16).to_be_bytes());
    sha256(&bytes)
}
