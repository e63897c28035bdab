//! Packed binary codes, out-of-sample encoding and exhaustive Hamming ranking.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::data::{apply_center, read_full, Modality};
use crate::error::{Error, Result};
use crate::linalg::{matmul, DenseMatrix};
use crate::model::{sign, EdshModel};

pub const CODES_MAGIC: &[u8; 8] = b"EDSHBIN1";
const CODES_HEADER_LEN: u64 = 16;

/// `n` codes of `k` bits. Bit `j` of code `i` lives in word
/// `i * words_per_code + j / 64` at position `j % 64`; padding bits are zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    n: usize,
    k: usize,
    words: Vec<u64>,
}

#[inline]
pub fn words_per_code(k: usize) -> usize {
    k.div_ceil(64)
}

impl PackedCodes {
    /// Builds codes from raw words, checking length and zero padding.
    pub fn from_words(n: usize, k: usize, words: Vec<u64>) -> Result<Self> {
        let w = words_per_code(k);
        if words.len() != n * w {
            return Err(Error::shape(
                "packed codes",
                format!("{} words for {n} codes of {k} bits", words.len()),
            ));
        }
        if let Some(i) = first_bad_padding(k, &words) {
            return Err(Error::Argument(format!("code {i} has padding bits set")));
        }
        Ok(PackedCodes { n, k, words })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bits(&self) -> usize {
        self.k
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn code(&self, i: usize) -> &[u64] {
        let w = words_per_code(self.k);
        &self.words[i * w..(i + 1) * w]
    }

    pub fn bit(&self, i: usize, j: usize) -> bool {
        let w = words_per_code(self.k);
        (self.words[i * w + j / 64] >> (j % 64)) & 1 == 1
    }

    /// Single-code view of code `i`.
    pub fn slice(&self, i: usize) -> PackedCodes {
        PackedCodes {
            n: 1,
            k: self.k,
            words: self.code(i).to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let n = u32::try_from(self.n).map_err(|_| Error::shape("codes", "n exceeds u32"))?;
        let k = u32::try_from(self.k).map_err(|_| Error::shape("codes", "k exceeds u32"))?;
        w.write_all(CODES_MAGIC)?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&k.to_le_bytes())?;
        for word in &self.words {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PackedCodes> {
        Self::read_from(&mut BufReader::new(fs::File::open(path)?))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<PackedCodes> {
        let mut header = [0u8; CODES_HEADER_LEN as usize];
        let got = read_full(r, &mut header)?;
        if got < 8 || &header[..8] != CODES_MAGIC {
            return Err(Error::format(0, "missing EDSHBIN1 magic"));
        }
        if got < header.len() {
            return Err(Error::format(
                got as u64,
                "truncated header (expected 16 bytes)",
            ));
        }
        let n = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let k = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        if k == 0 && n > 0 {
            return Err(Error::format(12, "code length is zero"));
        }
        let w = words_per_code(k);
        let count = n
            .checked_mul(w)
            .ok_or_else(|| Error::format(8, "declared size overflows"))?;
        let mut words = Vec::with_capacity(count.min(1 << 24));
        let mut buf = [0u8; 8];
        for idx in 0..count {
            let offset = CODES_HEADER_LEN + 8 * idx as u64;
            let got = read_full(r, &mut buf)?;
            if got < 8 {
                return Err(Error::format(
                    offset + got as u64,
                    format!("truncated payload: header declares {n} codes of {k} bits, found {idx} words"),
                ));
            }
            words.push(u64::from_le_bytes(buf));
        }
        let end = CODES_HEADER_LEN + 8 * count as u64;
        let mut probe = [0u8; 1];
        if read_full(r, &mut probe)? != 0 {
            return Err(Error::format(end, "trailing bytes after payload"));
        }
        if let Some(i) = first_bad_padding(k, &words) {
            let offset = CODES_HEADER_LEN + 8 * ((i + 1) * w - 1) as u64;
            return Err(Error::format(
                offset,
                format!("code {i} has padding bits set"),
            ));
        }
        Ok(PackedCodes { n, k, words })
    }
}

fn padding_mask(k: usize) -> u64 {
    match k % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

fn first_bad_padding(k: usize, words: &[u64]) -> Option<usize> {
    let w = words_per_code(k);
    if w == 0 {
        return None;
    }
    let mask = padding_mask(k);
    words
        .chunks_exact(w)
        .position(|code| code[w - 1] & !mask != 0)
}

/// Packs a `k x n` matrix of +-1 entries, one code per column.
pub fn pack(b: &DenseMatrix) -> Result<PackedCodes> {
    let (k, n) = b.shape();
    let w = words_per_code(k);
    let mut words = vec![0u64; n * w];
    for j in 0..k {
        let (word, bit) = (j / 64, j % 64);
        for (i, &v) in b.row(j).iter().enumerate() {
            if v == 1.0 {
                words[i * w + word] |= 1u64 << bit;
            } else if v != -1.0 {
                return Err(Error::Encoding {
                    row: j,
                    col: i,
                    value: v,
                });
            }
        }
    }
    Ok(PackedCodes { n, k, words })
}

/// Inverse of [`pack`]: a `k x n` matrix of +-1.
pub fn unpack(codes: &PackedCodes) -> DenseMatrix {
    DenseMatrix::from_fn(
        codes.k,
        codes.n,
        |j, i| {
            if codes.bit(i, j) {
                1.0
            } else {
                -1.0
            }
        },
    )
}

/// Hashes raw (uncentered) features of modality `m`, one sample per column.
///
/// Codes are `sign(R W_m (x - mean_m))`, or `sign(W_m (x - mean_m))` when
/// `use_rotation` is false.
pub fn encode(
    model: &EdshModel,
    x: &DenseMatrix,
    m: Modality,
    use_rotation: bool,
) -> Result<PackedCodes> {
    let w = model.w(m);
    if x.rows() != w.cols() {
        return Err(Error::shape(
            "encode",
            format!(
                "modality {} expects {} feature rows, got {}",
                m.index(),
                w.cols(),
                x.rows()
            ),
        ));
    }
    let centered = apply_center(x, model.centering.mean(m))?;
    let projector = if use_rotation {
        matmul(&model.r, w)?
    } else {
        w.clone()
    };
    pack(&matmul(&projector, &centered)?.map(sign))
}

#[inline]
fn code_distance(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Hamming distance between codes `i` and `j` of the same set.
pub fn hamming(codes: &PackedCodes, i: usize, j: usize) -> Result<u32> {
    if i >= codes.n || j >= codes.n {
        return Err(Error::Argument(format!(
            "code index ({i}, {j}) out of range for {} codes",
            codes.n
        )));
    }
    Ok(code_distance(codes.code(i), codes.code(j)))
}

/// Hamming distance between code `i` of `a` and code `j` of `b`.
pub fn hamming_between(a: &PackedCodes, i: usize, b: &PackedCodes, j: usize) -> Result<u32> {
    if a.k != b.k {
        return Err(Error::shape("hamming", format!("{} vs {} bits", a.k, b.k)));
    }
    if i >= a.n || j >= b.n {
        return Err(Error::Argument(format!(
            "code index ({i}, {j}) out of range"
        )));
    }
    Ok(code_distance(a.code(i), b.code(j)))
}

/// One ranked database hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub index: usize,
    pub distance: u32,
}

/// Ranks the database by Hamming distance to the single code in `query`.
///
/// Ties are broken by ascending database index; at most `top_m` hits are
/// returned.
pub fn rank(query: &PackedCodes, db: &PackedCodes, top_m: usize) -> Result<Vec<Hit>> {
    if query.n != 1 {
        return Err(Error::Argument(format!(
            "rank expects a single query code, got {}",
            query.n
        )));
    }
    rank_code(query.code(0), query.k, db, top_m)
}

fn rank_code(q: &[u64], k: usize, db: &PackedCodes, top_m: usize) -> Result<Vec<Hit>> {
    if k != db.k {
        return Err(Error::shape(
            "rank",
            format!("query has {k} bits, database {}", db.k),
        ));
    }
    if top_m == 0 {
        return Err(Error::Argument("top_m must be >= 1".into()));
    }
    // Distances lie in 0..=k, so a counting sort over distance gives the
    // (distance, index) order in linear time.
    let distances: Vec<u32> = (0..db.n).map(|i| code_distance(q, db.code(i))).collect();
    let mut starts = vec![0usize; k + 2];
    for &d in &distances {
        starts[d as usize + 1] += 1;
    }
    for d in 1..starts.len() {
        starts[d] += starts[d - 1];
    }
    let mut order = vec![0usize; db.n];
    for (i, &d) in distances.iter().enumerate() {
        order[starts[d as usize]] = i;
        starts[d as usize] += 1;
    }
    Ok(order
        .into_iter()
        .take(top_m.min(db.n))
        .map(|index| Hit {
            index,
            distance: distances[index],
        })
        .collect())
}

/// Ranks every code of `queries` against `db`. Queries are independent, so
/// they may be spread over a rayon pool; the output order is query order.
pub fn rank_all(queries: &PackedCodes, db: &PackedCodes, top_m: usize) -> Result<Vec<Vec<Hit>>> {
    (0..queries.n)
        .into_par_iter()
        .map(|i| rank_code(queries.code(i), queries.k, db, top_m))
        .collect()
}
