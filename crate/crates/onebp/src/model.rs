//! The two embedding tables (user tower and item tower) and dot-product
//! scoring. Entries are stored as f32; dot products accumulate in f64.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"OBP1";
const INIT_STD: f32 = 0.1;

/// Two dense embedding matrices: M x d user rows and N x d item rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    num_users: usize,
    num_items: usize,
    dim: usize,
    user_emb: Vec<f32>,
    item_emb: Vec<f32>,
}

impl EmbeddingModel {
    /// Initializes every entry i.i.d. Gaussian(0, 0.1) from a seeded
    /// generator; identical (M, N, d, seed) give bit-identical matrices.
    pub fn random_init(num_users: usize, num_items: usize, dim: usize, seed: u64) -> Self {
        assert!(num_users > 0 && num_items > 0 && dim > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, INIT_STD).unwrap();
        let user_emb = (0..num_users * dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        let item_emb = (0..num_items * dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Self {
            num_users,
            num_items,
            dim,
            user_emb,
            item_emb,
        }
    }

    pub fn from_parts(
        num_users: usize,
        num_items: usize,
        dim: usize,
        user_emb: Vec<f32>,
        item_emb: Vec<f32>,
    ) -> Result<Self> {
        if user_emb.len() != num_users * dim || item_emb.len() != num_items * dim {
            return Err(Error::DimensionMismatch(format!(
                "embedding buffers do not match {num_users}x{dim} and {num_items}x{dim}"
            )));
        }
        Ok(Self {
            num_users,
            num_items,
            dim,
            user_emb,
            item_emb,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn user_row(&self, user: u32) -> &[f32] {
        let start = user as usize * self.dim;
        &self.user_emb[start..start + self.dim]
    }

    pub fn item_row(&self, item: u32) -> &[f32] {
        let start = item as usize * self.dim;
        &self.item_emb[start..start + self.dim]
    }

    pub(crate) fn user_row_mut(&mut self, user: u32) -> &mut [f32] {
        let start = user as usize * self.dim;
        &mut self.user_emb[start..start + self.dim]
    }

    pub(crate) fn item_row_mut(&mut self, item: u32) -> &mut [f32] {
        let start = item as usize * self.dim;
        &mut self.item_emb[start..start + self.dim]
    }

    pub fn user_matrix(&self) -> &[f32] {
        &self.user_emb
    }

    pub fn item_matrix(&self) -> &[f32] {
        &self.item_emb
    }

    /// Dot product of user row and item row.
    pub fn score(&self, user: u32, item: u32) -> Result<f64> {
        if user as usize >= self.num_users || item as usize >= self.num_items {
            return Err(Error::IndexOutOfRange(format!(
                "score({user}, {item}) on {}x{} model",
                self.num_users, self.num_items
            )));
        }
        Ok(dot_f64(self.user_row(user), self.item_row(item)))
    }

    /// Scores the user against every item; element j equals `score(user, j)`.
    pub fn score_all_items(&self, user: u32) -> Result<Vec<f64>> {
        if user as usize >= self.num_users {
            return Err(Error::IndexOutOfRange(format!("user {user}")));
        }
        let u = self.user_row(user);
        Ok((0..self.num_items as u32)
            .map(|j| dot_f64(u, self.item_row(j)))
            .collect())
    }

    /// Binary dump: magic `OBP1`, then M, N, d as little-endian u64, then the
    /// row-major user matrix followed by the item matrix as little-endian f32.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.num_users as u64).to_le_bytes())?;
        out.write_all(&(self.num_items as u64).to_le_bytes())?;
        out.write_all(&(self.dim as u64).to_le_bytes())?;
        for &v in self.user_emb.iter().chain(&self.item_emb) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidCheckpoint("bad magic bytes".into()));
        }
        let mut word = [0u8; 8];
        let mut read_u64 = |input: &mut R| -> Result<u64> {
            input.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let num_users = read_u64(&mut input)? as usize;
        let num_items = read_u64(&mut input)? as usize;
        let dim = read_u64(&mut input)? as usize;
        if num_users == 0 || num_items == 0 || dim == 0 {
            return Err(Error::InvalidCheckpoint("zero dimension".into()));
        }
        let read_matrix = |input: &mut R, len: usize| -> Result<Vec<f32>> {
            let mut buf = vec![0u8; len * 4];
            input.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect())
        };
        let user_emb = read_matrix(&mut input, num_users * dim)?;
        let item_emb = read_matrix(&mut input, num_items * dim)?;
        Self::from_parts(num_users, num_items, dim, user_emb, item_emb)
    }

    /// CSV export with header `entity,index,dim0..dim{d-1}`.
    pub fn write_embeddings_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "entity,index")?;
        for d in 0..self.dim {
            write!(out, ",dim{d}")?;
        }
        writeln!(out)?;
        for (entity, rows, count) in [
            ("user", &self.user_emb, self.num_users),
            ("item", &self.item_emb, self.num_items),
        ] {
            for idx in 0..count {
                write!(out, "{entity},{idx}")?;
                for &v in &rows[idx * self.dim..(idx + 1) * self.dim] {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.user_emb
            .iter()
            .chain(&self.item_emb)
            .all(|v| v.is_finite())
    }
}

pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}
