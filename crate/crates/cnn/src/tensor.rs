//! Dense `N x H x W x C` tensors, channel-last.

use crate::CnnError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![0.0; n * h * w * c],
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self, CnnError> {
        if data.len() != n * h * w * c {
            return Err(CnnError::Shape(format!(
                "{} values for a {n}x{h}x{w}x{c} tensor",
                data.len()
            )));
        }
        Ok(Self { n, h, w, c, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    #[inline]
    pub fn index(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.h + y) * self.w + x) * self.c + c
    }

    #[inline]
    pub fn get(&self, n: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(n, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(n, y, x, c);
        self.data[i] = v;
    }

    /// Values per sample.
    pub fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    /// Stacks equally shaped `H x W x C` samples.
    pub fn stack(h: usize, w: usize, c: usize, samples: &[&[f32]]) -> Result<Self, CnnError> {
        let len = h * w * c;
        let mut data = Vec::with_capacity(samples.len() * len);
        for s in samples {
            if s.len() != len {
                return Err(CnnError::Shape(format!("sample of {} values, expected {len}", s.len())));
            }
            data.extend(s.iter().map(|&v| f64::from(v)));
        }
        Ok(Self {
            n: samples.len(),
            h,
            w,
            c,
            data,
        })
    }
}
