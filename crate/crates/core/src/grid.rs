use serde::{Deserialize, Serialize};

/// Dense 2-D integer image indexed by `(x, y)`, stored row-major (`y * w + x`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    w: usize,
    h: usize,
    data: Vec<i32>,
}

impl Grid {
    pub fn zeros(w: usize, h: usize) -> Self {
        Self { w, h, data: vec![0; w * h] }
    }

    pub fn from_vec(w: usize, h: usize, data: Vec<i32>) -> Self {
        assert_eq!(data.len(), w * h, "grid data length mismatch");
        Self { w, h, data }
    }

    /// Parses whitespace-separated rows, top row first.
    pub fn from_rows(text: &str) -> Self {
        let rows: Vec<Vec<i32>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| l.split_whitespace().map(|t| t.parse().expect("grid cell")).collect())
            .collect();
        let h = rows.len();
        let w = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == w), "ragged grid");
        Self::from_vec(w, h, rows.into_iter().flatten().collect())
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h
    }

    pub fn get(&self, x: usize, y: usize) -> i32 {
        self.data[y * self.w + x]
    }

    /// Value at signed coordinates, zero outside the grid.
    pub fn get_or_zero(&self, x: i64, y: i64) -> i32 {
        if self.contains(x, y) {
            self.data[y as usize * self.w + x as usize]
        } else {
            0
        }
    }

    pub fn set(&mut self, x: usize, y: usize, v: i32) {
        self.data[y * self.w + x] = v;
    }

    pub fn sum(&self) -> i64 {
        self.data.iter().map(|&v| v as i64).sum()
    }

    pub fn max(&self) -> i32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn to_rows(&self) -> String {
        let mut out = String::new();
        for y in 0..self.h {
            let row: Vec<String> = (0..self.w).map(|x| self.get(x, y).to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}
