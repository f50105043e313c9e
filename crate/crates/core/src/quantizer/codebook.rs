use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const HEADER: &str = "absa-codebook v1";

/// Slack for comparing `log2(budget)` with a real-valued bit budget.
const BIT_BUDGET_SLACK: f64 = 1e-9;

/// A partition of an indexed space into codeword cells.
///
/// Cells are nonempty and pairwise disjoint, they cover `0..num_elements()`,
/// there are at most `budget` of them, and `budget <= 2^bit_budget`. The only
/// way to get a `Codebook` is through [`Codebook::new`], which checks all of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    cells: Vec<Vec<usize>>,
    centroids: Vec<usize>,
    budget: usize,
    bit_budget: f64,
    num_elements: usize,
}

impl Codebook {
    pub fn new(
        cells: Vec<Vec<usize>>,
        centroids: Vec<usize>,
        budget: usize,
        bit_budget: f64,
    ) -> Result<Self> {
        if budget == 0 {
            return Err(Error::InvalidCodebook("budget must be at least 1".into()));
        }
        check_bit_budget(budget, bit_budget)?;
        if cells.len() > budget {
            return Err(Error::InvalidCodebook(format!(
                "{} cells exceed the budget of {budget} codewords",
                cells.len()
            )));
        }
        if centroids.len() != cells.len() {
            return Err(Error::InvalidCodebook(format!(
                "{} centroids for {} cells",
                centroids.len(),
                cells.len()
            )));
        }
        let num_elements: usize = cells.iter().map(Vec::len).sum();
        let mut seen = vec![false; num_elements];
        for (k, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::InvalidCodebook(format!("cell {k} is empty")));
            }
            for &e in cell {
                if e >= num_elements || seen[e] {
                    return Err(Error::InvalidCodebook(format!(
                        "element {e} is duplicated or out of range"
                    )));
                }
                seen[e] = true;
            }
        }
        Ok(Self {
            cells,
            centroids,
            budget,
            bit_budget,
            num_elements,
        })
    }

    /// Same partition under a different bit budget.
    pub fn with_bit_budget(mut self, bit_budget: f64) -> Result<Self> {
        check_bit_budget(self.budget, bit_budget)?;
        self.bit_budget = bit_budget;
        Ok(self)
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    pub fn centroids(&self) -> &[usize] {
        &self.centroids
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn bit_budget(&self) -> f64 {
        self.bit_budget
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn comm_policy(&self) -> CommPolicy {
        let mut mapping = vec![0; self.num_elements];
        for (k, cell) in self.cells.iter().enumerate() {
            for &e in cell {
                mapping[e] = k;
            }
        }
        CommPolicy {
            mapping,
            budget: self.budget,
        }
    }

    /// Text layout:
    ///
    /// ```text
    /// absa-codebook v1
    /// budget <|C|>
    /// bit_budget <R>
    /// centroids <mu_0> <mu_1> ...
    /// <element_index> <codeword_index>
    /// ...
    /// ```
    ///
    /// with one element line per indexed element, in element order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{HEADER}").unwrap();
        writeln!(out, "budget {}", self.budget).unwrap();
        writeln!(out, "bit_budget {}", self.bit_budget).unwrap();
        write!(out, "centroids").unwrap();
        for mu in &self.centroids {
            write!(out, " {mu}").unwrap();
        }
        out.push('\n');
        for (e, k) in self.comm_policy().mapping.iter().enumerate() {
            writeln!(out, "{e} {k}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidCodebook(m);
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad(format!("missing `{HEADER}` header")));
        }
        let mut budget = None;
        let mut bit_budget = None;
        let mut centroids = None;
        let mut mapping: Vec<usize> = Vec::new();
        for line in lines {
            let mut parts = line.split_whitespace();
            let Some(key) = parts.next() else { continue };
            match key {
                "budget" => budget = Some(parse_field(parts.next(), line)?),
                "bit_budget" => bit_budget = Some(parse_field::<f64>(parts.next(), line)?),
                "centroids" => {
                    centroids = Some(
                        parts
                            .map(|p| parse_field(Some(p), line))
                            .collect::<Result<Vec<usize>>>()?,
                    )
                }
                _ => {
                    let e: usize = parse_field(Some(key), line)?;
                    let k: usize = parse_field(parts.next(), line)?;
                    if e != mapping.len() {
                        return Err(bad(format!("element lines out of order at `{line}`")));
                    }
                    mapping.push(k);
                }
            }
        }
        let budget = budget.ok_or_else(|| bad("missing budget".into()))?;
        let bit_budget = bit_budget.ok_or_else(|| bad("missing bit_budget".into()))?;
        let centroids = centroids.ok_or_else(|| bad("missing centroids".into()))?;
        let mut cells = vec![Vec::new(); centroids.len()];
        for (e, &k) in mapping.iter().enumerate() {
            cells
                .get_mut(k)
                .ok_or_else(|| bad(format!("codeword {k} has no centroid")))?
                .push(e);
        }
        Codebook::new(cells, centroids, budget, bit_budget)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::harness::artifacts::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

fn check_bit_budget(budget: usize, bit_budget: f64) -> Result<()> {
    if !bit_budget.is_finite() || (budget as f64).log2() > bit_budget + BIT_BUDGET_SLACK {
        return Err(Error::InvalidCodebook(format!(
            "{budget} codewords do not fit a bit budget of {bit_budget} bits"
        )));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, line: &str) -> Result<T> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::InvalidCodebook(format!("cannot parse line `{line}`")))
}

/// The quantization map induced by a [`Codebook`]: element index to codeword.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommPolicy {
    mapping: Vec<usize>,
    budget: usize,
}

impl CommPolicy {
    /// Every element on codeword 0.
    pub fn constant(num_elements: usize) -> Self {
        Self {
            mapping: vec![0; num_elements],
            budget: 1,
        }
    }

    pub fn encode(&self, element: usize) -> usize {
        self.mapping[element]
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn num_elements(&self) -> usize {
        self.mapping.len()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = vec![false; self.budget];
        self.mapping.iter().all(|&k| !std::mem::replace(&mut seen[k], true))
    }
}
