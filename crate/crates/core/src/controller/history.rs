use crate::error::{Error, Result};

/// Mixed-radix layout of message histories.
///
/// Sender `i` contributes one digit of radix `budget_i + 1`; the extra symbol
/// `budget_i` is the pad codeword used before `d` real messages exist. Within a
/// message vector sender 0 is the most significant digit, and within a window
/// the oldest message is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryCodec {
    budgets: Vec<usize>,
    d: usize,
}

impl HistoryCodec {
    pub fn new(budgets: Vec<usize>, d: usize) -> Result<Self> {
        if budgets.is_empty() || budgets.contains(&0) {
            return Err(Error::Config("every sender needs a budget of at least 1".into()));
        }
        if d == 0 {
            return Err(Error::Config("memory depth d must be at least 1".into()));
        }
        Ok(Self { budgets, d })
    }

    pub fn budgets(&self) -> &[usize] {
        &self.budgets
    }

    pub fn senders(&self) -> usize {
        self.budgets.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn pad(&self) -> Vec<usize> {
        self.budgets.clone()
    }

    /// Number of distinct message vectors, pad included; `None` on overflow.
    pub fn message_radix(&self) -> Option<u128> {
        self.budgets
            .iter()
            .try_fold(1u128, |acc, &b| acc.checked_mul(b as u128 + 1))
    }

    /// Number of distinct histories; `None` on overflow.
    pub fn num_histories(&self) -> Option<u128> {
        self.message_radix()?.checked_pow(self.d as u32)
    }

    /// Width of the one-hot encoding fed to the neural controller.
    pub fn one_hot_width(&self) -> usize {
        self.d * self.budgets.iter().map(|b| b + 1).sum::<usize>()
    }

    pub fn check_message(&self, message: &[usize]) -> Result<()> {
        if message.len() != self.senders() {
            return Err(Error::MalformedMessage(format!(
                "expected {} codewords, got {}",
                self.senders(),
                message.len()
            )));
        }
        for (i, (&c, &b)) in message.iter().zip(&self.budgets).enumerate() {
            if c >= b {
                return Err(Error::MalformedMessage(format!(
                    "sender {i} sent codeword {c}, budget is {b}"
                )));
            }
        }
        Ok(())
    }

    fn message_code(&self, message: &[usize]) -> u128 {
        message
            .iter()
            .zip(&self.budgets)
            .fold(0u128, |acc, (&c, &b)| acc * (b as u128 + 1) + c as u128)
    }

    /// Index of a window, oldest message first.
    pub fn index_of(&self, window: &[Vec<usize>]) -> Result<usize> {
        let too_large = || Error::Capacity {
            what: "message history index",
            needed: self.num_histories().unwrap_or(u128::MAX),
            limit: usize::MAX as u128,
        };
        let radix = self.message_radix().ok_or_else(too_large)?;
        let mut index = 0u128;
        for m in window {
            index = index
                .checked_mul(radix)
                .and_then(|i| i.checked_add(self.message_code(m)))
                .ok_or_else(too_large)?;
        }
        usize::try_from(index).map_err(|_| too_large())
    }

    /// Inverse of [`HistoryCodec::index_of`].
    pub fn window_at(&self, mut index: usize) -> Vec<Vec<usize>> {
        let mut window = vec![vec![0; self.senders()]; self.d];
        for m in window.iter_mut().rev() {
            for (c, &b) in m.iter_mut().zip(&self.budgets).rev() {
                *c = index % (b + 1);
                index /= b + 1;
            }
        }
        window
    }

    /// One-hot blocks, one per (time slot, sender), oldest slot first.
    pub fn one_hot(&self, window: &[Vec<usize>], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.one_hot_width(), 0.0);
        let mut offset = 0;
        for m in window {
            for (&c, &b) in m.iter().zip(&self.budgets) {
                out[offset + c] = 1.0;
                offset += b + 1;
            }
        }
    }

    /// [`HistoryCodec::one_hot`] of a window flattened slot by slot.
    pub fn one_hot_flat(&self, flat: &[usize], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.one_hot_width(), 0.0);
        let mut offset = 0;
        for (&c, &b) in flat.iter().zip(self.budgets.iter().cycle()) {
            out[offset + c] = 1.0;
            offset += b + 1;
        }
    }
}

/// The last `d` message vectors received by the controller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageHistory {
    codec: HistoryCodec,
    window: Vec<Vec<usize>>,
}

impl MessageHistory {
    /// A window holding only pad messages.
    pub fn new(codec: HistoryCodec) -> Self {
        let window = vec![codec.pad(); codec.d()];
        Self { codec, window }
    }

    pub fn codec(&self) -> &HistoryCodec {
        &self.codec
    }

    pub fn reset(&mut self) {
        let pad = self.codec.pad();
        for m in &mut self.window {
            m.clone_from(&pad);
        }
    }

    /// Drops the oldest message and appends `message`.
    pub fn push(&mut self, message: &[usize]) -> Result<()> {
        self.codec.check_message(message)?;
        self.window.rotate_left(1);
        let newest = self.window.last_mut().expect("d >= 1");
        newest.clear();
        newest.extend_from_slice(message);
        Ok(())
    }

    pub fn latest(&self) -> &[usize] {
        self.window.last().expect("d >= 1")
    }

    pub fn window(&self) -> &[Vec<usize>] {
        &self.window
    }

    pub fn index(&self) -> Result<usize> {
        self.codec.index_of(&self.window)
    }

    pub fn one_hot(&self, out: &mut Vec<f64>) {
        self.codec.one_hot(&self.window, out)
    }

    pub fn flatten(&self) -> Vec<usize> {
        self.window.concat()
    }
}
