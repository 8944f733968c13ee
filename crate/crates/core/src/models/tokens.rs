use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token id reserved for end-of-sequence in every vocabulary.
pub const EOS: usize = 0;

/// A token sequence terminated by exactly one [`EOS`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<usize>);

impl TokenSeq {
    pub fn new(tokens: Vec<usize>, vocab_size: usize) -> Result<Self> {
        let seq = TokenSeq(tokens);
        seq.validate(vocab_size)?;
        Ok(seq)
    }

    /// Appends the terminal id to `content`.
    pub fn from_content(content: &[usize], vocab_size: usize) -> Result<Self> {
        let mut tokens = content.to_vec();
        tokens.push(EOS);
        TokenSeq::new(tokens, vocab_size)
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let Some((&last, body)) = self.0.split_last() else {
            return Err(Error::invalid("token sequence is empty"));
        };
        if last != EOS {
            return Err(Error::invalid("token sequence must end with the end-of-sequence id"));
        }
        if body.contains(&EOS) {
            return Err(Error::invalid("end-of-sequence id appears before the end"));
        }
        if let Some(&bad) = self.0.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary of {vocab_size}")));
        }
        Ok(())
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    /// Tokens without the terminal id.
    pub fn content(&self) -> &[usize] {
        &self.0[..self.0.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Tokens fed to an encoder: the content, or the terminal id alone when
    /// there is no content.
    pub fn encoder_tokens(&self) -> &[usize] {
        if self.0.len() > 1 {
            self.content()
        } else {
            &self.0
        }
    }
}
