use super::{NumericsError, Result};

/// Padding mask for one sequence: a run of real positions followed by a run
/// of padding. Because padding is always a suffix the mask is stored as
/// `(valid, len)`; the first position (the NULL token) is always real.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mask {
    valid: usize,
    len: usize,
}

impl Mask {
    /// Every position real.
    pub fn full(len: usize) -> Result<Self> {
        Self::prefix(len, len)
    }

    /// `valid` real positions out of `len`.
    pub fn prefix(valid: usize, len: usize) -> Result<Self> {
        if valid == 0 {
            return Err(NumericsError::EmptyMask);
        }
        if valid > len {
            return Err(NumericsError::MaskLength {
                op: "mask",
                mask: len,
                len: valid,
            });
        }
        Ok(Self { valid, len })
    }

    /// Validates explicit flags: at least one `true`, and no `true` after
    /// the first `false`.
    pub fn from_flags(flags: &[bool]) -> Result<Self> {
        let valid = flags.iter().take_while(|&&f| f).count();
        if flags[valid..].iter().any(|&f| f) {
            return Err(NumericsError::MaskNotPrefix);
        }
        Self::prefix(valid, flags.len())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false: a mask covers at least the NULL position.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of real (unmasked) positions.
    #[inline]
    pub fn valid(&self) -> usize {
        self.valid
    }

    #[inline]
    pub fn is_real(&self, i: usize) -> bool {
        i < self.valid
    }

    pub fn flags(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.is_real(i)).collect()
    }

    pub(crate) fn check_len(&self, op: &'static str, len: usize) -> Result<()> {
        if self.len != len {
            return Err(NumericsError::MaskLength {
                op,
                mask: self.len,
                len,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_roundtrip() {
        let m = Mask::from_flags(&[true, true, false]).unwrap();
        assert_eq!(m.valid(), 2);
        assert_eq!(m.flags(), vec![true, true, false]);
    }

    #[test]
    fn rejects_empty_support() {
        assert_eq!(
            Mask::from_flags(&[false, false]),
            Err(NumericsError::EmptyMask)
        );
        assert_eq!(Mask::from_flags(&[]), Err(NumericsError::EmptyMask));
    }

    #[test]
    fn rejects_interior_padding() {
        assert_eq!(
            Mask::from_flags(&[true, false, true]),
            Err(NumericsError::MaskNotPrefix)
        );
    }
}
