use super::field::FieldElement;

pub const DEFAULT_FRAC_BITS: u32 = 8;

/// Non-negative fixed-point value `raw / 2^frac_bits` embedded in the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPoint {
    pub raw: FieldElement,
    pub frac_bits: u32,
}

impl FixedPoint {
    /// Encodes `round(r * 2^frac_bits)`; negative inputs saturate at zero.
    pub fn encode(r: f64, frac_bits: u32) -> Self {
        let scaled = (r * (1u64 << frac_bits) as f64).round().max(0.0);
        Self {
            raw: FieldElement::new(scaled as u64),
            frac_bits,
        }
    }

    pub fn from_raw(raw: FieldElement, frac_bits: u32) -> Self {
        Self { raw, frac_bits }
    }

    pub fn decode(&self) -> f64 {
        decode_raw(self.raw, self.frac_bits)
    }
}

/// `raw / 2^bits` as a real; exact for raw values below 2^53.
pub fn decode_raw(raw: FieldElement, bits: u32) -> f64 {
    raw.value() as f64 / 2f64.powi(bits as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SplitMix64;

    #[test]
    fn round_trip_within_half_ulp() {
        let mut rng = SplitMix64::new(1);
        for _ in 0..2000 {
            let r = rng.uniform(0.0, 256.0);
            let fp = FixedPoint::encode(r, DEFAULT_FRAC_BITS);
            assert!((fp.decode() - r).abs() <= 2f64.powi(-(DEFAULT_FRAC_BITS as i32) - 1));
        }
        assert_eq!(FixedPoint::encode(1.0, 8).raw.value(), 256);
        assert_eq!(FixedPoint::encode(-0.5, 8).raw.value(), 0);
    }
}
