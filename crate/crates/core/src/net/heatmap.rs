use std::fmt;
use std::str::FromStr;

use crate::net::{NetError, ScaleOutputs};
use crate::tensor::{Scalar, Tensor};

/// Which map a heatmap comes from: a 1-based backbone scale or the fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScaleTag {
    Scale(usize),
    Fused,
}

impl fmt::Display for ScaleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScaleTag::Scale(s) => write!(f, "s{s}"),
            ScaleTag::Fused => f.write_str("fused"),
        }
    }
}

impl FromStr for ScaleTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("fused") {
            return Ok(ScaleTag::Fused);
        }
        let digits = t.trim_start_matches(['s', 'S', 'l', 'L']);
        digits
            .parse::<usize>()
            .ok()
            .filter(|&v| v >= 1)
            .map(ScaleTag::Scale)
            .ok_or_else(|| format!("bad scale tag `{s}` (expected 1..S or `fused`)"))
    }
}

/// Parses a comma-separated list such as `3,4,5,fused`.
pub fn parse_scale_list(list: &str) -> Result<Vec<ScaleTag>, String> {
    list.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

/// One class channel of an attention map at its native extent, unnormalised.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap<T: Scalar = f32> {
    pub class_index: usize,
    pub tag: ScaleTag,
    pub height: usize,
    pub width: usize,
    pub values: Vec<T>,
    pub range: (T, T),
}

impl<T: Scalar> Heatmap<T> {
    pub fn from_channel(map: &Tensor<T>, class_index: usize, tag: ScaleTag) -> Result<Self, NetError> {
        let s = map.shape();
        if class_index >= s.c {
            return Err(NetError::BadIndex(format!("class {class_index} of {}", s.c)));
        }
        let values = map.plane(0, class_index).to_vec();
        let range = values
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Ok(Self {
            class_index,
            tag,
            height: s.h,
            width: s.w,
            values,
            range,
        })
    }

    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::from_usize(self.values.len()).unwrap()
    }
}

impl<T: Scalar> ScaleOutputs<T> {
    /// Channel `class` of the requested map.
    pub fn heatmap(&self, class: usize, tag: ScaleTag) -> Result<Heatmap<T>, NetError> {
        let map = match tag {
            ScaleTag::Fused => &self.ecam_fused,
            ScaleTag::Scale(s) => self
                .ecam_s
                .get(s.wrapping_sub(1))
                .ok_or_else(|| NetError::BadIndex(format!("scale {s} of {}", self.ecam_s.len())))?,
        };
        Heatmap::from_channel(map, class, tag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_parse() {
        assert_eq!(
            parse_scale_list("3,4,5,fused").unwrap(),
            vec![
                ScaleTag::Scale(3),
                ScaleTag::Scale(4),
                ScaleTag::Scale(5),
                ScaleTag::Fused
            ]
        );
        assert_eq!("L2".parse::<ScaleTag>().unwrap(), ScaleTag::Scale(2));
        assert!("0".parse::<ScaleTag>().is_err());
        assert!("big".parse::<ScaleTag>().is_err());
    }

    #[test]
    fn constant_channel_gives_constant_map() {
        let t = Tensor::full((1, 2, 3, 4), 0.25f32);
        let h = Heatmap::from_channel(&t, 1, ScaleTag::Fused).unwrap();
        assert_eq!((h.height, h.width), (3, 4));
        assert!(h.values.iter().all(|&v| v == 0.25));
        assert_eq!(h.range, (0.25, 0.25));
        assert!(Heatmap::from_channel(&t, 2, ScaleTag::Fused).is_err());
    }
}
