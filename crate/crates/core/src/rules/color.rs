//! sRGB luminance and contrast ratio.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ColorError {
    #[error("channel value {0} outside 0..=255")]
    ChannelOutOfRange(i64),
    #[error("font size must be positive, got {0}")]
    FontSize(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Rgb {
    pub const BLACK: Rgb = Rgb { r: 0, g: 0, b: 0 };
    pub const WHITE: Rgb = Rgb { r: 255, g: 255, b: 255 };

    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }

    /// Checked constructor for untrusted integer channels.
    pub fn try_from_channels(r: i64, g: i64, b: i64) -> Result<Self, ColorError> {
        let chan = |c: i64| u8::try_from(c).map_err(|_| ColorError::ChannelOutOfRange(c));
        Ok(Self { r: chan(r)?, g: chan(g)?, b: chan(b)? })
    }

    pub fn to_hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.r, self.g, self.b)
    }
}

/// Parses any CSS color; `None` for transparent or translucent values,
/// which cannot be resolved without compositing.
pub fn parse_css_color(value: &str) -> Option<Rgb> {
    let value = value.trim().trim_end_matches("!important").trim();
    if value.eq_ignore_ascii_case("transparent") {
        return None;
    }
    let color = csscolorparser::parse(value).ok()?;
    if color.a < 1.0 {
        return None;
    }
    let [r, g, b, _] = color.to_rgba8();
    Some(Rgb { r, g, b })
}

fn linearize(channel: u8) -> f64 {
    let c = f64::from(channel) / 255.0;
    if c <= 0.03928 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn relative_luminance(rgb: Rgb) -> f64 {
    0.2126 * linearize(rgb.r) + 0.7152 * linearize(rgb.g) + 0.0722 * linearize(rgb.b)
}

/// Luminance from raw integer channels, rejecting values outside 0..=255.
pub fn relative_luminance_checked(r: i64, g: i64, b: i64) -> Result<f64, ColorError> {
    Rgb::try_from_channels(r, g, b).map(relative_luminance)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorPair {
    pub foreground: Rgb,
    pub background: Rgb,
    pub font_size_px: f64,
    pub is_bold: bool,
}

impl ColorPair {
    pub fn new(foreground: Rgb, background: Rgb, font_size_px: f64, is_bold: bool) -> Result<Self, ColorError> {
        if !(font_size_px > 0.0) {
            return Err(ColorError::FontSize(font_size_px));
        }
        Ok(Self { foreground, background, font_size_px, is_bold })
    }

    /// 24 px, or 18.66 px when bold.
    pub fn is_large_text(&self) -> bool {
        self.font_size_px >= 24.0 || (self.is_bold && self.font_size_px >= 18.66)
    }

    pub fn required_ratio(&self) -> f64 {
        if self.is_large_text() {
            3.0
        } else {
            4.5
        }
    }

    pub fn ratio(&self) -> f64 {
        contrast_ratio(self.foreground, self.background)
    }

    pub fn fails(&self) -> bool {
        self.ratio() < self.required_ratio()
    }
}

pub fn contrast_ratio(a: Rgb, b: Rgb) -> f64 {
    let (la, lb) = (relative_luminance(a), relative_luminance(b));
    let (lighter, darker) = if la >= lb { (la, lb) } else { (lb, la) };
    (lighter + 0.05) / (darker + 0.05)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Per-channel linearized values, computed independently via
    // python3 -c "c=119/255; print(((c+0.055)/1.055)**2.4)".
    const GREY_119_LINEAR: f64 = 0.184474994;

    #[test]
    fn luminance_examples() {
        assert_eq!(relative_luminance(Rgb::BLACK), 0.0);
        assert!((relative_luminance(Rgb::WHITE) - 1.0).abs() < 1e-12);
        let grey = relative_luminance(Rgb::new(119, 119, 119));
        assert!((grey - GREY_119_LINEAR).abs() < 1e-6, "{grey}");
        assert!((grey - 0.1845).abs() < 1e-4);
    }

    #[test]
    fn out_of_range_channel_rejected() {
        assert_eq!(relative_luminance_checked(256, 0, 0), Err(ColorError::ChannelOutOfRange(256)));
        assert_eq!(relative_luminance_checked(0, -1, 0), Err(ColorError::ChannelOutOfRange(-1)));
        assert!(relative_luminance_checked(255, 255, 255).is_ok());
    }

    #[test]
    fn contrast_examples() {
        assert!((contrast_ratio(Rgb::BLACK, Rgb::WHITE) - 21.0).abs() < 1e-9);
        let c = Rgb::new(12, 200, 77);
        assert_eq!(contrast_ratio(c, c), 1.0);
        let grey = ColorPair::new(Rgb::new(119, 119, 119), Rgb::WHITE, 16.0, false).unwrap();
        assert!((grey.ratio() - 1.05 / (GREY_119_LINEAR + 0.05)).abs() < 1e-6);
        assert!((grey.ratio() - 4.48).abs() < 0.01);
        assert!(grey.fails());
        let large = ColorPair { font_size_px: 24.0, ..grey };
        assert!(!large.fails());
    }

    #[test]
    fn large_text_thresholds() {
        let base = ColorPair::new(Rgb::BLACK, Rgb::WHITE, 18.66, true).unwrap();
        assert!(base.is_large_text());
        assert!(!ColorPair { is_bold: false, ..base }.is_large_text());
        assert!(ColorPair::new(Rgb::BLACK, Rgb::WHITE, 0.0, false).is_err());
    }

    #[test]
    fn css_colors() {
        assert_eq!(parse_css_color("#777"), Some(Rgb::new(119, 119, 119)));
        assert_eq!(parse_css_color("rgb(255, 0, 0)"), Some(Rgb::new(255, 0, 0)));
        assert_eq!(parse_css_color("white !important"), Some(Rgb::WHITE));
        assert_eq!(parse_css_color("transparent"), None);
        assert_eq!(parse_css_color("rgba(0,0,0,0.5)"), None);
        assert_eq!(parse_css_color("var(--x)"), None);
    }

    fn rgb() -> impl Strategy<Value = Rgb> {
        (any::<u8>(), any::<u8>(), any::<u8>()).prop_map(|(r, g, b)| Rgb::new(r, g, b))
    }

    proptest! {
        #[test]
        fn ratio_symmetric_and_bounded(a in rgb(), b in rgb()) {
            let ab = contrast_ratio(a, b);
            prop_assert_eq!(ab, contrast_ratio(b, a));
            prop_assert!((1.0..=21.0 + 1e-9).contains(&ab));
        }

        #[test]
        fn ratio_monotone_in_lighter_luminance(dark in rgb(), x in rgb(), y in rgb()) {
            let ld = relative_luminance(dark);
            let (lx, ly) = (relative_luminance(x), relative_luminance(y));
            prop_assume!(lx >= ld && ly >= ld);
            if lx <= ly {
                prop_assert!(contrast_ratio(x, dark) <= contrast_ratio(y, dark) + 1e-12);
            } else {
                prop_assert!(contrast_ratio(x, dark) + 1e-12 >= contrast_ratio(y, dark));
            }
        }
    }
}
