use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{MaskImage, RasterImage, ValueRange};

/// Flash count of a full capture; fixtures may use fewer.
pub const FULL_FLASH_COUNT: usize = 18;

/// Face-parsing regions used to vary the soft-shadow filter radius.
#[derive(Clone, Debug, PartialEq)]
pub struct Parsing {
    pub nose: MaskImage,
    pub mouth: MaskImage,
}

/// One subject and pose: per-flash images, the room-lights-only image, and masks.
#[derive(Clone, Debug, PartialEq)]
pub struct OlatCapture {
    pub id: String,
    pub flash_images: Vec<RasterImage>,
    pub room_image: RasterImage,
    pub foreground: MaskImage,
    pub parsing: Parsing,
}

impl OlatCapture {
    pub fn height(&self) -> usize {
        self.room_image.height()
    }

    pub fn width(&self) -> usize {
        self.room_image.width()
    }

    /// Checks sizes, ranges, binary masks and the region layout.
    pub fn validate(&self) -> Result<()> {
        if self.flash_images.is_empty() {
            return Err(Error::contract("capture has no flash images"));
        }
        let (h, w) = (self.height(), self.width());
        let rgb_unit = |img: &RasterImage, what: &str| -> Result<()> {
            if img.height() != h || img.width() != w {
                return Err(Error::contract(format!("{what} is {}x{}, capture is {h}x{w}", img.height(), img.width())));
            }
            if img.channels() != 3 || img.range() != ValueRange::Unit {
                return Err(Error::contract(format!("{what} must be a unit-range RGB image")));
            }
            Ok(())
        };
        rgb_unit(&self.room_image, "room image")?;
        for (i, f) in self.flash_images.iter().enumerate() {
            rgb_unit(f, &format!("flash image {i}"))?;
        }
        for (m, what) in [
            (&self.foreground, "foreground"),
            (&self.parsing.nose, "nose mask"),
            (&self.parsing.mouth, "mouth mask"),
        ] {
            if m.height() != h || m.width() != w {
                return Err(Error::contract(format!("{what} does not match the capture size")));
            }
            if !m.is_binary() {
                return Err(Error::contract(format!("{what} must be binary")));
            }
        }
        if self.foreground.count_nonzero() == 0 {
            return Err(Error::contract("foreground mask is empty"));
        }
        regions(&self.foreground, &self.parsing).map(|_| ())
    }
}

/// Splits the foreground into nose, mouth and everything else.
///
/// Fails when nose and mouth overlap or either leaves the foreground.
pub fn regions(foreground: &MaskImage, parsing: &Parsing) -> Result<[MaskImage; 3]> {
    let (nose, mouth) = (&parsing.nose, &parsing.mouth);
    let overlap = nose.zip_map(mouth, |a, b| a * b)?;
    if overlap.count_nonzero() > 0 {
        return Err(Error::contract("nose and mouth masks overlap"));
    }
    let outside = nose.zip_map(mouth, |a, b| a.max(b))?.zip_map(foreground, |p, f| if p > f { 1.0 } else { 0.0 })?;
    if outside.count_nonzero() > 0 {
        return Err(Error::contract("parsing regions extend outside the foreground"));
    }
    let other = foreground
        .zip_map(nose, |f, n| f - n)?
        .zip_map(mouth, |r, m| r - m)?;
    Ok([nose.clone(), mouth.clone(), other])
}
