//! IDX binary format: big-endian `u32` header fields followed by unsigned bytes.

use super::DatasetError;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an IDX image file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, image-major then row-major.
    pub pixels: Vec<u8>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self, field: &'static str) -> Result<u32, DatasetError> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| DatasetError::Format {
            field,
            message: format!("header truncated at byte {}", self.pos),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn magic(&mut self, expected: u32) -> Result<(), DatasetError> {
        let found = self.u32("magic")?;
        if found != expected {
            return Err(DatasetError::Format {
                field: "magic",
                message: format!("expected {expected:#010x}, found {found:#010x}"),
            });
        }
        Ok(())
    }

    fn payload(&self, field: &'static str, expected: usize) -> Result<&'a [u8], DatasetError> {
        let rest = &self.bytes[self.pos..];
        if rest.len() < expected {
            return Err(DatasetError::Format {
                field,
                message: format!("payload truncated: header promises {expected} bytes, found {}", rest.len()),
            });
        }
        if rest.len() > expected {
            return Err(DatasetError::Format {
                field: "count",
                message: format!("header count implies {expected} payload bytes but file has {}", rest.len()),
            });
        }
        Ok(rest)
    }
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages, DatasetError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(IMAGE_MAGIC)?;
    let count = r.u32("count")? as usize;
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    let pixels = r.payload("pixels", count * rows * cols)?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, DatasetError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(LABEL_MAGIC)?;
    let count = r.u32("count")? as usize;
    Ok(r.payload("labels", count)?.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> IdxImages {
        IdxImages { count: 2, rows: 2, cols: 3, pixels: vec![0, 255, 0, 255, 0, 255, 255, 255, 0, 0, 0, 0] }
    }

    #[test]
    fn images_round_trip() {
        let bytes = encode_images(&fixture());
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(parse_images(&bytes).unwrap(), fixture());
    }

    #[test]
    fn labels_round_trip() {
        let bytes = encode_labels(&[3, 1, 4]);
        assert_eq!(bytes, vec![0, 0, 8, 1, 0, 0, 0, 3, 3, 1, 4]);
        assert_eq!(parse_labels(&bytes).unwrap(), vec![3, 1, 4]);
    }

    fn field_of(r: Result<impl std::fmt::Debug, DatasetError>) -> &'static str {
        match r {
            Err(DatasetError::Format { field, .. }) => field,
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_offending_field() {
        let good = encode_images(&fixture());
        assert_eq!(field_of(parse_images(&encode_labels(&[1]))), "magic");
        assert_eq!(field_of(parse_images(&good[..10])), "rows");
        assert_eq!(field_of(parse_images(&good[..good.len() - 1])), "pixels");
        let mut long = good.clone();
        long.push(7);
        assert_eq!(field_of(parse_images(&long)), "count");
        assert_eq!(field_of(parse_labels(&good)), "magic");
        let labels = encode_labels(&[1, 2, 3]);
        assert_eq!(field_of(parse_labels(&labels[..6])), "count");
        assert_eq!(field_of(parse_labels(&labels[..9])), "labels");
    }
}
