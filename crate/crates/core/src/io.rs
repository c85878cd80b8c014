//! Event-stream serialization.
//!
//! Two formats are supported:
//!
//! * binary, little-endian: a 24-byte header (`EVST`, u16 version, u16 width,
//!   u16 height, u64 event count, 6 zero bytes) followed by 13-byte records
//!   (u64 t_us, u16 x, u16 y, i8 polarity);
//! * CSV with the header `t_us,x,y,p` and `p` in `{1,-1}`.
//!
//! Readers validate timestamp monotonicity and pixel bounds.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::event::{Event, Polarity};

pub const MAGIC: [u8; 4] = *b"EVST";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
pub const RECORD_LEN: usize = 13;
pub const CSV_HEADER: &str = "t_us,x,y,p";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Binary,
    Csv,
}

impl EventFormat {
    /// `.csv` selects CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::Binary,
        }
    }
}

/// A decoded stream together with the sensor size it was validated against.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<Event>,
}

/// Header of a binary event file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryHeader {
    pub width: u16,
    pub height: u16,
    pub count: u64,
}

impl BinaryHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&VERSION.to_le_bytes());
        b[6..8].copy_from_slice(&self.width.to_le_bytes());
        b[8..10].copy_from_slice(&self.height.to_le_bytes());
        b[10..18].copy_from_slice(&self.count.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; HEADER_LEN]) -> Result<Self> {
        if b[0..4] != MAGIC {
            return Err(Error::parse(0, "bad magic, expected EVST"));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return Err(Error::parse(4, format!("unsupported version {version}")));
        }
        let width = u16::from_le_bytes([b[6], b[7]]);
        let height = u16::from_le_bytes([b[8], b[9]]);
        if width == 0 || height == 0 {
            return Err(Error::parse(6, "zero sensor dimension"));
        }
        let count = u64::from_le_bytes(b[10..18].try_into().expect("8 bytes"));
        if b[18..24].iter().any(|&z| z != 0) {
            return Err(Error::parse(18, "reserved header bytes must be zero"));
        }
        Ok(BinaryHeader {
            width,
            height,
            count,
        })
    }
}

fn encode_record(e: &Event) -> [u8; RECORD_LEN] {
    let mut r = [0u8; RECORD_LEN];
    r[0..8].copy_from_slice(&e.t.to_le_bytes());
    r[8..10].copy_from_slice(&e.x.to_le_bytes());
    r[10..12].copy_from_slice(&e.y.to_le_bytes());
    r[12] = e.polarity.as_i8() as u8;
    r
}

/// Tracks ordering and bounds while a stream is decoded or encoded.
#[derive(Debug, Clone)]
pub struct StreamValidator {
    width: u16,
    height: u16,
    previous: Option<u64>,
    index: u64,
}

impl StreamValidator {
    pub fn new(width: u16, height: u16) -> Self {
        StreamValidator {
            width,
            height,
            previous: None,
            index: 0,
        }
    }

    pub fn check(&mut self, t: u64, x: u32, y: u32) -> Result<()> {
        if let Some(prev) = self.previous {
            if t < prev {
                return Err(Error::Ordering {
                    index: self.index,
                    previous: prev,
                    t,
                });
            }
        }
        if x >= u32::from(self.width) || y >= u32::from(self.height) {
            return Err(Error::Bounds {
                index: self.index,
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        self.previous = Some(t);
        self.index += 1;
        Ok(())
    }
}

/// Streaming decoder for the binary format.
pub struct BinaryEventReader<R> {
    inner: R,
    header: BinaryHeader,
    validator: StreamValidator,
    read: u64,
    failed: bool,
}

impl<R: Read> BinaryEventReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut hb = [0u8; HEADER_LEN];
        read_full(&mut inner, &mut hb, 0)?;
        let header = BinaryHeader::from_bytes(&hb)?;
        Ok(BinaryEventReader {
            inner,
            header,
            validator: StreamValidator::new(header.width, header.height),
            read: 0,
            failed: false,
        })
    }

    pub fn header(&self) -> BinaryHeader {
        self.header
    }

    fn offset(&self) -> u64 {
        HEADER_LEN as u64 + self.read * RECORD_LEN as u64
    }

    fn next_event(&mut self) -> Result<Option<Event>> {
        if self.read == self.header.count {
            // Anything after the declared records is a framing error.
            let mut extra = [0u8; 1];
            return match self.inner.read(&mut extra)? {
                0 => Ok(None),
                _ => Err(Error::parse(
                    self.offset(),
                    "trailing bytes after last record",
                )),
            };
        }
        let offset = self.offset();
        let mut r = [0u8; RECORD_LEN];
        read_full(&mut self.inner, &mut r, offset)?;
        let t = u64::from_le_bytes(r[0..8].try_into().expect("8 bytes"));
        let x = u16::from_le_bytes([r[8], r[9]]);
        let y = u16::from_le_bytes([r[10], r[11]]);
        let polarity = Polarity::from_i8(r[12] as i8).ok_or_else(|| {
            Error::parse(offset + 12, format!("bad polarity byte {}", r[12] as i8))
        })?;
        self.validator.check(t, u32::from(x), u32::from(y))?;
        self.read += 1;
        Ok(Some(Event { t, x, y, polarity }))
    }
}

impl<R: Read> Iterator for BinaryEventReader<R> {
    type Item = Result<Event>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.next_event() {
            Ok(Some(e)) => Some(Ok(e)),
            Ok(None) => None,
            Err(err) => {
                self.failed = true;
                Some(Err(err))
            }
        }
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8], offset: u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::parse(
                    offset + filled as u64,
                    "unexpected end of file",
                ))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(source: R) -> Result<EventStream> {
    let reader = BinaryEventReader::new(source)?;
    let header = reader.header();
    let cap = usize::try_from(header.count).unwrap_or(0).min(1 << 26);
    let mut events = Vec::with_capacity(cap);
    for e in reader {
        events.push(e?);
    }
    Ok(EventStream {
        width: header.width,
        height: header.height,
        events,
    })
}

pub fn write_binary<W: Write>(
    mut sink: W,
    events: &[Event],
    width: u16,
    height: u16,
) -> Result<()> {
    let mut validator = StreamValidator::new(width, height);
    for e in events {
        validator.check(e.t, u32::from(e.x), u32::from(e.y))?;
    }
    let header = BinaryHeader {
        width,
        height,
        count: events.len() as u64,
    };
    sink.write_all(&header.to_bytes())?;
    let mut buf = Vec::with_capacity(RECORD_LEN * 4096);
    for chunk in events.chunks(4096) {
        buf.clear();
        for e in chunk {
            buf.extend_from_slice(&encode_record(e));
        }
        sink.write_all(&buf)?;
    }
    sink.flush()?;
    Ok(())
}

/// Reads the CSV format. CSV carries no geometry, so the sensor size is
/// supplied by the caller; `None` skips the bounds check and infers the size
/// from the largest coordinates present.
pub fn read_csv<R: Read>(source: R, dims: Option<(u16, u16)>) -> Result<EventStream> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(e, 0))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if headers != CSV_HEADER {
        return Err(Error::parse(
            0,
            format!("expected header `{CSV_HEADER}`, got `{headers}`"),
        ));
    }
    let (width, height) = dims.unwrap_or((u16::MAX, u16::MAX));
    let mut validator = StreamValidator::new(width, height);
    let mut events = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let offset = rdr.position().byte();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(e, offset)),
        }
        if record.len() != 4 {
            return Err(Error::parse(
                offset,
                format!("expected 4 fields, got {}", record.len()),
            ));
        }
        let field = |i: usize| -> Result<i64> {
            record[i].parse::<i64>().map_err(|_| {
                Error::parse(
                    offset,
                    format!("field {} is not an integer: `{}`", i, &record[i]),
                )
            })
        };
        let t = field(0)?;
        let x = field(1)?;
        let y = field(2)?;
        let p = field(3)?;
        if t < 0 {
            return Err(Error::parse(offset, "negative timestamp"));
        }
        if !(0..=i64::from(u16::MAX)).contains(&x) || !(0..=i64::from(u16::MAX)).contains(&y) {
            return Err(Error::Bounds {
                index: events.len() as u64,
                x: x.clamp(0, i64::from(u32::MAX)) as u32,
                y: y.clamp(0, i64::from(u32::MAX)) as u32,
                width,
                height,
            });
        }
        let polarity = i8::try_from(p)
            .ok()
            .and_then(Polarity::from_i8)
            .ok_or_else(|| Error::parse(offset, format!("bad polarity {p}")))?;
        validator.check(t as u64, x as u32, y as u32)?;
        events.push(Event::new(t as u64, x as u16, y as u16, polarity));
    }
    let (width, height) = match dims {
        Some(d) => d,
        None => {
            let w = events
                .iter()
                .map(|e| e.x)
                .max()
                .map_or(1, |m| m.saturating_add(1));
            let h = events
                .iter()
                .map(|e| e.y)
                .max()
                .map_or(1, |m| m.saturating_add(1));
            (w, h)
        }
    };
    Ok(EventStream {
        width,
        height,
        events,
    })
}

fn csv_error(e: csv::Error, fallback: u64) -> Error {
    let offset = e.position().map_or(fallback, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(offset, format!("{other:?}")),
    }
}

pub fn write_csv<W: Write>(sink: W, events: &[Event], width: u16, height: u16) -> Result<()> {
    let mut validator = StreamValidator::new(width, height);
    let mut w = BufWriter::new(sink);
    writeln!(w, "{CSV_HEADER}")?;
    for e in events {
        validator.check(e.t, u32::from(e.x), u32::from(e.y))?;
        writeln!(w, "{},{},{},{}", e.t, e.x, e.y, e.polarity.as_i8())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events<R: Read>(
    source: R,
    format: EventFormat,
    dims: Option<(u16, u16)>,
) -> Result<EventStream> {
    match format {
        EventFormat::Binary => {
            let stream = read_binary(source)?;
            if let Some((w, h)) = dims {
                if (w, h) != (stream.width, stream.height) {
                    return Err(Error::config(format!(
                        "file declares a {}x{} sensor, expected {w}x{h}",
                        stream.width, stream.height
                    )));
                }
            }
            Ok(stream)
        }
        EventFormat::Csv => read_csv(source, dims),
    }
}

pub fn write_events<W: Write>(
    sink: W,
    events: &[Event],
    width: u16,
    height: u16,
    format: EventFormat,
) -> Result<()> {
    match format {
        EventFormat::Binary => write_binary(BufWriter::new(sink), events, width, height),
        EventFormat::Csv => write_csv(sink, events, width, height),
    }
}

pub fn read_events_file(path: &Path, dims: Option<(u16, u16)>) -> Result<EventStream> {
    let f = BufReader::new(File::open(path)?);
    read_events(f, EventFormat::from_path(path), dims)
}

pub fn write_events_file(path: &Path, events: &[Event], width: u16, height: u16) -> Result<()> {
    let f = File::create(path)?;
    write_events(f, events, width, height, EventFormat::from_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u64, x: u16, y: u16, p: i8) -> Event {
        Event::new(t, x, y, Polarity::from_i8(p).unwrap())
    }

    #[test]
    fn empty_binary_is_header_only() {
        let mut buf = Vec::new();
        write_binary(&mut buf, &[], 16, 16).unwrap();
        assert_eq!(buf.len(), HEADER_LEN);
        let s = read_binary(&buf[..]).unwrap();
        assert!(s.events.is_empty());
        assert_eq!((s.width, s.height), (16, 16));
    }

    #[test]
    fn single_record_layout() {
        let mut buf = Vec::new();
        write_binary(
            &mut buf,
            &[ev(0x0102030405060708, 0x0a0b, 0x0c0d, -1)],
            0x1000,
            0x1000,
        )
        .unwrap();
        assert_eq!(&buf[0..4], b"EVST");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..8], &[0x00, 0x10]);
        assert_eq!(&buf[10..18], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&buf[18..24], &[0; 6]);
        assert_eq!(
            &buf[24..],
            &[8, 7, 6, 5, 4, 3, 2, 1, 0x0b, 0x0a, 0x0d, 0x0c, 0xff]
        );
    }

    #[test]
    fn csv_single_row() {
        let src = "t_us,x,y,p\n1000,5,7,1\n";
        let s = read_csv(src.as_bytes(), Some((16, 16))).unwrap();
        assert_eq!(s.events, vec![ev(1000, 5, 7, 1)]);
    }

    #[test]
    fn csv_empty_with_header() {
        let s = read_csv("t_us,x,y,p\n".as_bytes(), Some((4, 4))).unwrap();
        assert!(s.events.is_empty());
    }

    #[test]
    fn csv_errors_carry_offsets() {
        let src = "t_us,x,y,p\n1,1,1,1\nabc,1,1,1\n";
        match read_csv(src.as_bytes(), Some((4, 4))) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 19),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_csv("t_us,x,y,p\n1,1,1,2\n".as_bytes(), Some((4, 4))),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            read_csv("t,x,y,p\n".as_bytes(), Some((4, 4))),
            Err(Error::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn ordering_and_bounds_are_enforced() {
        let src = "t_us,x,y,p\n10,1,1,1\n5,1,1,1\n";
        assert!(matches!(
            read_csv(src.as_bytes(), Some((4, 4))),
            Err(Error::Ordering {
                index: 1,
                previous: 10,
                t: 5
            })
        ));
        let src = "t_us,x,y,p\n10,4,1,1\n";
        assert!(matches!(
            read_csv(src.as_bytes(), Some((4, 4))),
            Err(Error::Bounds { .. })
        ));

        let mut buf = Vec::new();
        assert!(matches!(
            write_binary(&mut buf, &[ev(5, 0, 0, 1), ev(4, 0, 0, 1)], 4, 4),
            Err(Error::Ordering { .. })
        ));
    }

    #[test]
    fn truncated_and_trailing_binary() {
        let mut buf = Vec::new();
        write_binary(&mut buf, &[ev(1, 0, 0, 1), ev(2, 1, 1, -1)], 4, 4).unwrap();
        let short = &buf[..buf.len() - 3];
        match read_binary(short) {
            Err(Error::Parse { offset, .. }) => {
                assert_eq!(offset, (HEADER_LEN + RECORD_LEN + 10) as u64)
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_binary(&long[..]), Err(Error::Parse { .. })));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_binary(&bad[..]),
            Err(Error::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn binary_bounds_checked_against_header() {
        let mut buf = Vec::new();
        write_binary(&mut buf, &[ev(1, 3, 3, 1)], 4, 4).unwrap();
        // shrink declared width to 3
        buf[6] = 3;
        assert!(matches!(read_binary(&buf[..]), Err(Error::Bounds { .. })));
    }
}
