//! Event file formats.
//!
//! CSV: one event per line, `t,x,y,p` as decimal integers, LF line endings,
//! no header. `p` is 1 for positive and 0 for negative polarity.
//!
//! Binary (all little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "EVC1"
//!      4     4  u32 version (= 1)
//!      8     2  u16 sensor width
//!     10     2  u16 sensor height
//!     12     4  reserved, zero
//!     16    13  record 0: u64 t, u16 x, u16 y, u8 p
//!     29    13  record 1 ...
//! ```
//!
//! Readers validate every record against the sensor geometry and the
//! non-decreasing timestamp contract.

use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::event::{Event, EventError, EventStream, Location, Polarity, SensorGeometry, StreamValidator};

pub const BINARY_MAGIC: &[u8; 4] = b"EVC1";
pub const BINARY_VERSION: u32 = 1;
pub const BINARY_HEADER_LEN: usize = 16;
pub const BINARY_RECORD_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventFormat {
    Csv,
    Binary,
}

impl EventFormat {
    /// `.csv` maps to CSV; everything else is treated as binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::Binary,
        }
    }
}

impl FromStr for EventFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(EventFormat::Csv),
            "bin" | "binary" => Ok(EventFormat::Binary),
            other => Err(format!("unknown event format '{other}' (expected csv or bin)")),
        }
    }
}

pub fn encode_header(geometry: SensorGeometry) -> [u8; BINARY_HEADER_LEN] {
    let mut h = [0u8; BINARY_HEADER_LEN];
    h[0..4].copy_from_slice(BINARY_MAGIC);
    h[4..8].copy_from_slice(&BINARY_VERSION.to_le_bytes());
    h[8..10].copy_from_slice(&geometry.width.to_le_bytes());
    h[10..12].copy_from_slice(&geometry.height.to_le_bytes());
    h
}

pub fn decode_header(h: &[u8; BINARY_HEADER_LEN]) -> Result<SensorGeometry, EventError> {
    if &h[0..4] != BINARY_MAGIC {
        return Err(EventError::Header(format!("bad magic {:02x?}", &h[0..4])));
    }
    let version = u32::from_le_bytes(h[4..8].try_into().unwrap());
    if version != BINARY_VERSION {
        return Err(EventError::Header(format!("unsupported version {version}")));
    }
    let width = u16::from_le_bytes([h[8], h[9]]);
    let height = u16::from_le_bytes([h[10], h[11]]);
    SensorGeometry::new(width, height).map_err(|_| {
        EventError::Header(format!("invalid geometry {width}x{height}"))
    })
}

pub fn encode_record(e: &Event) -> [u8; BINARY_RECORD_LEN] {
    let mut r = [0u8; BINARY_RECORD_LEN];
    r[0..8].copy_from_slice(&e.t.to_le_bytes());
    r[8..10].copy_from_slice(&e.x.to_le_bytes());
    r[10..12].copy_from_slice(&e.y.to_le_bytes());
    r[12] = e.polarity.to_bit();
    r
}

/// Reads the 16-byte header of a binary event file.
pub fn read_binary_header<R: Read>(source: &mut R) -> Result<SensorGeometry, EventError> {
    let mut h = [0u8; BINARY_HEADER_LEN];
    source.read_exact(&mut h).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => EventError::Header("truncated header".into()),
        _ => EventError::Io(e),
    })?;
    decode_header(&h)
}

enum Decoder<R> {
    Csv { source: R, line: String, line_no: u64 },
    Binary { source: R, offset: u64 },
}

/// Streaming, validating event reader.
pub struct EventReader<R> {
    decoder: Decoder<R>,
    validator: StreamValidator,
    geometry: SensorGeometry,
    done: bool,
}

impl<R: BufRead> EventReader<R> {
    pub fn csv(source: R, geometry: SensorGeometry) -> Self {
        EventReader {
            decoder: Decoder::Csv {
                source,
                line: String::new(),
                line_no: 0,
            },
            validator: StreamValidator::new(geometry),
            geometry,
            done: false,
        }
    }

    /// Opens a binary stream; the geometry comes from its header.
    pub fn binary(mut source: R) -> Result<Self, EventError> {
        let geometry = read_binary_header(&mut source)?;
        Ok(EventReader {
            decoder: Decoder::Binary {
                source,
                offset: BINARY_HEADER_LEN as u64,
            },
            validator: StreamValidator::new(geometry),
            geometry,
            done: false,
        })
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    fn next_event(&mut self) -> Result<Option<Event>, EventError> {
        match &mut self.decoder {
            Decoder::Csv {
                source,
                line,
                line_no,
            } => {
                line.clear();
                if source.read_line(line)? == 0 {
                    return Ok(None);
                }
                *line_no += 1;
                let location = Location::Line(*line_no);
                let text = line.strip_suffix('\n').unwrap_or(line);
                let (t, x, y, p) = parse_csv_fields(text).map_err(|message| EventError::Parse {
                    location,
                    message,
                })?;
                let polarity = Polarity::from_bit(p).ok_or_else(|| EventError::Parse {
                    location,
                    message: format!("polarity must be 0 or 1, got {p}"),
                })?;
                self.validator.check_raw(t, x, y)?;
                Ok(Some(Event::new(t, x as u16, y as u16, polarity)))
            }
            Decoder::Binary { source, offset } => {
                let mut r = [0u8; BINARY_RECORD_LEN];
                let mut filled = 0;
                while filled < BINARY_RECORD_LEN {
                    match source.read(&mut r[filled..]) {
                        Ok(0) => break,
                        Ok(n) => filled += n,
                        Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                        Err(e) => return Err(e.into()),
                    }
                }
                if filled == 0 {
                    return Ok(None);
                }
                let location = Location::Offset(*offset);
                if filled < BINARY_RECORD_LEN {
                    return Err(EventError::Parse {
                        location,
                        message: format!("truncated record ({filled} of {BINARY_RECORD_LEN} bytes)"),
                    });
                }
                *offset += BINARY_RECORD_LEN as u64;
                let t = u64::from_le_bytes(r[0..8].try_into().unwrap());
                let x = u16::from_le_bytes([r[8], r[9]]);
                let y = u16::from_le_bytes([r[10], r[11]]);
                let polarity = Polarity::from_bit(r[12]).ok_or_else(|| EventError::Parse {
                    location,
                    message: format!("polarity byte must be 0 or 1, got {}", r[12]),
                })?;
                self.validator.check_raw(t, x as u64, y as u64)?;
                Ok(Some(Event::new(t, x, y, polarity)))
            }
        }
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<Event, EventError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_event() {
            Ok(Some(e)) => Some(Ok(e)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn parse_csv_fields(line: &str) -> Result<(u64, u64, u64, u8), String> {
    let mut fields = line.split(',');
    let mut next = |name: &str| -> Result<u64, String> {
        let raw = fields.next().ok_or_else(|| format!("missing field '{name}'"))?;
        raw.parse::<u64>()
            .map_err(|_| format!("field '{name}' is not a non-negative integer: {raw:?}"))
    };
    let t = next("t")?;
    let x = next("x")?;
    let y = next("y")?;
    let p = next("p")?;
    if fields.next().is_some() {
        return Err("expected exactly 4 fields".into());
    }
    let p = u8::try_from(p).map_err(|_| format!("polarity must be 0 or 1, got {p}"))?;
    Ok((t, x, y, p))
}

/// Reads a whole stream. For binary input the header geometry must match
/// `geometry`.
pub fn read_events<R: Read>(
    source: R,
    format: EventFormat,
    geometry: SensorGeometry,
) -> Result<EventStream, EventError> {
    let source = BufReader::new(source);
    let reader = match format {
        EventFormat::Csv => EventReader::csv(source, geometry),
        EventFormat::Binary => {
            let reader = EventReader::binary(source)?;
            if reader.geometry() != geometry {
                return Err(EventError::Header(format!(
                    "file geometry {}x{} does not match expected {}x{}",
                    reader.geometry().width,
                    reader.geometry().height,
                    geometry.width,
                    geometry.height
                )));
            }
            reader
        }
    };
    let events = reader.collect::<Result<Vec<_>, _>>()?;
    Ok(EventStream::from_valid(geometry, events))
}

/// Streaming event writer. Call [`EventWriter::finish`] to flush.
pub struct EventWriter<W: Write> {
    sink: BufWriter<W>,
    format: EventFormat,
}

impl<W: Write> EventWriter<W> {
    pub fn new(sink: W, format: EventFormat, geometry: SensorGeometry) -> io::Result<Self> {
        let mut sink = BufWriter::with_capacity(1 << 16, sink);
        if format == EventFormat::Binary {
            sink.write_all(&encode_header(geometry))?;
        }
        Ok(EventWriter { sink, format })
    }

    pub fn write(&mut self, e: &Event) -> io::Result<()> {
        match self.format {
            EventFormat::Csv => writeln!(self.sink, "{},{},{},{}", e.t, e.x, e.y, e.polarity.to_bit()),
            EventFormat::Binary => self.sink.write_all(&encode_record(e)),
        }
    }

    pub fn write_all(&mut self, events: &[Event]) -> io::Result<()> {
        events.iter().try_for_each(|e| self.write(e))
    }

    pub fn finish(self) -> io::Result<W> {
        self.sink.into_inner().map_err(|e| e.into_error())
    }
}

pub fn write_events<W: Write>(stream: &EventStream, format: EventFormat, sink: W) -> io::Result<W> {
    let mut writer = EventWriter::new(sink, format, stream.geometry())?;
    writer.write_all(stream.events())?;
    writer.finish()
}

/// Serializes a stream to an in-memory payload.
pub fn encode_events(stream: &EventStream, format: EventFormat) -> Vec<u8> {
    write_events(stream, format, Vec::new()).expect("writing to a Vec cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hd() -> SensorGeometry {
        SensorGeometry::default()
    }

    #[test]
    fn csv_line_maps_fields() {
        let s = read_events("1000,5,7,1\n".as_bytes(), EventFormat::Csv, hd()).unwrap();
        assert_eq!(s.events(), &[Event::positive(1000, 5, 7)]);
    }

    #[test]
    fn csv_without_trailing_newline() {
        let s = read_events("1,2,3,0".as_bytes(), EventFormat::Csv, hd()).unwrap();
        assert_eq!(s.events(), &[Event::negative(1, 2, 3)]);
    }

    #[test]
    fn empty_csv_is_empty_stream() {
        let s = read_events("".as_bytes(), EventFormat::Csv, hd()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn csv_ordering_error() {
        let err = read_events("10,0,0,1\n5,0,0,0\n".as_bytes(), EventFormat::Csv, hd()).unwrap_err();
        assert!(matches!(err, EventError::Ordering { index: 1, prev: 10, t: 5 }));
    }

    #[test]
    fn csv_parse_errors_carry_line() {
        for bad in ["1,2,3\n", "1,2,3,4,5\n", "a,2,3,1\n", "1,2,3,2\n", "-1,2,3,1\n", "\n"] {
            let input = format!("0,0,0,1\n{bad}");
            match read_events(input.as_bytes(), EventFormat::Csv, hd()) {
                Err(EventError::Parse { location, .. }) => assert_eq!(location, Location::Line(2), "{bad:?}"),
                other => panic!("{bad:?}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn csv_bounds_error() {
        let err = read_events("0,1280,0,1\n".as_bytes(), EventFormat::Csv, hd()).unwrap_err();
        assert!(matches!(err, EventError::Bounds { x: 1280, .. }));
        let err = read_events("0,0,70000,1\n".as_bytes(), EventFormat::Csv, hd()).unwrap_err();
        assert!(matches!(err, EventError::Bounds { y: 70000, .. }));
    }

    #[test]
    fn csv_writer_format() {
        let s = EventStream::new(hd(), vec![Event::positive(1000, 5, 7)]).unwrap();
        assert_eq!(encode_events(&s, EventFormat::Csv), b"1000,5,7,1\n");
    }

    #[test]
    fn empty_stream_payloads() {
        let s = EventStream::empty(hd());
        assert!(encode_events(&s, EventFormat::Csv).is_empty());
        let bin = encode_events(&s, EventFormat::Binary);
        assert_eq!(bin.len(), BINARY_HEADER_LEN);
        assert_eq!(&bin[..], &[b'E', b'V', b'C', b'1', 1, 0, 0, 0, 0, 5, 0xd0, 2, 0, 0, 0, 0]);
    }

    #[test]
    fn binary_record_layout() {
        let g = SensorGeometry::new(u16::MAX, u16::MAX).unwrap();
        let s = EventStream::new(g, vec![Event::negative(0x0102030405060708, 0x0a0b, 0x0c0d)]).unwrap();
        let bin = encode_events(&s, EventFormat::Binary);
        assert_eq!(bin.len(), BINARY_HEADER_LEN + BINARY_RECORD_LEN);
        assert_eq!(
            &bin[16..],
            &[8, 7, 6, 5, 4, 3, 2, 1, 0x0b, 0x0a, 0x0d, 0x0c, 0]
        );
    }

    #[test]
    fn binary_truncated_record() {
        let s = EventStream::new(hd(), vec![Event::positive(1, 1, 1)]).unwrap();
        let mut bin = encode_events(&s, EventFormat::Binary);
        bin.pop();
        let err = read_events(&bin[..], EventFormat::Binary, hd()).unwrap_err();
        assert!(matches!(err, EventError::Parse { location: Location::Offset(16), .. }));
    }

    #[test]
    fn binary_bad_header() {
        let err = read_events(&b"EVC2\x01\0\0\0\0\x05\xd0\x02\0\0\0\0"[..], EventFormat::Binary, hd()).unwrap_err();
        assert!(matches!(err, EventError::Header(_)));
        let err = read_events(&b"EVC1"[..], EventFormat::Binary, hd()).unwrap_err();
        assert!(matches!(err, EventError::Header(_)));
        let small = SensorGeometry::new(10, 10).unwrap();
        let bin = encode_events(&EventStream::empty(small), EventFormat::Binary);
        assert!(matches!(read_events(&bin[..], EventFormat::Binary, hd()), Err(EventError::Header(_))));
    }

    #[test]
    fn binary_bad_polarity_and_bounds() {
        let g = SensorGeometry::new(10, 10).unwrap();
        let mut bin = encode_header(g).to_vec();
        bin.extend_from_slice(&encode_record(&Event::positive(0, 1, 1)));
        let mut bad = bin.clone();
        bad[16 + 12] = 7;
        assert!(matches!(
            read_events(&bad[..], EventFormat::Binary, g),
            Err(EventError::Parse { location: Location::Offset(16), .. })
        ));
        bin.extend_from_slice(&encode_record(&Event::positive(0, 10, 1)));
        assert!(matches!(
            read_events(&bin[..], EventFormat::Binary, g),
            Err(EventError::Bounds { index: 1, .. })
        ));
    }

    #[test]
    fn format_from_path() {
        assert_eq!(EventFormat::from_path(Path::new("a/b.CSV")), EventFormat::Csv);
        assert_eq!(EventFormat::from_path(Path::new("a/b.evc")), EventFormat::Binary);
        assert_eq!("bin".parse::<EventFormat>(), Ok(EventFormat::Binary));
        assert!("aedat".parse::<EventFormat>().is_err());
    }
}
