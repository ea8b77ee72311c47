//! Standard MIDI file parsing and writing, note events, and frame labels.
//!
//! Parsing accepts SMF format 0 and 1 with metrical division, merges all
//! tracks and channels, honors every set-tempo event when converting ticks
//! to seconds, treats a velocity-0 note-on as a note-off, and closes
//! unmatched note-ons at the end of their track. Writing always produces
//! format 0 at 480 ticks per quarter with a single 500000 us tempo, which
//! makes one tick 1/960 s; times quantize to the nearest tick.

use std::fmt;

use thiserror::Error;

/// Ticks per quarter note in files produced by [`write_midi`].
pub const WRITE_TICKS_PER_QUARTER: u16 = 480;
/// Tempo in microseconds per quarter in files produced by [`write_midi`].
pub const WRITE_TEMPO_US: u32 = 500_000;

#[derive(Debug, Error)]
pub enum MidiError {
    #[error("bad header magic (expected MThd)")]
    BadHeaderMagic,
    #[error("bad track magic (expected MTrk)")]
    BadTrackMagic,
    #[error("unsupported SMF format {0} (only 0 and 1)")]
    UnsupportedFormat(u16),
    #[error("SMPTE division is not supported")]
    SmpteDivision,
    #[error("division must be nonzero")]
    BadDivision,
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("variable-length quantity overruns its field")]
    MalformedVlq,
    #[error("data byte {0:#04x} with no running status")]
    OrphanDataByte(u8),
}

/// One note: pitch, absolute onset/offset in seconds, and velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset: f64,
    pub offset: f64,
    pub velocity: u8,
}

/// Parsed or constructed note list, ordered by (onset, pitch).
///
/// `ticks_per_quarter` and `tempo_us_per_quarter` describe the source file
/// (the tempo in effect at tick 0); [`write_midi`] ignores them and emits
/// its own fixed timing so event times are authoritative.
#[derive(Debug, Clone, PartialEq)]
pub struct NoteEventList {
    pub events: Vec<NoteEvent>,
    pub ticks_per_quarter: u16,
    pub tempo_us_per_quarter: u32,
}

impl NoteEventList {
    pub fn new(mut events: Vec<NoteEvent>) -> Self {
        sort_events(&mut events);
        NoteEventList {
            events,
            ticks_per_quarter: WRITE_TICKS_PER_QUARTER,
            tempo_us_per_quarter: WRITE_TEMPO_US,
        }
    }
}

fn sort_events(events: &mut [NoteEvent]) {
    events.sort_by(|a, b| {
        a.onset
            .partial_cmp(&b.onset)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.pitch.cmp(&b.pitch))
    });
}

/// Contiguous pitch window mapped onto label columns; the default covers the
/// 72 semitones C2..=B7 (MIDI 36..=107).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PitchRange {
    pub low: u8,
    pub count: usize,
}

impl Default for PitchRange {
    fn default() -> Self {
        PitchRange { low: 36, count: 72 }
    }
}

impl PitchRange {
    pub fn contains(&self, pitch: u8) -> bool {
        pitch >= self.low && (pitch as usize) < self.low as usize + self.count
    }

    /// Column index of a pitch; caller must check [`contains`](Self::contains) first.
    pub fn bin(&self, pitch: u8) -> usize {
        pitch as usize - self.low as usize
    }

    /// Pitch of a column index.
    pub fn pitch(&self, bin: usize) -> u8 {
        (self.low as usize + bin) as u8
    }
}

/// Binary frame-by-pitch activation matrix, row-major, one byte per cell.
/// Every entry is 0 or 1 by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    frames: usize,
    bins: usize,
    data: Vec<u8>,
}

impl LabelMatrix {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        LabelMatrix { frames, bins, data: vec![0; frames * bins] }
    }

    /// Rebuilds a matrix from raw row-major bytes; any nonzero byte counts
    /// as active.
    pub fn from_rows(frames: usize, bins: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), frames * bins, "label payload size mismatch");
        let data = data.into_iter().map(|b| (b != 0) as u8).collect();
        LabelMatrix { frames, bins, data }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn get(&self, frame: usize, bin: usize) -> bool {
        self.data[frame * self.bins + bin] != 0
    }

    pub fn set(&mut self, frame: usize, bin: usize, active: bool) {
        self.data[frame * self.bins + bin] = active as u8;
    }

    pub fn row(&self, frame: usize) -> &[u8] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(self.bins.max(1))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    /// Copy of the first `frames` rows.
    pub fn truncated(&self, frames: usize) -> LabelMatrix {
        let frames = frames.min(self.frames);
        LabelMatrix {
            frames,
            bins: self.bins,
            data: self.data[..frames * self.bins].to_vec(),
        }
    }
}

impl fmt::Display for LabelMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} frames x {} pitches", self.frames, self.bins)
    }
}

/// Equal-tempered frequency of a MIDI pitch, anchored at A4 = 440 Hz.
pub fn midi_to_freq(pitch: u8) -> f64 {
    440.0 * ((pitch as f64 - 69.0) / 12.0).exp2()
}

/// End of the last event, or 0.0 for an empty list.
pub fn song_duration(list: &NoteEventList) -> f64 {
    list.events.iter().map(|e| e.offset).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Parsing

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], MidiError> {
        if self.remaining() < n {
            return Err(MidiError::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, MidiError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, MidiError> {
        let b = self.take(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, MidiError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Variable-length quantity: 7 bits per byte, high bit continues, at
    /// most four bytes.
    fn vlq(&mut self) -> Result<u32, MidiError> {
        let mut value = 0u32;
        for i in 0.. {
            let byte = self.u8("variable-length quantity")?;
            value = (value << 7) | (byte & 0x7f) as u32;
            if byte & 0x80 == 0 {
                return Ok(value);
            }
            if i == 3 {
                return Err(MidiError::MalformedVlq);
            }
        }
        unreachable!()
    }
}

struct RawNote {
    tick: u64,
    pitch: u8,
    velocity: u8,
    on: bool,
}

/// Parses an SMF byte stream into seconds-based note events.
pub fn parse_midi(bytes: &[u8]) -> Result<NoteEventList, MidiError> {
    let mut r = Reader::new(bytes);
    if r.take(4, "header").map_err(|_| MidiError::BadHeaderMagic)? != b"MThd" {
        return Err(MidiError::BadHeaderMagic);
    }
    let header_len = r.u32("header length")?;
    if header_len < 6 {
        return Err(MidiError::Truncated("header"));
    }
    let format = r.u16("format")?;
    if format > 1 {
        return Err(MidiError::UnsupportedFormat(format));
    }
    let n_tracks = r.u16("track count")?;
    let division = r.u16("division")?;
    if division & 0x8000 != 0 {
        return Err(MidiError::SmpteDivision);
    }
    if division == 0 {
        return Err(MidiError::BadDivision);
    }
    r.take(header_len as usize - 6, "header extension")?;

    // First pass over every track: raw note on/offs at absolute ticks plus
    // the global tempo map (tempo events may appear in any track).
    let mut tempo_changes: Vec<(u64, u32)> = Vec::new();
    let mut tracks: Vec<(Vec<RawNote>, u64)> = Vec::new();
    for _ in 0..n_tracks {
        if r.take(4, "track header").map_err(|_| MidiError::BadTrackMagic)? != b"MTrk" {
            return Err(MidiError::BadTrackMagic);
        }
        let len = r.u32("track length")? as usize;
        let body = r.take(len, "track body")?;
        let (notes, end_tick, tempos) = scan_track(body)?;
        tempo_changes.extend(tempos);
        tracks.push((notes, end_tick));
    }
    tempo_changes.sort_by_key(|&(tick, _)| tick);

    let clock = TickClock::new(division, &tempo_changes);

    // Pair note-ons with note-offs per pitch, first-on first-off; leftovers
    // close at the end of their own track.
    let mut events = Vec::new();
    for (notes, end_tick) in &tracks {
        let mut open: Vec<Vec<(u64, u8)>> = vec![Vec::new(); 128];
        for note in notes {
            if note.on {
                open[note.pitch as usize].push((note.tick, note.velocity));
            } else if !open[note.pitch as usize].is_empty() {
                let (on_tick, velocity) = open[note.pitch as usize].remove(0);
                events.push(NoteEvent {
                    pitch: note.pitch,
                    onset: clock.seconds(on_tick),
                    offset: clock.seconds(note.tick),
                    velocity,
                });
            }
        }
        for (pitch, stack) in open.iter().enumerate() {
            for &(on_tick, velocity) in stack {
                events.push(NoteEvent {
                    pitch: pitch as u8,
                    onset: clock.seconds(on_tick),
                    offset: clock.seconds(*end_tick),
                    velocity,
                });
            }
        }
    }
    sort_events(&mut events);

    let initial_tempo = tempo_changes
        .iter()
        .take_while(|&&(tick, _)| tick == 0)
        .last()
        .map(|&(_, t)| t)
        .unwrap_or(WRITE_TEMPO_US);
    Ok(NoteEventList {
        events,
        ticks_per_quarter: division,
        tempo_us_per_quarter: initial_tempo,
    })
}

type TrackScan = (Vec<RawNote>, u64, Vec<(u64, u32)>);

fn scan_track(body: &[u8]) -> Result<TrackScan, MidiError> {
    let mut r = Reader::new(body);
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut notes = Vec::new();
    let mut tempos = Vec::new();
    while r.remaining() > 0 {
        tick += r.vlq()? as u64;
        let first = r.u8("event status")?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            // Data byte: reuse the running status and un-read the byte.
            r.pos -= 1;
            running.ok_or(MidiError::OrphanDataByte(first))?
        };
        match status & 0xf0 {
            0x80 | 0x90 => {
                running = Some(status);
                let pitch = r.u8("note number")? & 0x7f;
                let velocity = r.u8("velocity")? & 0x7f;
                let on = status & 0xf0 == 0x90 && velocity > 0;
                notes.push(RawNote { tick, pitch, velocity, on });
            }
            0xa0 | 0xb0 | 0xe0 => {
                running = Some(status);
                r.take(2, "channel event data")?;
            }
            0xc0 | 0xd0 => {
                running = Some(status);
                r.take(1, "channel event data")?;
            }
            0xf0 => match status {
                0xff => {
                    running = None;
                    let kind = r.u8("meta type")?;
                    let len = r.vlq()? as usize;
                    let data = r.take(len, "meta event data")?;
                    match kind {
                        0x51 if len >= 3 => {
                            let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                            tempos.push((tick, us));
                        }
                        0x2f => return Ok((notes, tick, tempos)),
                        _ => {}
                    }
                }
                0xf0 | 0xf7 => {
                    running = None;
                    let len = r.vlq()? as usize;
                    r.take(len, "sysex data")?;
                }
                other => return Err(MidiError::OrphanDataByte(other)),
            },
            _ => unreachable!(),
        }
    }
    // Missing end-of-track meta: close at the last event time.
    Ok((notes, tick, tempos))
}

/// Tick-to-seconds conversion over a sorted tempo map. Segment boundaries
/// carry precomputed absolute times so lookups are a single scan.
struct TickClock {
    ticks_per_quarter: f64,
    // (start_tick, us_per_quarter, seconds_at_start)
    segments: Vec<(u64, u32, f64)>,
}

impl TickClock {
    fn new(division: u16, tempo_changes: &[(u64, u32)]) -> Self {
        let tpq = division as f64;
        let mut segments = vec![(0u64, WRITE_TEMPO_US, 0.0f64)];
        for &(tick, tempo) in tempo_changes {
            let &(last_tick, last_tempo, last_sec) = segments.last().unwrap();
            if tick == last_tick {
                segments.last_mut().unwrap().1 = tempo;
                continue;
            }
            let sec = last_sec + (tick - last_tick) as f64 * last_tempo as f64 * 1e-6 / tpq;
            segments.push((tick, tempo, sec));
        }
        TickClock { ticks_per_quarter: tpq, segments }
    }

    fn seconds(&self, tick: u64) -> f64 {
        let seg = self
            .segments
            .iter()
            .rev()
            .find(|&&(start, _, _)| start <= tick)
            .unwrap();
        seg.2 + (tick - seg.0) as f64 * seg.1 as f64 * 1e-6 / self.ticks_per_quarter
    }
}

// ---------------------------------------------------------------------------
// Writing

/// Serializes events as SMF format 0: 480 ticks per quarter, one 500000 us
/// set-tempo, explicit note-off events. At equal ticks note-offs precede
/// note-ons so that back-to-back repeats of a pitch survive a round trip.
pub fn write_midi(list: &NoteEventList) -> Vec<u8> {
    let ticks_per_sec =
        WRITE_TICKS_PER_QUARTER as f64 * 1e6 / WRITE_TEMPO_US as f64;
    let to_tick = |t: f64| -> u64 { (t * ticks_per_sec).round().max(0.0) as u64 };

    // (tick, off=0 / on=1, pitch, velocity)
    let mut moments: Vec<(u64, u8, u8, u8)> = Vec::new();
    for e in &list.events {
        moments.push((to_tick(e.onset), 1, e.pitch & 0x7f, e.velocity & 0x7f));
        moments.push((to_tick(e.offset), 0, e.pitch & 0x7f, 0x40));
    }
    moments.sort();

    let mut track = Vec::new();
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x51, 0x03]);
    track.extend_from_slice(&WRITE_TEMPO_US.to_be_bytes()[1..]);
    let mut cursor = 0u64;
    for (tick, kind, pitch, velocity) in moments {
        push_vlq(&mut track, (tick - cursor) as u32);
        cursor = tick;
        let status = if kind == 1 { 0x90 } else { 0x80 };
        track.extend_from_slice(&[status, pitch, velocity]);
    }
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&(WRITE_TICKS_PER_QUARTER).to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}

fn push_vlq(out: &mut Vec<u8>, value: u32) {
    let mut shifted = [0u8; 4];
    let mut n = 0;
    let mut v = value & 0x0fff_ffff;
    loop {
        shifted[n] = (v & 0x7f) as u8;
        v >>= 7;
        n += 1;
        if v == 0 {
            break;
        }
    }
    for i in (1..n).rev() {
        out.push(shifted[i] | 0x80);
    }
    out.push(shifted[0]);
}

// ---------------------------------------------------------------------------
// Labels

/// Rasterizes note events onto frames of `frame_dur` seconds. A pitch is
/// active in frame `t` iff its `[onset, offset)` interval overlaps
/// `[t * frame_dur, (t+1) * frame_dur)` by a positive amount; touching a
/// boundary does not count. Rows cover `ceil(duration / frame_dur)` frames.
/// Returns the matrix and the number of events whose pitch fell outside
/// `range` and was dropped.
pub fn events_to_labels(
    list: &NoteEventList,
    frame_dur: f64,
    range: &PitchRange,
) -> (LabelMatrix, usize) {
    let duration = song_duration(list);
    let frames = if duration > 0.0 {
        (duration / frame_dur).ceil() as usize
    } else {
        0
    };
    let mut labels = LabelMatrix::zeros(frames, range.count);
    let mut dropped = 0usize;
    for e in &list.events {
        if !range.contains(e.pitch) {
            dropped += 1;
            continue;
        }
        if e.offset <= e.onset {
            continue;
        }
        let bin = range.bin(e.pitch);
        let first = (e.onset / frame_dur).floor().max(0.0) as usize;
        let last = ((e.offset / frame_dur).ceil() as usize).min(frames);
        for t in first..last {
            let frame_start = t as f64 * frame_dur;
            let frame_end = (t + 1) as f64 * frame_dur;
            if e.onset < frame_end && e.offset > frame_start {
                labels.set(t, bin, true);
            }
        }
    }
    (labels, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_frequencies() {
        assert_eq!(midi_to_freq(69), 440.0);
        assert!((midi_to_freq(36) - 65.40639132514966).abs() < 1e-9);
        assert!((midi_to_freq(107) - 3951.066410048992).abs() < 1e-9);
        assert!((midi_to_freq(81) - 880.0).abs() < 1e-9);
    }

    #[test]
    fn single_note_file_bytes_are_canonical() {
        // C4 for one second at velocity 96: the note-off lands 960 ticks
        // after the note-on, encoded as the two-byte quantity 87 40.
        let list = NoteEventList::new(vec![NoteEvent {
            pitch: 60,
            onset: 0.0,
            offset: 1.0,
            velocity: 96,
        }]);
        let bytes = write_midi(&list);
        let expected: Vec<u8> = vec![
            0x4d, 0x54, 0x68, 0x64, 0x00, 0x00, 0x00, 0x06, // MThd
            0x00, 0x00, 0x00, 0x01, 0x01, 0xe0, // format 0, 1 track, 480 tpq
            0x4d, 0x54, 0x72, 0x6b, 0x00, 0x00, 0x00, 0x14, // MTrk, 20 bytes
            0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20, // tempo 500000
            0x00, 0x90, 0x3c, 0x60, // note on
            0x87, 0x40, 0x80, 0x3c, 0x40, // delta 960, note off
            0x00, 0xff, 0x2f, 0x00, // end of track
        ];
        assert_eq!(bytes, expected);
    }

    #[test]
    fn empty_list_round_trips() {
        let list = NoteEventList::new(vec![]);
        let parsed = parse_midi(&write_midi(&list)).unwrap();
        assert!(parsed.events.is_empty());
        assert_eq!(parsed.ticks_per_quarter, 480);
        assert_eq!(parsed.tempo_us_per_quarter, 500_000);
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(matches!(parse_midi(b"MThe\x00\x00\x00\x06"), Err(MidiError::BadHeaderMagic)));
        assert!(matches!(parse_midi(b"MT"), Err(MidiError::BadHeaderMagic)));
    }

    #[test]
    fn smpte_division_is_rejected() {
        let mut bytes = write_midi(&NoteEventList::new(vec![]));
        // Division field sits at offset 12; set the SMPTE bit.
        bytes[12] = 0xe2;
        bytes[13] = 0x50;
        assert!(matches!(parse_midi(&bytes), Err(MidiError::SmpteDivision)));
    }

    #[test]
    fn truncated_vlq_is_reported() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 1, 0x01, 0xe0]);
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[0x81, 0x80]); // delta never terminates
        match parse_midi(&bytes) {
            Err(MidiError::Truncated(_)) | Err(MidiError::MalformedVlq) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn velocity_zero_note_on_closes_the_note() {
        let mut track = Vec::new();
        track.extend_from_slice(&[0x00, 0x90, 0x3c, 0x60]);
        track.extend_from_slice(&[0x60, 0x90, 0x3c, 0x00]); // delta 96, vel 0
        track.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 1, 0x01, 0xe0]);
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&(track.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&track);
        let parsed = parse_midi(&bytes).unwrap();
        assert_eq!(parsed.events.len(), 1);
        let e = parsed.events[0];
        assert_eq!(e.pitch, 60);
        assert!((e.onset - 0.0).abs() < 1e-9);
        assert!((e.offset - 0.1).abs() < 1e-9);
    }

    #[test]
    fn running_status_is_honored() {
        let mut track = Vec::new();
        track.extend_from_slice(&[0x00, 0x90, 0x3c, 0x60]);
        track.extend_from_slice(&[0x60, 0x3c, 0x00]); // running status note-on
        track.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 1, 0x01, 0xe0]);
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&(track.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&track);
        assert_eq!(parse_midi(&bytes).unwrap().events.len(), 1);
    }

    #[test]
    fn unmatched_note_on_closes_at_end_of_track() {
        let mut track = Vec::new();
        track.extend_from_slice(&[0x00, 0x90, 0x3c, 0x60]);
        track.extend_from_slice(&[0x87, 0x40, 0xff, 0x2f, 0x00]); // EOT at tick 960
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 1, 0x01, 0xe0]);
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&(track.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&track);
        let parsed = parse_midi(&bytes).unwrap();
        assert_eq!(parsed.events.len(), 1);
        assert!((parsed.events[0].offset - 1.0).abs() < 1e-9);
    }

    #[test]
    fn format_one_tempo_map_spans_tracks() {
        // Track 0: tempo 500000 at tick 0, tempo 1000000 at tick 960.
        // Track 1: C4 from tick 0 to tick 1920.
        // Seconds: 960 ticks * (0.5 s / 480) = 1.0, then 960 * (1.0 / 480)
        // = 2.0 more, so the note spans [0.0, 3.0].
        let mut t0 = Vec::new();
        t0.extend_from_slice(&[0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20]);
        t0.extend_from_slice(&[0x87, 0x40, 0xff, 0x51, 0x03, 0x0f, 0x42, 0x40]);
        t0.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        let mut t1 = Vec::new();
        t1.extend_from_slice(&[0x00, 0x90, 0x3c, 0x60]);
        t1.extend_from_slice(&[0x8f, 0x00, 0x80, 0x3c, 0x40]); // delta 1920
        t1.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 1, 0, 2, 0x01, 0xe0]); // format 1, 2 tracks
        for t in [&t0, &t1] {
            bytes.extend_from_slice(b"MTrk");
            bytes.extend_from_slice(&(t.len() as u32).to_be_bytes());
            bytes.extend_from_slice(t);
        }
        let parsed = parse_midi(&bytes).unwrap();
        assert_eq!(parsed.events.len(), 1);
        assert!((parsed.events[0].onset - 0.0).abs() < 1e-9);
        assert!((parsed.events[0].offset - 3.0).abs() < 1e-9);
        assert_eq!(parsed.tempo_us_per_quarter, 500_000);
    }

    #[test]
    fn duration_of_empty_list_is_zero() {
        assert_eq!(song_duration(&NoteEventList::new(vec![])), 0.0);
    }

    #[test]
    fn labels_cover_any_positive_overlap() {
        // C4 over [0, 0.125) with 62.5 ms frames: frames 0 and 1, nothing else.
        let list = NoteEventList::new(vec![NoteEvent {
            pitch: 60,
            onset: 0.0,
            offset: 0.125,
            velocity: 96,
        }]);
        let (labels, dropped) = events_to_labels(&list, 0.0625, &PitchRange::default());
        assert_eq!(dropped, 0);
        assert_eq!(labels.frames(), 2);
        assert!(labels.get(0, 24));
        assert!(labels.get(1, 24));
        assert_eq!(labels.row(0).iter().map(|&b| b as usize).sum::<usize>(), 1);
    }

    #[test]
    fn boundary_touch_is_not_active() {
        // Note starts exactly at the frame 1 boundary: frame 0 sees zero
        // overlap and stays empty.
        let list = NoteEventList::new(vec![NoteEvent {
            pitch: 60,
            onset: 0.0625,
            offset: 0.125,
            velocity: 96,
        }]);
        let (labels, _) = events_to_labels(&list, 0.0625, &PitchRange::default());
        assert_eq!(labels.frames(), 2);
        assert!(!labels.get(0, 24));
        assert!(labels.get(1, 24));
    }

    #[test]
    fn out_of_range_pitches_are_counted() {
        let list = NoteEventList::new(vec![
            NoteEvent { pitch: 20, onset: 0.0, offset: 0.5, velocity: 96 },
            NoteEvent { pitch: 60, onset: 0.0, offset: 0.5, velocity: 96 },
            NoteEvent { pitch: 110, onset: 0.0, offset: 0.5, velocity: 96 },
        ]);
        let (labels, dropped) = events_to_labels(&list, 0.0625, &PitchRange::default());
        assert_eq!(dropped, 2);
        assert_eq!(labels.frames(), 8);
        assert!(labels.get(0, 24));
    }

    #[test]
    fn empty_events_give_zero_frames() {
        let (labels, dropped) =
            events_to_labels(&NoteEventList::new(vec![]), 0.0625, &PitchRange::default());
        assert_eq!(labels.frames(), 0);
        assert_eq!(dropped, 0);
    }

    #[test]
    fn frame_count_ceils_duration() {
        let mk = |offset| {
            NoteEventList::new(vec![NoteEvent { pitch: 60, onset: 0.0, offset, velocity: 96 }])
        };
        let (labels, _) = events_to_labels(&mk(1.0), 0.0625, &PitchRange::default());
        assert_eq!(labels.frames(), 16);
        let (labels, _) = events_to_labels(&mk(1.0000001), 0.0625, &PitchRange::default());
        assert_eq!(labels.frames(), 17);
    }

    fn arbitrary_events(max_len: usize) -> impl Strategy<Value = Vec<NoteEvent>> {
        proptest::collection::vec(
            (0u8..128, 0.0f64..20.0, 0.02f64..4.0, 1u8..128).prop_map(
                |(pitch, onset, dur, velocity)| NoteEvent {
                    pitch,
                    onset,
                    offset: onset + dur,
                    velocity,
                },
            ),
            0..max_len,
        )
    }

    proptest! {
        #[test]
        fn smf_round_trip_preserves_notes_within_one_tick(events in arbitrary_events(24)) {
            // Concurrent notes of the same pitch are ambiguous in SMF (the
            // on/off streams survive but their pairing is a convention), so
            // keep only non-overlapping notes per pitch, as the synthesizer
            // corpus does.
            let tick = 1.0 / 960.0;
            let mut sorted = events;
            sorted.sort_by(|a, b| {
                (a.pitch, a.onset).partial_cmp(&(b.pitch, b.onset)).unwrap()
            });
            let mut last_off_tick = [f64::NEG_INFINITY; 128];
            let mut kept = Vec::new();
            for e in sorted {
                let on_tick = (e.onset / tick).round();
                if on_tick >= last_off_tick[e.pitch as usize] {
                    last_off_tick[e.pitch as usize] = (e.offset / tick).round();
                    kept.push(e);
                }
            }

            let list = NoteEventList::new(kept);
            let parsed = parse_midi(&write_midi(&list)).unwrap();
            prop_assert_eq!(parsed.events.len(), list.events.len());
            let key = |e: &NoteEvent| {
                (e.pitch, (e.onset / tick).round() as i64, (e.offset / tick).round() as i64)
            };
            let mut want = list.events.clone();
            let mut got = parsed.events.clone();
            want.sort_by_key(key);
            got.sort_by_key(key);
            prop_assert_eq!(
                want.iter().map(key).collect::<Vec<_>>(),
                got.iter().map(key).collect::<Vec<_>>()
            );
            // Equal keys pair the two sorts element by element, so raw
            // times may be compared directly.
            for (a, b) in want.iter().zip(&got) {
                prop_assert!((a.onset - b.onset).abs() <= tick / 2.0 + 1e-9);
                prop_assert!((a.offset - b.offset).abs() <= tick / 2.0 + 1e-9);
            }
        }

        #[test]
        fn merged_labels_are_elementwise_or(
            a in arbitrary_events(12),
            b in arbitrary_events(12),
        ) {
            let range = PitchRange::default();
            let la = events_to_labels(&NoteEventList::new(a.clone()), 0.0625, &range).0;
            let lb = events_to_labels(&NoteEventList::new(b.clone()), 0.0625, &range).0;
            let mut merged = a;
            merged.extend(b);
            let lm = events_to_labels(&NoteEventList::new(merged), 0.0625, &range).0;
            prop_assert_eq!(lm.frames(), la.frames().max(lb.frames()));
            for t in 0..lm.frames() {
                for p in 0..range.count {
                    let va = t < la.frames() && la.get(t, p);
                    let vb = t < lb.frames() && lb.get(t, p);
                    prop_assert_eq!(lm.get(t, p), va || vb);
                }
            }
        }
    }
}
