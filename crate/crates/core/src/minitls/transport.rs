//! Byte-stream transports: anything `Read + Write + Send`, plus an in-memory duplex pipe.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::sync::{Arc, Condvar, Mutex};

/// A bidirectional byte stream. TCP sockets and [`MemoryStream`] both qualify.
pub trait Transport: Read + Write + Send {}

impl<T: Read + Write + Send> Transport for T {}

#[derive(Default)]
struct PipeState {
    data: VecDeque<u8>,
    closed: bool,
}

#[derive(Default)]
struct Pipe {
    state: Mutex<PipeState>,
    ready: Condvar,
}

impl Pipe {
    fn close(&self) {
        self.state.lock().expect("pipe lock").closed = true;
        self.ready.notify_all();
    }
}

/// One end of an in-memory duplex connection. Dropping an end closes both directions.
pub struct MemoryStream {
    incoming: Arc<Pipe>,
    outgoing: Arc<Pipe>,
}

/// A connected pair of in-memory streams.
pub fn duplex() -> (MemoryStream, MemoryStream) {
    let a = Arc::new(Pipe::default());
    let b = Arc::new(Pipe::default());
    (
        MemoryStream {
            incoming: a.clone(),
            outgoing: b.clone(),
        },
        MemoryStream {
            incoming: b,
            outgoing: a,
        },
    )
}

impl MemoryStream {
    /// Signals end of stream to the peer; reads remain possible.
    pub fn shutdown_write(&self) {
        self.outgoing.close();
    }
}

impl Read for MemoryStream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        let mut st = self.incoming.state.lock().expect("pipe lock");
        while st.data.is_empty() && !st.closed {
            st = self.incoming.ready.wait(st).expect("pipe lock");
        }
        let n = buf.len().min(st.data.len());
        for (dst, src) in buf.iter_mut().zip(st.data.drain(..n)) {
            *dst = src;
        }
        Ok(n)
    }
}

impl Write for MemoryStream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let mut st = self.outgoing.state.lock().expect("pipe lock");
        if st.closed {
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, "peer closed"));
        }
        st.data.extend(buf);
        self.outgoing.ready.notify_all();
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Drop for MemoryStream {
    fn drop(&mut self) {
        self.outgoing.close();
        self.incoming.close();
    }
}

/// Flips one bit of one outgoing record. Record boundaries are tracked from the 5-byte
/// headers, so the target is stable regardless of how writes are chunked.
#[cfg(feature = "fault-injection")]
pub struct TamperStream<T> {
    inner: T,
    record_index: u64,
    bit: usize,
    current: u64,
    pos: usize,
    header: [u8; 5],
    body_len: usize,
    fired: bool,
}

#[cfg(feature = "fault-injection")]
impl<T> TamperStream<T> {
    /// Flips bit `bit` (counted from the first header byte, MSB first) of outgoing
    /// record number `record_index` (0-based).
    pub fn new(inner: T, record_index: u64, bit: usize) -> Self {
        Self {
            inner,
            record_index,
            bit,
            current: 0,
            pos: 0,
            header: [0; 5],
            body_len: 0,
            fired: false,
        }
    }

    /// True once the targeted bit has been written.
    pub fn fired(&self) -> bool {
        self.fired
    }

    pub fn into_inner(self) -> T {
        self.inner
    }

    fn process(&mut self, byte: u8) -> u8 {
        let mut out = byte;
        if self.current == self.record_index && self.pos == self.bit / 8 {
            out ^= 0x80 >> (self.bit % 8);
            self.fired = true;
        }
        // Boundaries follow the untampered stream, as the sender produced it.
        if self.pos < 5 {
            self.header[self.pos] = byte;
            if self.pos == 4 {
                self.body_len = u16::from_be_bytes([self.header[3], self.header[4]]) as usize;
            }
        }
        self.pos += 1;
        if self.pos >= 5 && self.pos == 5 + self.body_len {
            self.current += 1;
            self.pos = 0;
        }
        out
    }
}

#[cfg(feature = "fault-injection")]
impl<T: Read> Read for TamperStream<T> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.inner.read(buf)
    }
}

#[cfg(feature = "fault-injection")]
impl<T: Write> Write for TamperStream<T> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let mangled: Vec<u8> = buf.iter().map(|&b| self.process(b)).collect();
        self.inner.write_all(&mangled)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}
