//! Both transports move encoded frames only; parties never share memory with
//! the platform.
//!
//! TCP framing: the platform writes one message line; the party host answers
//! with one line: a reply frame, an empty line when the message needs no
//! reply, or `!error <text>`.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};

use crate::party::PartyHost;
use crate::MarketError;

pub const DEFAULT_PORT: u16 = 7461;

pub trait Transport: Send {
    /// Deliver one frame and return the receiver's reply frame, if any.
    fn exchange(&mut self, frame: &[u8]) -> Result<Option<Vec<u8>>, MarketError>;
}

/// Loopback: the parties live in this process behind a [`PartyHost`].
pub struct InProcess {
    host: PartyHost,
}

impl InProcess {
    pub fn new(host: PartyHost) -> Self {
        Self { host }
    }
}

impl Transport for InProcess {
    fn exchange(&mut self, frame: &[u8]) -> Result<Option<Vec<u8>>, MarketError> {
        self.host.handle_frame(frame)
    }
}

pub struct TcpClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, MarketError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }
}

impl Transport for TcpClient {
    fn exchange(&mut self, frame: &[u8]) -> Result<Option<Vec<u8>>, MarketError> {
        self.writer.write_all(frame)?;
        self.writer.flush()?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(MarketError::Io(std::io::ErrorKind::UnexpectedEof.into()));
        }
        if let Some(err) = line.strip_prefix("!error ") {
            return Err(MarketError::Remote(err.trim_end().to_string()));
        }
        if line.trim().is_empty() {
            return Ok(None);
        }
        Ok(Some(line.into_bytes()))
    }
}

/// Serve one platform connection until it closes.
pub fn serve(listener: &TcpListener, host: &mut PartyHost) -> Result<(), MarketError> {
    let (stream, peer) = listener.accept()?;
    log::info!("platform connected from {peer}");
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let mut line = Vec::new();
    loop {
        line.clear();
        if reader.read_until(b'\n', &mut line)? == 0 {
            return Ok(());
        }
        match host.handle_frame(&line) {
            Ok(Some(reply)) => writer.write_all(&reply)?,
            Ok(None) => writer.write_all(b"\n")?,
            Err(e) => writer.write_all(format!("!error {}\n", e.to_string().replace('\n', " ")).as_bytes())?,
        }
        writer.flush()?;
    }
}
