use std::io::{BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::protocol::{self, Header, Kind, Message, ProtocolError, CAP_UNCONDITIONAL, VERSION};
use super::{validate_request, BackendDescriptor, BackendError, DenoiseOutput, DenoiseRequest, Denoiser};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalOptions {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl ExternalOptions {
    /// Splits a command line on whitespace; no shell quoting is applied.
    pub fn from_command_line(cmd: &str) -> Result<Self, BackendError> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| BackendError::Spawn("empty backend command".into()))?;
        Ok(Self {
            program,
            args: parts.collect(),
            timeout: DEFAULT_TIMEOUT,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

struct Session {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    replies: Receiver<Result<Message, ProtocolError>>,
    failed: Option<String>,
}

/// A denoiser running in a child process, one request in flight at a time.
pub struct ExternalDenoiser {
    desc: BackendDescriptor,
    timeout: Duration,
    session: Mutex<Session>,
}

impl ExternalDenoiser {
    /// Spawns the child and performs the version handshake.
    pub fn spawn(opts: &ExternalOptions) -> Result<Self, BackendError> {
        let mut child = Command::new(&opts.program)
            .args(&opts.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Spawn(format!("{}: {e}", opts.program)))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = child.stdout.take().expect("piped stdout");

        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let msg = protocol::read_message(&mut reader);
                let stop = msg.is_err();
                if tx.send(msg).is_err() || stop {
                    break;
                }
            }
        });

        let mut session = Session {
            child,
            stdin,
            replies: rx,
            failed: None,
        };
        let hello = match handshake(&mut session, opts.timeout) {
            Ok(h) => h,
            Err(e) => {
                let _ = session.child.kill();
                let _ = session.child.wait();
                return Err(e);
            }
        };
        let h = hello.header;
        let desc = BackendDescriptor {
            name: format!("external:{}", opts.program),
            concurrent_safe: false,
            has_unconditional: h.slot & CAP_UNCONDITIONAL != 0,
            frame_dims: (h.height > 0).then_some((h.height as usize, h.width as usize, h.channels as usize)),
            min_clip_len: 1,
            max_clip_len: if h.clip_len == 0 {
                usize::MAX
            } else {
                h.clip_len as usize
            },
        };
        Ok(Self {
            desc,
            timeout: opts.timeout,
            session: Mutex::new(session),
        })
    }
}

fn handshake(session: &mut Session, timeout: Duration) -> Result<Message, BackendError> {
    protocol::write_message(&mut session.stdin, VERSION, &Header::bare(Kind::Hello), &[])
        .map_err(|e| BackendError::Protocol(format!("sending hello: {e}")))?;
    let msg = match session.replies.recv_timeout(timeout) {
        Ok(Ok(m)) => m,
        Ok(Err(e)) => return Err(BackendError::Protocol(format!("reading hello: {e}"))),
        Err(_) => return Err(BackendError::Protocol("no hello from backend".into())),
    };
    if msg.version != VERSION {
        return Err(BackendError::VersionMismatch {
            expected: VERSION,
            got: msg.version,
        });
    }
    if msg.header.kind != Kind::Hello {
        return Err(BackendError::Protocol(format!(
            "expected hello, got {:?}",
            msg.header.kind
        )));
    }
    Ok(msg)
}

impl Denoiser for ExternalDenoiser {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn denoise(&self, request: &DenoiseRequest<'_>) -> Result<DenoiseOutput, BackendError> {
        let dims = validate_request(&self.desc, request)?;
        let clip = request.context.clip;
        let step = request.context.step;
        let transport = |detail: String| BackendError::Transport { clip, step, detail };

        let mut session = self.session.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(reason) = &session.failed {
            return Err(transport(format!(
                "backend unavailable after earlier failure: {reason}"
            )));
        }
        let (header, body) = protocol::encode_request(request).map_err(|e| BackendError::Protocol(e.to_string()))?;
        if let Err(e) = protocol::write_message(&mut session.stdin, VERSION, &header, &body) {
            let detail = describe_exit(&mut session.child, format!("writing request: {e}"));
            session.failed = Some(detail.clone());
            return Err(transport(detail));
        }
        let msg = match session.replies.recv_timeout(self.timeout) {
            Ok(Ok(m)) => m,
            Ok(Err(e)) => {
                let detail = describe_exit(&mut session.child, format!("reading reply: {e}"));
                session.failed = Some(detail.clone());
                return Err(transport(detail));
            }
            Err(RecvTimeoutError::Timeout) => {
                session.failed = Some("timed out".into());
                let _ = session.child.kill();
                return Err(BackendError::Timeout {
                    clip,
                    step,
                    secs: self.timeout.as_secs_f64(),
                });
            }
            Err(RecvTimeoutError::Disconnected) => {
                let detail = describe_exit(&mut session.child, "reply stream closed".into());
                session.failed = Some(detail.clone());
                return Err(transport(detail));
            }
        };
        match msg.header.kind {
            Kind::Reply => {
                protocol::decode_reply(&msg, request.x_t.len(), dims).map_err(|e| BackendError::Protocol(e.to_string()))
            }
            Kind::Error => Err(BackendError::Remote(String::from_utf8_lossy(&msg.body).into_owned())),
            other => Err(BackendError::Protocol(format!(
                "unexpected {other:?} message from backend"
            ))),
        }
    }
}

fn describe_exit(child: &mut Child, detail: String) -> String {
    for _ in 0..20 {
        if let Ok(Some(status)) = child.try_wait() {
            return format!("{detail} (child exited: {status})");
        }
        thread::sleep(Duration::from_millis(10));
    }
    detail
}

impl Drop for ExternalDenoiser {
    fn drop(&mut self) {
        let session = self.session.get_mut().unwrap_or_else(|p| p.into_inner());
        if session.failed.is_none() {
            let _ = protocol::write_message(&mut session.stdin, VERSION, &Header::bare(Kind::Shutdown), &[]);
            let _ = session.stdin.flush();
        }
        for _ in 0..50 {
            if let Ok(Some(_)) = session.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = session.child.kill();
        let _ = session.child.wait();
    }
}

impl std::fmt::Debug for ExternalDenoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalDenoiser").field("desc", &self.desc).finish()
    }
}
