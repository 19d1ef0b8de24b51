//! Bounded command execution: allowlisted programs, explicit argument lists,
//! wall-clock timeouts and a combined stdout/stderr byte cap.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

/// Environment variable naming an allowlist file.
pub const ALLOWLIST_ENV: &str = "REPAIRLOOP_ALLOWLIST";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_OUTPUT_CAP: usize = 16_384;

const POLL_INTERVAL: Duration = Duration::from_millis(2);
const READER_GRACE: Duration = Duration::from_millis(500);

/// Set of program names that may be executed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allowlist {
    programs: BTreeSet<String>,
}

impl Default for Allowlist {
    fn default() -> Self {
        Self::new(["python3", "python"])
    }
}

impl Allowlist {
    pub fn new<I, S>(programs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            programs: programs.into_iter().map(Into::into).collect(),
        }
    }

    /// Newline-separated program names; blank lines and `#` comments ignored.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    /// Loads the file named by [`ALLOWLIST_ENV`] when set, else the default list.
    pub fn from_env_or_default() -> Result<Self> {
        match std::env::var_os(ALLOWLIST_ENV) {
            Some(path) => Self::from_file(Path::new(&path)),
            None => Ok(Self::default()),
        }
    }

    pub fn allows(&self, program: &str) -> bool {
        self.programs.contains(program)
    }

    pub fn with(mut self, program: impl Into<String>) -> Self {
        self.programs.insert(program.into());
        self
    }

    pub fn programs(&self) -> impl Iterator<Item = &str> {
        self.programs.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone)]
pub struct CommandSpec {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
    pub output_cap: usize,
    pub workdir: PathBuf,
    pub stdin: Option<Vec<u8>>,
}

impl CommandSpec {
    pub fn new(program: impl Into<String>, workdir: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            timeout: DEFAULT_TIMEOUT,
            output_cap: DEFAULT_OUTPUT_CAP,
            workdir: workdir.into(),
            stdin: None,
        }
    }

    pub fn args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.args.extend(args.into_iter().map(Into::into));
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn output_cap(mut self, cap: usize) -> Self {
        self.output_cap = cap;
        self
    }

    pub fn stdin(mut self, input: impl Into<Vec<u8>>) -> Self {
        self.stdin = Some(input.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    /// `None` when the process was terminated by a signal.
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    /// Bytes dropped from stdout and stderr together.
    pub truncated_bytes: usize,
    pub duration: Duration,
}

impl CommandOutput {
    pub fn success(&self) -> bool {
        self.exit_code == Some(0)
    }

    /// Captured bytes, excluding truncation markers.
    pub fn captured_len(&self) -> usize {
        strip_marker(&self.stdout).len() + strip_marker(&self.stderr).len()
    }

    /// stderr followed by stdout, the order diagnostics are most useful in.
    pub fn combined(&self) -> String {
        match (self.stderr.is_empty(), self.stdout.is_empty()) {
            (true, _) => self.stdout.clone(),
            (false, true) => self.stderr.clone(),
            (false, false) => format!("{}\n{}", self.stderr, self.stdout),
        }
    }
}

pub fn truncation_marker(dropped: usize) -> String {
    format!("\n...[truncated {dropped} bytes]")
}

fn strip_marker(text: &str) -> &str {
    match text.rfind("\n...[truncated ") {
        Some(idx) if text.ends_with(" bytes]") => &text[..idx],
        _ => text,
    }
}

/// Largest prefix of `bytes` no longer than `cap` that ends on a UTF-8 boundary.
fn utf8_prefix(bytes: &[u8], cap: usize) -> &[u8] {
    let mut end = cap.min(bytes.len());
    while end > 0 && end < bytes.len() && (bytes[end] & 0xC0) == 0x80 {
        end -= 1;
    }
    &bytes[..end]
}

/// Truncates `text` to at most `cap` bytes (marker included) on a char boundary.
pub fn bound_text(text: &str, cap: usize) -> String {
    if text.len() <= cap {
        return text.to_string();
    }
    let marker = truncation_marker(text.len());
    let keep = cap.saturating_sub(marker.len());
    let prefix = utf8_prefix(text.as_bytes(), keep);
    let mut out = String::from_utf8_lossy(prefix).into_owned();
    if out.len() + marker.len() <= cap {
        out.push_str(&marker);
    }
    out
}

#[derive(Default)]
struct Capture {
    kept: Vec<u8>,
    total: usize,
}

fn spawn_reader<R: Read + Send + 'static>(
    mut reader: R,
    cap: usize,
    done: mpsc::Sender<()>,
) -> Arc<Mutex<Capture>> {
    let capture = Arc::new(Mutex::new(Capture::default()));
    let sink = Arc::clone(&capture);
    thread::spawn(move || {
        let mut buf = [0u8; 8192];
        loop {
            match reader.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let mut c = sink.lock().expect("capture lock");
                    let room = cap.saturating_sub(c.kept.len());
                    c.kept.extend_from_slice(&buf[..n.min(room)]);
                    c.total += n;
                }
            }
        }
        let _ = done.send(());
    });
    capture
}

/// Executes allowlisted commands confined to a workspace root.
#[derive(Debug, Clone)]
pub struct BoundedRunner {
    allowlist: Allowlist,
    root: PathBuf,
}

impl BoundedRunner {
    pub fn new(allowlist: Allowlist, root: impl Into<PathBuf>) -> Self {
        Self {
            allowlist,
            root: root.into(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn allowlist(&self) -> &Allowlist {
        &self.allowlist
    }

    /// Same allowlist, different workspace root.
    pub fn rooted_at(&self, root: impl Into<PathBuf>) -> Self {
        Self::new(self.allowlist.clone(), root)
    }

    fn check(&self, cmd: &CommandSpec) -> Result<PathBuf> {
        if !self.allowlist.allows(&cmd.program) {
            return Err(Error::DisallowedCommand(cmd.program.clone()));
        }
        if cmd.timeout.is_zero() {
            return Err(Error::InvalidConfig("command timeout must be positive".into()));
        }
        ensure_inside(&self.root, &cmd.workdir)
    }

    pub fn run(&self, cmd: &CommandSpec) -> Result<CommandOutput> {
        let workdir = self.check(cmd)?;
        let started = Instant::now();

        let mut command = Command::new(&cmd.program);
        command
            .args(&cmd.args)
            .current_dir(&workdir)
            .env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_default())
            .env("LANG", "C.UTF-8")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONIOENCODING", "utf-8")
            .stdin(if cmd.stdin.is_some() {
                Stdio::piped()
            } else {
                Stdio::null()
            })
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);

        let mut child = command.spawn().map_err(|source| Error::SpawnFailure {
            program: cmd.program.clone(),
            source,
        })?;

        if let (Some(input), Some(mut pipe)) = (cmd.stdin.clone(), child.stdin.take()) {
            thread::spawn(move || {
                let _ = pipe.write_all(&input);
            });
        }

        let (done_tx, done_rx) = mpsc::channel();
        let out = spawn_reader(
            child.stdout.take().expect("piped stdout"),
            cmd.output_cap,
            done_tx.clone(),
        );
        let err = spawn_reader(
            child.stderr.take().expect("piped stderr"),
            cmd.output_cap,
            done_tx,
        );

        let deadline = started + cmd.timeout;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if Instant::now() >= deadline {
                kill_group(child.id());
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Timeout {
                    program: cmd.program.clone(),
                    timeout_secs: cmd.timeout.as_secs_f64(),
                });
            }
            thread::sleep(POLL_INTERVAL);
        };
        let duration = started.elapsed();

        for _ in 0..2 {
            if done_rx.recv_timeout(READER_GRACE).is_err() {
                break;
            }
        }

        let (stdout, stderr, dropped) = {
            let o = out.lock().expect("capture lock");
            let e = err.lock().expect("capture lock");
            let out_bytes = utf8_prefix(&o.kept, cmd.output_cap);
            let room = cmd.output_cap - out_bytes.len();
            let err_bytes = utf8_prefix(&e.kept, room);
            let mut stdout = String::from_utf8_lossy(out_bytes).into_owned();
            let mut stderr = String::from_utf8_lossy(err_bytes).into_owned();
            let out_dropped = o.total - out_bytes.len();
            let err_dropped = e.total - err_bytes.len();
            if out_dropped > 0 {
                stdout.push_str(&truncation_marker(out_dropped));
            }
            if err_dropped > 0 {
                stderr.push_str(&truncation_marker(err_dropped));
            }
            (stdout, stderr, out_dropped + err_dropped)
        };

        Ok(CommandOutput {
            exit_code: status.code(),
            stdout,
            stderr,
            truncated_bytes: dropped,
            duration,
        })
    }
}

fn kill_group(pid: u32) {
    // The child leads its own process group, so this also reaps grandchildren.
    unsafe {
        libc::kill(-(pid as i32), libc::SIGKILL);
    }
}

/// Resolves `path` and requires it to lie inside `root`.
pub fn ensure_inside(root: &Path, path: &Path) -> Result<PathBuf> {
    let root = root
        .canonicalize()
        .map_err(|_| Error::WorkspaceEscape(root.to_path_buf()))?;
    let joined = if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    };
    let resolved = match joined.canonicalize() {
        Ok(p) => p,
        // Not created yet: resolve the parent and re-attach the file name.
        Err(_) => {
            let parent = joined
                .parent()
                .and_then(|p| p.canonicalize().ok())
                .ok_or_else(|| Error::WorkspaceEscape(path.to_path_buf()))?;
            match joined.file_name() {
                Some(name) if name != ".." => parent.join(name),
                _ => return Err(Error::WorkspaceEscape(path.to_path_buf())),
            }
        }
    };
    if resolved.starts_with(&root) {
        Ok(resolved)
    } else {
        Err(Error::WorkspaceEscape(path.to_path_buf()))
    }
}
