//! Video decoding and 1 fps frame extraction.
//!
//! YUV4MPEG2 (`.y4m`) streams are decoded natively, which keeps tests
//! hermetic. Any other container is piped through the host's `ffmpeg` into
//! the same Y4M parser, so MP4 works wherever ffmpeg is installed.

use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use crate::error::{Error, Result};
use crate::ingest::{SampleRecord, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Colorspace {
    C444,
    C420,
    Mono,
}

/// A decoded frame stream with its frame rate as a rational `num/den`.
pub struct DecodedFrames {
    reader: Box<dyn BufRead>,
    child: Option<Child>,
    path: PathBuf,
    width: usize,
    height: usize,
    fps_num: u64,
    fps_den: u64,
    colorspace: Colorspace,
}

impl DecodedFrames {
    /// Open a video file: `.y4m` natively, anything else via `ffmpeg`.
    pub fn open(path: &Path) -> Result<DecodedFrames> {
        let is_y4m = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("y4m"))
            .unwrap_or(false);
        if is_y4m {
            let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            Self::from_reader(Box::new(BufReader::new(file)), None, path)
        } else {
            let child = Command::new("ffmpeg")
                .args(["-nostdin", "-v", "error", "-i"])
                .arg(path)
                .args(["-f", "yuv4mpegpipe", "-pix_fmt", "yuv444p", "-"])
                .stdout(Stdio::piped())
                .stderr(Stdio::piped())
                .spawn()
                .map_err(|e| {
                    if e.kind() == std::io::ErrorKind::NotFound {
                        Error::Video {
                            path: path.into(),
                            msg: "no built-in decoder for this container and `ffmpeg` \
                                  was not found on PATH"
                                .into(),
                        }
                    } else {
                        Error::Video {
                            path: path.into(),
                            msg: format!("failed to launch ffmpeg: {e}"),
                        }
                    }
                })?;
            let mut child = child;
            let out = child.stdout.take().expect("piped stdout");
            Self::from_reader(Box::new(BufReader::new(out)), Some(child), path)
        }
    }

    fn from_reader(
        mut reader: Box<dyn BufRead>,
        child: Option<Child>,
        path: &Path,
    ) -> Result<DecodedFrames> {
        let verr = |msg: String| Error::Video {
            path: path.into(),
            msg,
        };
        let line = read_line(&mut reader).map_err(|e| verr(format!("cannot read header: {e}")))?;
        let line = line.ok_or_else(|| verr("empty stream".into()))?;
        let mut parts = line.split(' ');
        if parts.next() != Some("YUV4MPEG2") {
            return Err(verr("not a YUV4MPEG2 stream".into()));
        }
        let (mut width, mut height) = (0usize, 0usize);
        let (mut fps_num, mut fps_den) = (0u64, 0u64);
        let mut colorspace = Colorspace::C420;
        for tok in parts {
            let (tag, val) = tok.split_at(1);
            match tag {
                "W" => width = val.parse().map_err(|_| verr(format!("bad width {val:?}")))?,
                "H" => height = val.parse().map_err(|_| verr(format!("bad height {val:?}")))?,
                "F" => {
                    let (n, d) = val
                        .split_once(':')
                        .ok_or_else(|| verr(format!("bad frame rate {val:?}")))?;
                    fps_num = n.parse().map_err(|_| verr(format!("bad frame rate {val:?}")))?;
                    fps_den = d.parse().map_err(|_| verr(format!("bad frame rate {val:?}")))?;
                }
                "C" => {
                    colorspace = match val {
                        "444" => Colorspace::C444,
                        "420" | "420jpeg" | "420mpeg2" | "420paldv" => Colorspace::C420,
                        "mono" => Colorspace::Mono,
                        other => return Err(verr(format!("unsupported colorspace {other:?}"))),
                    }
                }
                _ => {} // interlacing/aspect/comments are irrelevant here
            }
        }
        if width == 0 || height == 0 {
            return Err(verr("missing frame dimensions".into()));
        }
        if fps_num == 0 || fps_den == 0 {
            return Err(verr("missing or zero frame rate".into()));
        }
        Ok(DecodedFrames {
            reader,
            child,
            path: path.into(),
            width,
            height,
            fps_num,
            fps_den,
            colorspace,
        })
    }

    pub fn fps(&self) -> (u64, u64) {
        (self.fps_num, self.fps_den)
    }

    /// Next frame as RGB, or `None` at end of stream.
    pub fn next_frame(&mut self) -> Result<Option<image::RgbImage>> {
        let verr = |msg: String| Error::Video {
            path: self.path.clone(),
            msg,
        };
        let line = match read_line(&mut self.reader)
            .map_err(|e| verr(format!("cannot read frame marker: {e}")))?
        {
            None => return Ok(None),
            Some(l) => l,
        };
        if !line.starts_with("FRAME") {
            return Err(verr(format!("expected FRAME marker, got {line:?}")));
        }
        let (w, h) = (self.width, self.height);
        let chroma_len = match self.colorspace {
            Colorspace::C444 => w * h,
            Colorspace::C420 => w.div_ceil(2) * h.div_ceil(2),
            Colorspace::Mono => 0,
        };
        let mut y_plane = vec![0u8; w * h];
        let mut u_plane = vec![128u8; chroma_len.max(1)];
        let mut v_plane = vec![128u8; chroma_len.max(1)];
        self.reader
            .read_exact(&mut y_plane)
            .map_err(|e| verr(format!("truncated frame: {e}")))?;
        if chroma_len > 0 {
            u_plane.truncate(chroma_len);
            v_plane.truncate(chroma_len);
            self.reader
                .read_exact(&mut u_plane)
                .map_err(|e| verr(format!("truncated frame: {e}")))?;
            self.reader
                .read_exact(&mut v_plane)
                .map_err(|e| verr(format!("truncated frame: {e}")))?;
        }
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for yy in 0..h {
            for xx in 0..w {
                let y = y_plane[yy * w + xx];
                let (u, v) = match self.colorspace {
                    Colorspace::C444 => (u_plane[yy * w + xx], v_plane[yy * w + xx]),
                    Colorspace::C420 => {
                        let cw = w.div_ceil(2);
                        let ci = (yy / 2) * cw + xx / 2;
                        (u_plane[ci], v_plane[ci])
                    }
                    Colorspace::Mono => (128, 128),
                };
                img.put_pixel(xx as u32, yy as u32, image::Rgb(yuv_to_rgb(y, u, v)));
            }
        }
        Ok(Some(img))
    }

    fn finish(&mut self) -> Result<()> {
        if let Some(mut child) = self.child.take() {
            let status = child.wait().map_err(|e| Error::Video {
                path: self.path.clone(),
                msg: format!("ffmpeg did not exit cleanly: {e}"),
            })?;
            if !status.success() {
                let mut stderr = String::new();
                if let Some(mut s) = child.stderr.take() {
                    let _ = s.read_to_string(&mut stderr);
                }
                return Err(Error::Video {
                    path: self.path.clone(),
                    msg: format!("ffmpeg failed ({status}): {}", stderr.trim()),
                });
            }
        }
        Ok(())
    }
}

impl Drop for DecodedFrames {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Read one `\n`-terminated line of ASCII, without the terminator.
fn read_line(reader: &mut impl BufRead) -> std::io::Result<Option<String>> {
    let mut buf = Vec::new();
    let n = reader.take(1024).read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
    }
    Ok(Some(String::from_utf8_lossy(&buf).into_owned()))
}

/// BT.601 limited-range YUV to RGB.
fn yuv_to_rgb(y: u8, u: u8, v: u8) -> [u8; 3] {
    let c = y as f32 - 16.0;
    let d = u as f32 - 128.0;
    let e = v as f32 - 128.0;
    let clamp = |x: f32| x.round().clamp(0.0, 255.0) as u8;
    [
        clamp(1.164383 * c + 1.596027 * e),
        clamp(1.164383 * c - 0.391762 * d - 0.812968 * e),
        clamp(1.164383 * c + 2.017232 * d),
    ]
}

/// Frame index nearest to integer second `t` for a `num/den` fps stream.
fn nearest_index(t: u64, fps_num: u64, fps_den: u64) -> u64 {
    ((t as f64 * fps_num as f64) / fps_den as f64).round() as u64
}

/// Sample one frame per integer second `t in 0..ceil(duration)`, each the
/// temporally nearest decodable frame to `t`, and write them as PNGs under
/// `out_dir`. Returned records carry `video_id` (the file stem) and
/// `frame_time_s`; the split is provisional until [`super::split_videos`]
/// assigns the real one.
pub fn extract_frames(
    video_path: &Path,
    out_dir: &Path,
    label: usize,
) -> Result<Vec<SampleRecord>> {
    let stem = video_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Video {
            path: video_path.into(),
            msg: "video path has no file stem".into(),
        })?
        .to_string();

    let mut stream = DecodedFrames::open(video_path)?;
    let (num, den) = stream.fps();
    let mut wanted: Vec<(u64, image::RgbImage)> = Vec::new();
    let mut last: Option<image::RgbImage> = None;
    let mut idx: u64 = 0;
    let mut t_next: u64 = 0;
    while let Some(frame) = stream.next_frame()? {
        while nearest_index(t_next, num, den) == idx {
            wanted.push((t_next, frame.clone()));
            t_next += 1;
        }
        last = Some(frame);
        idx += 1;
    }
    stream.finish()?;

    let n_frames = idx;
    if n_frames == 0 {
        return Err(Error::Video {
            path: video_path.into(),
            msg: "zero duration: stream contains no frames".into(),
        });
    }
    // ceil(n_frames * den / num) whole seconds.
    let duration_ceil = (n_frames * den).div_ceil(num);

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(duration_ceil as usize);
    let mut wanted_iter = wanted.into_iter().peekable();
    for t in 0..duration_ceil {
        let frame = match wanted_iter.peek() {
            Some((wt, _)) if *wt == t => wanted_iter.next().unwrap().1,
            // nearest_index(t) ran past the end of the stream; the nearest
            // decodable frame is the final one.
            _ => last.clone().expect("n_frames > 0"),
        };
        let filename = format!("{stem}_t{t:05}.png");
        let path = out_dir.join(&filename);
        frame
            .save(&path)
            .map_err(|e| Error::config(format!("cannot write {}: {e}", path.display())))?;
        records.push(SampleRecord {
            sample_id: format!("{stem}_t{t:05}"),
            source_path: path,
            label,
            split: Split::Train,
            video_id: Some(stem.clone()),
            frame_time_s: Some(t),
        });
    }
    Ok(records)
}

/// Write a C444 YUV4MPEG2 file. Each frame is `3 * width * height` bytes of
/// concatenated Y, U, V planes. Mostly useful for building test clips and
/// fixtures.
pub fn write_y4m_444(
    path: &Path,
    width: usize,
    height: usize,
    fps: (u64, u64),
    frames: &[Vec<u8>],
) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    let hdr = format!(
        "YUV4MPEG2 W{width} H{height} F{}:{} Ip A1:1 C444\n",
        fps.0, fps.1
    );
    out.write_all(hdr.as_bytes()).map_err(|e| Error::io(path, e))?;
    for frame in frames {
        assert_eq!(frame.len(), 3 * width * height, "C444 frame size");
        out.write_all(b"FRAME\n").map_err(|e| Error::io(path, e))?;
        out.write_all(frame).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
