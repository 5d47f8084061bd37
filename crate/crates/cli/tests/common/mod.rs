#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use assert_cmd::cargo::CommandCargoExt;

/// The binary with every `XRAYDX_` variable of the test environment removed.
pub fn xraydx() -> Command {
    let mut cmd = Command::cargo_bin("xraydx").unwrap();
    for (k, _) in std::env::vars() {
        if k.starts_with("XRAYDX_") {
            cmd.env_remove(k);
        }
    }
    cmd
}

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run_in(dir: &Path, args: &[&str]) -> Outcome {
    let out = xraydx().current_dir(dir).args(args).output().unwrap();
    Outcome {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn ok_in(dir: &Path, args: &[&str]) -> String {
    let o = run_in(dir, args);
    assert_eq!(o.code, 0, "xraydx {args:?} failed:\n{}", o.stderr);
    o.stdout
}

/// Relative path → bytes for every file under `root`, sorted.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    if root.is_file() {
        out.push((PathBuf::new(), std::fs::read(root).unwrap()));
    } else {
        walk(root, root, &mut out);
    }
    out.sort();
    out
}

pub fn same_files(a: &Path, b: &Path) -> Result<(), String> {
    let (x, y) = (snapshot(a), snapshot(b));
    if x.is_empty() {
        return Err(format!("{} is empty", a.display()));
    }
    let names = |s: &[(PathBuf, Vec<u8>)]| s.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>();
    if names(&x) != names(&y) {
        return Err(format!("file sets differ: {:?} vs {:?}", names(&x), names(&y)));
    }
    for ((p, u), (_, v)) in x.iter().zip(&y) {
        if u != v {
            return Err(format!("{} differs", p.display()));
        }
    }
    Ok(())
}

// --- a served binary, spoken to over plain HTTP/1.1

pub struct Server {
    child: Child,
    pub port: u16,
}

impl Server {
    /// Start `xraydx serve` on a free port and wait until /health says ok.
    pub fn start(dir: &Path, args: &[&str]) -> Result<Self, String> {
        let mut child = xraydx()
            .current_dir(dir)
            .arg("serve")
            .args(["--port", "0"])
            .args(args)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| e.to_string())?;
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).map_err(|e| e.to_string())?;
        let port = line.trim().rsplit(':').next().and_then(|p| p.parse().ok());
        let Some(port) = port else {
            let _ = child.kill();
            let mut err = String::new();
            let _ = child.stderr.take().unwrap().read_to_string(&mut err);
            return Err(format!("no address line ({line:?}): {err}"));
        };
        let server = Self { child, port };
        let deadline = Instant::now() + Duration::from_secs(30);
        while Instant::now() < deadline {
            if server.get("/health").0 == 200 {
                return Ok(server);
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        Err("model never loaded".into())
    }

    fn exchange(&self, head: &str, body: &[u8]) -> (u16, Vec<u8>) {
        let Ok(mut s) = std::net::TcpStream::connect(("127.0.0.1", self.port)) else {
            return (0, Vec::new());
        };
        s.write_all(head.as_bytes()).unwrap();
        s.write_all(body).unwrap();
        let mut raw = Vec::new();
        s.read_to_end(&mut raw).unwrap();
        let split = raw.windows(4).position(|w| w == b"\r\n\r\n").map_or(raw.len(), |i| i + 4);
        let status = std::str::from_utf8(&raw[..split.min(12)]).ok().and_then(|h| h.get(9..12)).and_then(|c| c.parse().ok());
        (status.unwrap_or(0), raw[split..].to_vec())
    }

    pub fn get(&self, path: &str) -> (u16, Vec<u8>) {
        self.exchange(&format!("GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n"), &[])
    }

    /// Multipart upload of `bytes` as the `image` field.
    pub fn upload(&self, path: &str, bytes: &[u8]) -> (u16, Vec<u8>) {
        let boundary = "xraydx-test-boundary";
        let mut body = format!(
            "--{boundary}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"x.png\"\r\nContent-Type: image/png\r\n\r\n"
        )
        .into_bytes();
        body.extend_from_slice(bytes);
        body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
        let head = format!(
            "POST {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\nContent-Type: multipart/form-data; boundary={boundary}\r\nContent-Length: {}\r\n\r\n",
            body.len()
        );
        self.exchange(&head, &body)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// JSON body with the timing fields dropped.
pub fn without_timing(body: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(body).unwrap();
    if let Some(o) = v.as_object_mut() {
        o.remove("elapsed_ms");
        o.remove("uptime_s");
    }
    v
}

// --- every subcommand twice on identical inputs

/// Tiny synthetic corpus written by the binary itself.
pub fn corpus(dir: &Path) -> PathBuf {
    let c = dir.join("corpus");
    if !c.exists() {
        ok_in(dir, &["synth", "--out", "corpus", "--n", "60", "--size", "32", "--seed", "5"]);
    }
    c
}

const TRAIN: &[&str] = &[
    "train", "--labels", "corpus/labels.csv", "--images", "corpus", "--size", "32", "--batch-size", "16", "--epochs", "2",
    "--epochs-phase2", "1", "--lr-min", "4e-4", "--lr-max", "1e-2",
];

/// Run one subcommand into `out_a` and again into `out_b`, then compare.
fn twice(dir: &Path, name: &str, args: &[&str], out_a: &str, out_b: &str) -> Result<(), String> {
    for out in [out_a, out_b] {
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--out", out]);
        let o = run_in(dir, &full);
        if o.code != 0 {
            return Err(format!("{name} exited {}: {}", o.code, o.stderr));
        }
    }
    same_files(&dir.join(out_a), &dir.join(out_b))
}

/// Byte-identical outputs of every subcommand on repeated runs; `serve` is
/// compared on its response bodies.
pub fn idempotence(dir: &Path) -> Vec<(&'static str, Result<(), String>)> {
    corpus(dir);
    let mut results = vec![
        ("synth", twice(dir, "synth", &["synth", "--n", "20", "--size", "32", "--seed", "9"], "s1", "s2")),
        (
            "prepare-labels",
            twice(dir, "prepare-labels", &["prepare-labels", "--metadata", "corpus/metadata.csv", "--vocab", "synth", "--split", "0.25"], "p1/l.csv", "p2/l.csv"),
        ),
        ("cooccur", twice(dir, "cooccur", &["cooccur", "--labels", "corpus/labels.csv"], "c1.csv", "c2.csv")),
        (
            "lr-find",
            twice(
                dir,
                "lr-find",
                &["lr-find", "--labels", "corpus/labels.csv", "--images", "corpus", "--size", "32", "--batch-size", "16", "--steps", "12", "--wd", "0,0.1"],
                "lr1.csv",
                "lr2.csv",
            ),
        ),
        ("train", twice(dir, "train", TRAIN, "t1", "t2")),
    ];
    let trained = dir.join("t1/model.weights").exists();
    let eval_args = ["eval", "--weights", "t1/model.weights", "--labels", "t1/split/valid.csv", "--images", "corpus"];
    results.push(("eval", if trained { twice(dir, "eval", &eval_args, "e1", "e2") } else { Err("no model".into()) }));
    let score_args = ["eval", "--scores", "e1/scores.csv", "--labels", "t1/split/valid.csv"];
    results.push((
        "eval --scores",
        if trained {
            twice(dir, "eval", &score_args, "f1", "f2").and_then(|()| {
                let a = std::fs::read(dir.join("e1/report.json")).unwrap();
                let b = std::fs::read(dir.join("f1/report.json")).unwrap();
                if a == b { Ok(()) } else { Err("scored report differs from the model's".into()) }
            })
        } else {
            Err("no model".into())
        },
    ));
    let cam_args = ["gradcam", "--weights", "t1/model.weights", "--image", "corpus/images/synth_00001.png", "--class", "Disk"];
    results.push(("gradcam", if trained { twice(dir, "gradcam", &cam_args, "g1", "g2") } else { Err("no model".into()) }));
    results.push(("serve", if trained { serve_twice(dir) } else { Err("no model".into()) }));
    results
}

fn serve_twice(dir: &Path) -> Result<(), String> {
    let image = std::fs::read(dir.join("corpus/images/synth_00002.png")).unwrap();
    let mut seen = Vec::new();
    for _ in 0..2 {
        let server = Server::start(dir, &["--weights", "t1/model.weights"])?;
        let (s1, predict) = server.upload("/predict", &image);
        let (s2, labels) = server.get("/labels");
        let (s3, cam) = server.upload("/gradcam?class=Bar", &image);
        if (s1, s2, s3) != (200, 200, 200) {
            return Err(format!("statuses {s1} {s2} {s3}"));
        }
        seen.push((without_timing(&predict), labels, cam));
    }
    if seen[0] == seen[1] { Ok(()) } else { Err("responses differ between launches".into()) }
}
