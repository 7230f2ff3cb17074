use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{load_mask, ComponentMask, SegmentationError};

/// Where masks come from. Serialized with a `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskProviderConfig {
    /// JSON file mapping prompt → mask image path (or list of paths), relative to the
    /// file's directory. A directory path means `<dir>/masks.json`.
    FileMap { path: PathBuf },
    /// `program args.. --image PATH --prompt TEXT --out DIR`; the command writes mask images
    /// and `manifest.json` (`{"masks": [file, ..]}`) into DIR.
    ExternalCommand {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
    /// Multipart POST (`image`, `prompt`) answered by `{"masks": [base64 image, ..]}`.
    HttpEndpoint {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_timeout() -> u64 {
    60
}

fn failure(msg: impl Into<String>) -> SegmentationError {
    SegmentationError::ProviderFailure(msg.into())
}

/// Masks for `prompt` on the rendered view (`view_png`). Each mask keeps the prompt as
/// label; disjoint instances stay separate masks.
pub fn request_masks(
    prompt: &str,
    view_png: &[u8],
    config: &MaskProviderConfig,
) -> Result<Vec<ComponentMask>, SegmentationError> {
    let images = match config {
        MaskProviderConfig::FileMap { path } => file_map(prompt, path)?,
        MaskProviderConfig::ExternalCommand { program, args } => {
            external_command(prompt, view_png, program, args)?
        }
        MaskProviderConfig::HttpEndpoint { url, timeout_secs } => {
            http_endpoint(prompt, view_png, url, *timeout_secs)?
        }
    };
    images
        .iter()
        .map(|bytes| {
            let (mask, warnings) = load_mask(bytes, prompt, prompt)
                .map_err(|e| failure(format!("provider returned an unreadable mask: {e}")))?;
            for w in warnings {
                log::warn!("{}: {}", w.code, w.message);
            }
            Ok(mask)
        })
        .collect()
}

fn file_map(prompt: &str, path: &Path) -> Result<Vec<Vec<u8>>, SegmentationError> {
    let map_file = if path.is_dir() { path.join("masks.json") } else { path.to_path_buf() };
    let root = map_file.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(&map_file)
        .map_err(|e| failure(format!("{}: {e}", map_file.display())))?;
    let map: BTreeMap<String, Value> =
        serde_json::from_str(&text).map_err(|e| failure(format!("{}: {e}", map_file.display())))?;
    let files: Vec<String> = match map.get(prompt) {
        None => return Ok(Vec::new()),
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_owned).ok_or_else(|| failure("mask entries must be strings")))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(failure(format!("entry for `{prompt}` is neither a path nor a list"))),
    };
    files
        .iter()
        .map(|f| {
            let p = root.join(f);
            std::fs::read(&p).map_err(|e| failure(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn manifest_files(manifest: &Value) -> Option<Vec<String>> {
    let list = match manifest {
        Value::Array(a) => a,
        Value::Object(o) => o.get("masks")?.as_array()?,
        _ => return None,
    };
    list.iter().map(|v| v.as_str().map(str::to_owned)).collect()
}

fn external_command(
    prompt: &str,
    view_png: &[u8],
    program: &str,
    args: &[String],
) -> Result<Vec<Vec<u8>>, SegmentationError> {
    let work = tempfile::tempdir().map_err(|e| failure(e.to_string()))?;
    let image = work.path().join("view.png");
    let out = work.path().join("out");
    std::fs::write(&image, view_png).map_err(|e| failure(e.to_string()))?;
    std::fs::create_dir(&out).map_err(|e| failure(e.to_string()))?;
    let output = Command::new(program)
        .args(args)
        .arg("--image")
        .arg(&image)
        .arg("--prompt")
        .arg(prompt)
        .arg("--out")
        .arg(&out)
        .output()
        .map_err(|e| failure(format!("cannot run `{program}`: {e}")))?;
    if !output.status.success() {
        return Err(failure(format!(
            "`{program}` exited with {}: {}{}",
            output.status,
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr)
        )));
    }
    let manifest_path = out.join("manifest.json");
    let manifest: Value = std::fs::read(&manifest_path)
        .map_err(|e| failure(format!("missing manifest.json: {e}")))
        .and_then(|b| serde_json::from_slice(&b).map_err(|e| failure(format!("manifest.json: {e}"))))?;
    let files = manifest_files(&manifest).ok_or_else(|| failure("manifest.json lists no masks array"))?;
    files
        .iter()
        .map(|f| std::fs::read(out.join(f)).map_err(|e| failure(format!("{f}: {e}"))))
        .collect()
}

fn http_endpoint(
    prompt: &str,
    view_png: &[u8],
    url: &str,
    timeout_secs: u64,
) -> Result<Vec<Vec<u8>>, SegmentationError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(timeout_secs))
        .build()
        .map_err(|e| failure(e.to_string()))?;
    let form = reqwest::blocking::multipart::Form::new()
        .part(
            "image",
            reqwest::blocking::multipart::Part::bytes(view_png.to_vec())
                .file_name("view.png")
                .mime_str("image/png")
                .map_err(|e| failure(e.to_string()))?,
        )
        .text("prompt", prompt.to_owned());
    let response = client
        .post(url)
        .multipart(form)
        .send()
        .map_err(|e| failure(format!("POST {url}: {e}")))?;
    let status = response.status();
    let body = response.text().map_err(|e| failure(e.to_string()))?;
    if !status.is_success() {
        return Err(failure(format!("POST {url} returned {status}: {body}")));
    }
    let value: Value = serde_json::from_str(&body).map_err(|e| failure(format!("malformed response: {e}")))?;
    let encoded = value
        .get("masks")
        .and_then(Value::as_array)
        .ok_or_else(|| failure("response lacks a masks array"))?;
    encoded
        .iter()
        .map(|m| {
            let s = m.as_str().ok_or_else(|| failure("mask entries must be base64 strings"))?;
            base64::engine::general_purpose::STANDARD
                .decode(s)
                .map_err(|e| failure(format!("bad base64 mask: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::bits_to_png;

    fn write_mask(dir: &Path, name: &str, on: usize) {
        let bits: Vec<bool> = (0..16).map(|i| i < on).collect();
        std::fs::write(dir.join(name), bits_to_png(4, 4, &bits)).unwrap();
    }

    #[test]
    fn file_map_loads_listed_masks() {
        let dir = tempfile::tempdir().unwrap();
        write_mask(dir.path(), "window.png", 5);
        write_mask(dir.path(), "door_a.png", 2);
        write_mask(dir.path(), "door_b.png", 3);
        std::fs::write(
            dir.path().join("masks.json"),
            r#"{"window": "window.png", "door": ["door_a.png", "door_b.png"]}"#,
        )
        .unwrap();
        let cfg = MaskProviderConfig::FileMap { path: dir.path().into() };
        let w = request_masks("window", &[], &cfg).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].count(), 5);
        assert_eq!(w[0].prompt, "window");
        let d = request_masks("door", &[], &cfg).unwrap();
        assert_eq!(d.iter().map(|m| m.count()).collect::<Vec<_>>(), vec![2, 3]);
        assert!(request_masks("roof", &[], &cfg).unwrap().is_empty());
    }

    #[test]
    fn file_map_missing_image_fails() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("masks.json"), r#"{"window": "gone.png"}"#).unwrap();
        let cfg = MaskProviderConfig::FileMap { path: dir.path().into() };
        assert_eq!(request_masks("window", &[], &cfg).unwrap_err().code(), "ProviderFailure");
    }

    #[cfg(unix)]
    #[test]
    fn external_command_nonzero_exit_carries_output() {
        let cfg = MaskProviderConfig::ExternalCommand {
            program: "sh".into(),
            args: vec!["-c".into(), "echo segmenter exploded >&2; exit 3".into(), "sh".into()],
        };
        let err = request_masks("window", b"png", &cfg).unwrap_err();
        assert_eq!(err.code(), "ProviderFailure");
        assert!(err.to_string().contains("segmenter exploded"));
    }

    #[cfg(unix)]
    #[test]
    fn external_command_reads_manifest() {
        let src = tempfile::tempdir().unwrap();
        write_mask(src.path(), "m.png", 7);
        // Arguments after the script arrive as $1..; the --out value is the sixth.
        let script = format!(
            "cp {}/m.png \"$6/m.png\" && echo '{{\"masks\": [\"m.png\"]}}' > \"$6/manifest.json\"",
            src.path().display()
        );
        let cfg = MaskProviderConfig::ExternalCommand {
            program: "sh".into(),
            args: vec!["-c".into(), script, "sh".into()],
        };
        let masks = request_masks("window", b"png", &cfg).unwrap();
        assert_eq!(masks.len(), 1);
        assert_eq!(masks[0].count(), 7);
    }

    #[test]
    fn config_json_is_tagged() {
        let cfg: MaskProviderConfig =
            serde_json::from_str(r#"{"kind": "http_endpoint", "url": "http://x"}"#).unwrap();
        assert_eq!(
            cfg,
            MaskProviderConfig::HttpEndpoint { url: "http://x".into(), timeout_secs: 60 }
        );
    }
}
