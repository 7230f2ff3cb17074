//! Boundary to an out-of-process image-to-3D generator: a facade image goes in, a GLB
//! comes out.

use std::path::PathBuf;
use std::process::Command;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorProviderConfig {
    /// `program args.. --image PATH --out PATH`; the command writes a GLB to the out path.
    ExternalCommand {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
    /// Multipart POST with an `image` part, answered by the GLB bytes.
    HttpEndpoint {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_timeout() -> u64 {
    300
}

#[derive(Debug, thiserror::Error)]
#[error("generator provider failed: {0}")]
pub struct ProviderFailure(pub String);

pub fn generate_model(image: &[u8], config: &GeneratorProviderConfig) -> Result<Vec<u8>, ProviderFailure> {
    let fail = |m: String| ProviderFailure(m);
    match config {
        GeneratorProviderConfig::ExternalCommand { program, args } => {
            let dir = tempfile::tempdir().map_err(|e| fail(e.to_string()))?;
            let image_path = dir.path().join("facade.png");
            let out: PathBuf = dir.path().join("model.glb");
            std::fs::write(&image_path, image).map_err(|e| fail(e.to_string()))?;
            let output = Command::new(program)
                .args(args)
                .arg("--image")
                .arg(&image_path)
                .arg("--out")
                .arg(&out)
                .output()
                .map_err(|e| fail(format!("{program}: {e}")))?;
            if !output.status.success() {
                return Err(fail(format!(
                    "{program} exited with {}: {}",
                    output.status,
                    String::from_utf8_lossy(&output.stderr).trim()
                )));
            }
            std::fs::read(&out).map_err(|e| fail(format!("{}: {e}", out.display())))
        }
        GeneratorProviderConfig::HttpEndpoint { url, timeout_secs } => {
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(*timeout_secs))
                .build()
                .map_err(|e| fail(e.to_string()))?;
            let part = reqwest::blocking::multipart::Part::bytes(image.to_vec()).file_name("facade.png");
            let form = reqwest::blocking::multipart::Form::new().part("image", part);
            let response = client
                .post(url)
                .multipart(form)
                .send()
                .map_err(|e| fail(e.to_string()))?;
            if !response.status().is_success() {
                return Err(fail(format!("{url} answered {}", response.status())));
            }
            Ok(response.bytes().map_err(|e| fail(e.to_string()))?.to_vec())
        }
    }
}
