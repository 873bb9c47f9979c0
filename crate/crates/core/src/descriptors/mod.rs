//! VNFD/NSD/NST descriptor packages.

mod emit;
mod model;
mod parse;
mod validate;

use std::fmt;
use std::path::{Path, PathBuf};

pub use emit::{serialize, serialize_nsd, serialize_nst, serialize_vnfd, ToYaml};
pub use model::*;
pub use parse::{parse_nsd, parse_nst, parse_vnfd};
pub use validate::{validate_package, Finding, RELATION_HANDLER_PREFIX};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DescriptorError {
    Syntax { file: Option<PathBuf>, line: usize, column: usize, message: String },
    Schema { file: Option<PathBuf>, path: String, message: String },
    Io { file: PathBuf, message: String },
}

impl DescriptorError {
    fn in_file(self, name: &Path) -> Self {
        match self {
            DescriptorError::Syntax { line, column, message, .. } => {
                DescriptorError::Syntax { file: Some(name.to_path_buf()), line, column, message }
            }
            DescriptorError::Schema { path, message, .. } => {
                DescriptorError::Schema { file: Some(name.to_path_buf()), path, message }
            }
            other => other,
        }
    }

    /// Dotted path of the offending field, for schema errors.
    pub fn path(&self) -> Option<&str> {
        match self {
            DescriptorError::Schema { path, .. } => Some(path),
            _ => None,
        }
    }
}

impl fmt::Display for DescriptorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = |file: &Option<PathBuf>| file.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default();
        match self {
            DescriptorError::Syntax { file, line, column, message } => {
                write!(f, "{}syntax error at line {line}, column {column}: {message}", prefix(file))
            }
            DescriptorError::Schema { file, path, message } => {
                let at = if path.is_empty() { "<root>" } else { path };
                write!(f, "{}schema error at {at}: {message}", prefix(file))
            }
            DescriptorError::Io { file, message } => write!(f, "{}: {message}", file.display()),
        }
    }
}

impl std::error::Error for DescriptorError {}

fn yaml_files(dir: &Path) -> Result<Vec<PathBuf>, DescriptorError> {
    let io = |e: std::io::Error| DescriptorError::Io { file: dir.to_path_buf(), message: e.to_string() };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if matches!(path.extension().and_then(|e| e.to_str()), Some("yaml" | "yml")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn read(path: &Path) -> Result<String, DescriptorError> {
    std::fs::read_to_string(path).map_err(|e| DescriptorError::Io { file: path.to_path_buf(), message: e.to_string() })
}

/// Loads `vnfd/*.yaml`, `nsd.yaml` and `nst/*.yaml` from a package directory.
pub fn load_package(dir: &Path) -> Result<DescriptorPackage, DescriptorError> {
    let mut vnfds = Vec::new();
    for p in yaml_files(&dir.join("vnfd"))? {
        vnfds.push(parse_vnfd(&read(&p)?).map_err(|e| e.in_file(&p))?);
    }
    let nsd_path = dir.join("nsd.yaml");
    let nsd = parse_nsd(&read(&nsd_path)?).map_err(|e| e.in_file(&nsd_path))?;
    let mut nsts = Vec::new();
    for p in yaml_files(&dir.join("nst"))? {
        nsts.push(parse_nst(&read(&p)?).map_err(|e| e.in_file(&p))?);
    }
    Ok(DescriptorPackage { vnfds, nsd, nsts })
}

/// Writes a package in the layout read by [`load_package`].
pub fn write_package(pkg: &DescriptorPackage, dir: &Path) -> Result<(), DescriptorError> {
    let write = |path: PathBuf, text: String| {
        std::fs::write(&path, text).map_err(|e| DescriptorError::Io { file: path.clone(), message: e.to_string() })
    };
    for sub in ["vnfd", "nst"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| DescriptorError::Io { file: d.clone(), message: e.to_string() })?;
    }
    for v in &pkg.vnfds {
        write(dir.join("vnfd").join(format!("{}.yaml", v.id)), serialize_vnfd(v))?;
    }
    write(dir.join("nsd.yaml"), serialize_nsd(&pkg.nsd))?;
    for n in &pkg.nsts {
        write(dir.join("nst").join(format!("{}.yaml", n.id)), serialize_nst(n))?;
    }
    Ok(())
}

const EPS_VNFDS: [(&str, &str); 6] = [
    ("enb.yaml", include_str!("../../packages/eps/vnfd/enb.yaml")),
    ("hss.yaml", include_str!("../../packages/eps/vnfd/hss.yaml")),
    ("mme.yaml", include_str!("../../packages/eps/vnfd/mme.yaml")),
    ("spgwc.yaml", include_str!("../../packages/eps/vnfd/spgwc.yaml")),
    ("spgwu.yaml", include_str!("../../packages/eps/vnfd/spgwu.yaml")),
    ("ue.yaml", include_str!("../../packages/eps/vnfd/ue.yaml")),
];
const EPS_NSD: &str = include_str!("../../packages/eps/nsd.yaml");
const EPS_NSTS: [(&str, &str); 2] = [
    ("embb.yaml", include_str!("../../packages/eps/nst/embb.yaml")),
    ("urllc.yaml", include_str!("../../packages/eps/nst/urllc.yaml")),
];

/// The bundled EPS package: six VNFDs, one NSD and the eMBB and URLLC templates.
pub fn eps_package() -> DescriptorPackage {
    let vnfds = EPS_VNFDS
        .iter()
        .map(|(name, text)| parse_vnfd(text).unwrap_or_else(|e| panic!("bundled {name}: {e}")))
        .collect();
    let nsd = parse_nsd(EPS_NSD).unwrap_or_else(|e| panic!("bundled nsd.yaml: {e}"));
    let nsts = EPS_NSTS
        .iter()
        .map(|(name, text)| parse_nst(text).unwrap_or_else(|e| panic!("bundled {name}: {e}")))
        .collect();
    DescriptorPackage { vnfds, nsd, nsts }
}
