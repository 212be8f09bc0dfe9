//! `--config` files: TOML or JSON layered over the built-in defaults.
//!
//! Top-level keys override [`OptimConfig`]; the `init`, `occlusion` and
//! `guidance` tables override their own settings. Unknown keys are errors.

use std::path::Path;

use garment_core::init::InitConfig;
use garment_core::occlusion::OcclusionConfig;
use garment_core::optim::{GuidanceSpec, OptimConfig};
use garment_core::{Error, Result};
use serde_json::{Map, Value};

/// Tables merged key by key; every other value is replaced whole.
const TABLES: [&str; 4] = ["views", "init", "occlusion", "guidance"];

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub optim: OptimConfig,
    pub init: InitConfig,
    pub occlusion: OcclusionConfig,
    pub guidance: GuidanceSpec,
}

impl Settings {
    pub fn defaults(optim: OptimConfig) -> Self {
        Self {
            optim,
            init: InitConfig::default(),
            occlusion: OcclusionConfig::default(),
            guidance: GuidanceSpec::default(),
        }
    }

    /// Defaults overridden by `path`, if given.
    pub fn load(path: Option<&Path>, optim: OptimConfig) -> Result<Self> {
        let base = Self::defaults(optim);
        match path {
            None => Ok(base),
            Some(p) => base.overlay(&read_value(p)?),
        }
    }

    pub fn overlay(&self, file: &Value) -> Result<Self> {
        let mut merged = self.to_value()?;
        merge(&mut merged, file, "")?;
        let Value::Object(mut obj) = merged else {
            unreachable!("settings serialize to an object")
        };
        let take = |obj: &mut Map<String, Value>, k: &str| obj.remove(k).unwrap_or(Value::Null);
        let init = take(&mut obj, "init");
        let occlusion = take(&mut obj, "occlusion");
        let guidance = take(&mut obj, "guidance");
        Ok(Self {
            optim: from_value(Value::Object(obj), "config")?,
            init: from_value(init, "init")?,
            occlusion: from_value(occlusion, "occlusion")?,
            guidance: from_value(guidance, "guidance")?,
        })
    }

    fn to_value(&self) -> Result<Value> {
        let mut v = to_value(&self.optim)?;
        let obj = v.as_object_mut().expect("optimizer config serializes to an object");
        obj.insert("init".into(), to_value(&self.init)?);
        obj.insert("occlusion".into(), to_value(&self.occlusion)?);
        obj.insert("guidance".into(), to_value(&self.guidance)?);
        Ok(v)
    }
}

fn to_value<T: serde::Serialize>(t: &T) -> Result<Value> {
    serde_json::to_value(t).map_err(|e| Error::format(format!("config: {e}")))
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value, what: &str) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::invalid(format!("{what}: {e}")))
}

/// Parse a TOML (`.toml`) or JSON (anything else) file.
pub fn read_value(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io_path(path, e))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
    }
}

fn merge(base: &mut Value, over: &Value, prefix: &str) -> Result<()> {
    let (Value::Object(b), Value::Object(o)) = (&mut *base, over) else {
        return Err(Error::invalid(format!("config `{prefix}` must be a table")));
    };
    for (k, v) in o {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let slot = b
            .get_mut(k)
            .ok_or_else(|| Error::invalid(format!("unknown config key `{key}`")))?;
        if TABLES.contains(&k.as_str()) {
            merge(slot, v, &key)?;
        } else {
            *slot = v.clone();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use garment_core::occlusion::PrunePolicy;
    use garment_core::optim::Weighting;

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let base = Settings::defaults(OptimConfig::default());
        let file: Value = toml::from_str(
            r#"
            iterations = 7
            views = { width = 64 }
            [init]
            eta = 0.25
            [occlusion]
            prune = { kind = "absolute", tau = 0.02 }
            [guidance]
            weighting = { kind = "one_minus_alpha_bar" }
            "#,
        )
        .unwrap();
        let s = base.overlay(&file).unwrap();
        assert_eq!(s.optim.iterations, 7);
        assert_eq!(s.optim.views.width, 64);
        assert_eq!(s.optim.views.height, 512);
        assert_eq!(s.optim.lr_position, 5e-5);
        assert_eq!(s.init.eta, 0.25);
        assert_eq!(s.init.k_interp, 2);
        assert_eq!(s.occlusion.prune, PrunePolicy::Absolute { tau: 0.02 });
        assert_eq!(s.occlusion.rho, 0.03);
        assert_eq!(s.guidance.weighting, Weighting::OneMinusAlphaBar);
    }

    #[test]
    fn unknown_and_mistyped_keys_rejected() {
        let base = Settings::defaults(OptimConfig::default());
        let err = base.overlay(&serde_json::json!({"views": {"wdth": 3}})).unwrap_err();
        assert!(err.to_string().contains("views.wdth"));
        assert!(base.overlay(&serde_json::json!({"iterations": "many"})).is_err());
        assert_eq!(base.overlay(&serde_json::json!({})).unwrap(), base);
    }
}
