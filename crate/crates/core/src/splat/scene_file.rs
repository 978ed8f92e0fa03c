use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GaussianPrimitive, SplatScene};
use crate::error::{Error, Result};

pub const SCENE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    version: u32,
    primitives: Vec<GaussianPrimitive>,
    #[serde(default)]
    selection: Option<Vec<bool>>,
}

impl SplatScene {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SceneFile {
            version: SCENE_VERSION,
            primitives: self.primitives.clone(),
            selection: Some(self.selection.clone()),
        })?)
    }

    /// A missing `selection` means nothing is selected.
    pub fn from_json(text: &str) -> Result<Self> {
        let f: SceneFile = serde_json::from_str(text)
            .map_err(|e| Error::format(0, format!("scene file: {e}")))?;
        if f.version != SCENE_VERSION {
            return Err(Error::format(0, format!("scene version {} unsupported", f.version)));
        }
        let mut scene = SplatScene::new(f.primitives);
        if let Some(sel) = f.selection {
            if sel.len() != scene.len() {
                return Err(Error::format(
                    0,
                    format!("selection has {} entries for {} primitives", sel.len(), scene.len()),
                ));
            }
            scene.selection = sel;
        }
        scene
            .validate()
            .map_err(|e| Error::format(0, format!("scene file: {e}")))?;
        Ok(scene)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::{synthetic_scene, SyntheticSceneConfig};

    #[test]
    fn round_trip_exact() {
        let mut s = synthetic_scene(&SyntheticSceneConfig::default(), 4).unwrap();
        s.selection[3] = true;
        let back = SplatScene::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back.primitives, s.primitives);
        assert_eq!(back.selection, s.selection);
    }

    #[test]
    fn rejects_bad_scale_and_selection() {
        let bad = r#"{"version":1,"primitives":[{"mu":[0,0],"scale":[0,1],"rot":0,"opacity_pre":0,"color":[1,1,1]}]}"#;
        assert!(matches!(SplatScene::from_json(bad), Err(Error::Format { .. })));
        let bad_sel = r#"{"version":1,"primitives":[],"selection":[true]}"#;
        assert!(SplatScene::from_json(bad_sel).is_err());
    }
}
