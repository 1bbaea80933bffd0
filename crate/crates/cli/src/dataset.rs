//! Loading the image directory and its annotations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use stenunet::specio::{load_coco, load_image, rasterize, BinaryMask, ImageGray};

use crate::CliError;

/// One input image keyed by its file stem.
#[derive(Clone, Debug)]
pub struct Entry {
    pub id: String,
    pub path: PathBuf,
    pub image: ImageGray,
    /// Rasterized reference, present when annotations were given.
    pub gt: Option<BinaryMask>,
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn required<'a>(key: &str, v: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
    v.as_deref()
        .ok_or_else(|| CliError::Config(format!("missing required key {key:?}")))
}

/// With annotations, the images listed there; otherwise every `.png` in the
/// directory. Sorted by id either way.
pub fn load_entries(images: &Path, annotations: Option<&Path>) -> Result<Vec<Entry>, CliError> {
    let mut out = BTreeMap::new();
    match annotations {
        Some(ann_path) => {
            let set = load_coco(ann_path)?;
            for entry in &set.images {
                let path = images.join(&entry.file_name);
                let image = load_image(&path)?;
                if (image.height(), image.width()) != (entry.height, entry.width) {
                    return Err(CliError::Runtime(format!(
                        "{}: image is {}x{} but {} lists {}x{}",
                        path.display(),
                        image.height(),
                        image.width(),
                        ann_path.display(),
                        entry.height,
                        entry.width
                    )));
                }
                let gt = rasterize(set.polygons_for(entry.id), entry.height, entry.width)?;
                insert(&mut out, path, image, Some(gt))?;
            }
        }
        None => {
            let dir = std::fs::read_dir(images)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", images.display())))?;
            let mut paths = Vec::new();
            for item in dir {
                let p = item.map_err(|e| CliError::Runtime(format!("{}: {e}", images.display())))?.path();
                if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
                    paths.push(p);
                }
            }
            paths.sort();
            for path in paths {
                let image = load_image(&path)?;
                insert(&mut out, path, image, None)?;
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Runtime(format!("no images found in {}", images.display())));
    }
    Ok(out.into_values().collect())
}

fn insert(
    out: &mut BTreeMap<String, Entry>,
    path: PathBuf,
    image: ImageGray,
    gt: Option<BinaryMask>,
) -> Result<(), CliError> {
    let id = stem(&path);
    if let Some(prev) = out.get(&id) {
        return Err(CliError::Runtime(format!(
            "image id {id:?} is shared by {} and {}",
            prev.path.display(),
            path.display()
        )));
    }
    out.insert(id.clone(), Entry { id, path, image, gt });
    Ok(())
}

/// The reference mask, or an error naming the image.
pub fn gt_of(entry: &Entry) -> Result<&BinaryMask, CliError> {
    entry
        .gt
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("{}: no annotations (set io.annotations)", entry.path.display())))
}
