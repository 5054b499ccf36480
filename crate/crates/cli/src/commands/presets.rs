use serde::Serialize;

use odmr_core::kinetics::presets::{preset, KineticsDoc, PRESET_NAMES};

use super::{CommandOutput, Context};
use crate::error::CliResult;
use crate::output::Provenance;

#[derive(Serialize)]
struct Entry {
    name: &'static str,
    note: &'static str,
    kinetics: KineticsDoc,
}

#[derive(Serialize)]
struct PresetsDoc {
    provenance: Provenance,
    presets: Vec<Entry>,
}

/// Prints the built-in parameter sets; writes nothing unless `--out` is given.
pub fn run(ctx: &Context, write: bool) -> CliResult<CommandOutput> {
    let mut prov = ctx.provenance("presets");
    let mut presets = Vec::new();
    for name in PRESET_NAMES {
        let p = preset(name)?;
        prov.preset(Some(name));
        presets.push(Entry {
            name: p.name,
            note: p.note,
            kinetics: KineticsDoc::from_params(&p.kinetic, &p.optical),
        });
    }
    let doc = PresetsDoc { provenance: prov, presets };
    let mut out = CommandOutput::default();
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    if write {
        out.files.add("presets.json", text.clone().into_bytes());
    }
    out.stdout = Some(text);
    Ok(out)
}
