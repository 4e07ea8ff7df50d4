//! Argument parsing with an optional `key = value` defaults file.
//!
//! Keys are flag names without the leading dashes (`gt-res` or `gt_res`).
//! Precedence: command line, then config file, then environment, then the
//! built-in default.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgAction, CommandFactory, FromArgMatches};
use smd_core::SmdError;

use crate::args::Cli;
use crate::dataset::parse_kv;

/// Extra arguments that apply `file` entries not already given on the
/// command line of subcommand `sub`.
fn file_args(sub: &clap::Command, matches: &clap::ArgMatches, file: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading config {}", file.display()))?;
    let mut extra = Vec::new();
    for (key, value) in parse_kv(&text)? {
        let id = key.replace('-', "_");
        let long = key.replace('_', "-");
        let Some(arg) = sub
            .get_arguments()
            .find(|a| !a.is_global_set() && (a.get_id().as_str() == id || a.get_long() == Some(long.as_str())))
        else {
            return Err(SmdError::Config(format!("unknown key '{key}' for '{}'", sub.get_name())).into());
        };
        if matches.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = format!("--{}", arg.get_long().unwrap_or(&id));
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" => extra.push(flag.into()),
                "false" => {}
                other => bail!(SmdError::Config(format!("'{key}' expects true or false, got '{other}'"))),
            },
            ArgAction::Append => {
                for v in value.split_whitespace() {
                    extra.push(flag.clone().into());
                    extra.push(v.into());
                }
            }
            _ => {
                extra.push(flag.into());
                extra.push(value.into());
            }
        }
    }
    Ok(extra)
}

/// Parses `argv` (including the program name), merging a `--config` file.
pub fn parse_from<I, T>(argv: I) -> std::result::Result<Cli, anyhow::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cmd = Cli::command();
    // Lenient first pass: required flags may still come from the file.
    let matches = cmd.clone().ignore_errors(true).try_get_matches_from(&argv)?;
    let Some(file) = matches.get_one::<std::path::PathBuf>("config").cloned() else {
        return Ok(Cli::from_arg_matches(&cmd.try_get_matches_from(&argv)?)?);
    };
    let Some((name, sub_matches)) = matches.subcommand() else {
        return Ok(Cli::from_arg_matches(&cmd.try_get_matches_from(&argv)?)?);
    };
    let sub = cmd.find_subcommand(name).expect("parsed subcommand exists");
    let extra = file_args(sub, sub_matches, &file)?;
    let mut full = argv;
    full.extend(extra);
    let matches = cmd.try_get_matches_from(&full)?;
    Ok(Cli::from_arg_matches(&matches)?)
}
