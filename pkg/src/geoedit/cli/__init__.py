"""Command-line front end: configs, manifests, and the dispatcher."""

from .artifacts import (
    load_denoiser,
    load_editor,
    load_pruner_head,
    save_denoiser,
    save_editor,
    save_pruner_head,
    write_csv,
)
from .config import DEFAULTS, config_hash, effective_config, load_config, validate_config
from .main import SUBCOMMANDS, build_parser, dispatch, main
from .manifest import check_manifest, git_describe, sha256_file, write_manifest

__all__ = [
    "DEFAULTS",
    "SUBCOMMANDS",
    "build_parser",
    "check_manifest",
    "config_hash",
    "dispatch",
    "effective_config",
    "git_describe",
    "load_config",
    "load_denoiser",
    "load_editor",
    "load_pruner_head",
    "main",
    "save_denoiser",
    "save_editor",
    "save_pruner_head",
    "sha256_file",
    "validate_config",
    "write_csv",
    "write_manifest",
]
