"""Artifact serialization shared by the subcommands.

Checkpoints reuse the binary tensor format from the autodiff package; the
helpers here fix the key layout per artifact kind (denoiser, editor, pruning
head) so any subcommand can reload what another one wrote.  CSV files are
written with the stdlib csv module and repr-exact floats: a rerun with the
same seed reproduces them byte for byte.
"""

import csv

import numpy as np

from ..autodiff.checkpoint import load_checkpoint, save_checkpoint
from ..diffusion.denoiser import ToyDenoiser
from ..diffusion.editing import TangentHead
from ..errors import CheckpointFormatError, ConfigError
from ..geometry.christoffel import ChristoffelModel
from ..pruning.head import PruningHead

META_TRAINED_STEPS = "meta.trained_steps"


def write_csv(path, rows, columns=None):
    """Rows of dicts to a headered CSV; column order is the first row's."""
    rows = list(rows)
    if columns is None:
        if not rows:
            raise ConfigError("cannot infer CSV columns from zero rows")
        columns = list(rows[0].keys())

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(v)

    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(row[c]) for c in columns])
    return path


def save_denoiser(path, model):
    state = dict(model.state_dict())
    state[META_TRAINED_STEPS] = np.array(float(model.trained_steps))
    save_checkpoint(path, state)


def load_denoiser(path, base=16):
    state = load_checkpoint(path)
    trained = int(state.pop(META_TRAINED_STEPS, np.array(0.0)))
    model = ToyDenoiser(base=base)
    model.load_state_dict(state)
    model.trained_steps = trained
    return model


def save_editor(path, field, tangent):
    """One checkpoint holding both halves of a trained edit module."""
    state = {f"field.{k}": v for k, v in field.state_dict().items()}
    state.update({f"tangent.{k}": v for k, v in tangent.state_dict().items()})
    save_checkpoint(path, state)


def load_editor(path):
    """Rebuild (field, tangent); every dimension is recovered from shapes."""
    state = load_checkpoint(path)
    field_state = {k[len("field."):]: v for k, v in state.items() if k.startswith("field.")}
    tangent_state = {k[len("tangent."):]: v for k, v in state.items() if k.startswith("tangent.")}
    if not field_state or not tangent_state:
        raise CheckpointFormatError(
            f"{path} is not an edit-module checkpoint (field.*/tangent.* keys missing)"
        )
    dim, rank = field_state["u"].shape
    t_dim = field_state["w1"].shape[0] - dim
    hidden = field_state["w1"].shape[1]
    edit_dim = tangent_state["w"].shape[0] - dim - t_dim
    field = ChristoffelModel(dim=dim, t_dim=t_dim, rank=rank, hidden=hidden)
    field.load_state_dict(field_state)
    tangent = TangentHead(channels=dim, t_dim=t_dim, edit_dim=edit_dim)
    tangent.load_state_dict(tangent_state)
    return field, tangent


def save_pruner_head(path, head):
    save_checkpoint(path, dict(head.state_dict()))


def load_pruner_head(path, channels, edit_dim):
    head = PruningHead(channels, edit_dim=edit_dim)
    head.load_state_dict(load_checkpoint(path))
    return head
