"""The full two-pass model: parameter groups and the three sub-networks."""

from __future__ import annotations

import dataclasses
import hashlib

import numpy as np

from .checkpoint import CheckpointError, assign, load_checkpoint, save_checkpoint
from .config import ModelConfig
from .data import DataConfig, Utterance, Vocab, frontend
from .deliberation import DeliberationDecoder
from .rnnt import RnntDecoder, SharedEncoder

_GROUP_SEEDS = {"enc": 1, "rnnt": 2, "delib": 3}


class TwoPassModel:
    """Shared encoder (``enc``), transducer decoder (``rnnt``) and
    deliberation decoder incl. additional encoder (``delib``)."""

    def __init__(self, cfg: ModelConfig, data_cfg: DataConfig, seed: int = 0):
        self.cfg = cfg
        self.data_cfg = data_cfg
        self.seed = seed
        self.vocab = Vocab.default(data_cfg.n_symbols)
        V = len(self.vocab)
        feat_dim = data_cfg.feat_dim * (data_cfg.stack_prev + 1)
        rng = {g: np.random.default_rng([seed, s]) for g, s in _GROUP_SEEDS.items()}
        self.groups = {
            "enc": SharedEncoder.init(rng["enc"], cfg, feat_dim),
            "rnnt": RnntDecoder.init(rng["rnnt"], cfg, V),
            "delib": DeliberationDecoder.init(rng["delib"], cfg, V, cfg.enc_proj),
        }
        self._build()

    def _build(self) -> None:
        allowed = self.vocab.token_ids
        V = len(self.vocab)
        self.encoder = SharedEncoder(self.groups["enc"], self.cfg)
        self.rnnt = RnntDecoder(self.groups["rnnt"], self.cfg, V, allowed)
        self.delib = DeliberationDecoder(self.groups["delib"], self.cfg, V, allowed,
                                         self.data_cfg.l_pad)

    def with_config(self, **changes) -> "TwoPassModel":
        """View sharing the same parameters under a modified model config."""
        other = object.__new__(TwoPassModel)
        other.__dict__.update(self.__dict__)
        other.cfg = dataclasses.replace(self.cfg, **changes)
        other._build()
        return other

    def features(self, utt: Utterance) -> np.ndarray:
        return frontend(utt, self.data_cfg)

    def params(self, *groups: str) -> list:
        names = groups or tuple(self.groups)
        return [t for g in names for t in self.groups[g].values()]

    def zero_grad(self) -> None:
        for t in self.params():
            t.zero_grad()

    def group_hash(self, group: str) -> str:
        h = hashlib.sha256()
        for key, t in self.groups[group].items():
            h.update(key.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    # ------------------------------------------------------------------ files
    def meta(self) -> dict:
        return {"model": dataclasses.asdict(self.cfg),
                "data": dataclasses.asdict(self.data_cfg),
                "seed": self.seed}

    def save(self, path, groups=("enc", "rnnt", "delib")) -> None:
        save_checkpoint(path, {g: {k: t.data for k, t in self.groups[g].items()}
                               for g in groups}, self.meta())

    @classmethod
    def load(cls, path, **model_overrides) -> "TwoPassModel":
        loaded, meta = load_checkpoint(path)
        try:
            cfg = ModelConfig(**{**meta["model"], **model_overrides})
            data_cfg = DataConfig(**meta["data"])
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"{path}: bad checkpoint metadata ({exc})") from None
        model = cls(cfg, data_cfg, meta.get("seed", 0))
        for group, tensors in loaded.items():
            assign(model.groups[group], tensors, group)
        return model
