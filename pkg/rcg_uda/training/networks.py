import logging
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from rcg_uda.config import NetworkConfig, PriorKind, RunConfig
from rcg_uda.exception import CheckpointError
from rcg_uda.neural.checkpoint import load_checkpoint, save_checkpoint
from rcg_uda.neural.layers import Activation, GaussianHead, Mlp
from rcg_uda.prior import JointGaussianChain, RcgParams, build_joint
from rcg_uda.tensor_math import Rng

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]

PRIOR_FIELDS = ("mu1", "delta_raw", "sigma_raw")


class Networks:
    """All trainable state of one adaptation run.

    Encoders: ``enc_c`` (shared content), ``enc_u_s`` / ``enc_u_t`` (style);
    decoders ``dec_s`` / ``dec_t`` take ``[content, style]``; ``cls`` maps
    content codes to class logits; ``dis_s`` / ``dis_t`` end in a sigmoid.
    The RCG raw parameters live in mutable arrays so the optimizer can update
    them in place; :attr:`prior` returns an immutable snapshot.
    """

    def __init__(
        self,
        heads: dict[str, GaussianHead],
        mlps: dict[str, Mlp],
        num_classes: int,
        prior: RcgParams | None = None,
    ) -> None:
        self.heads = heads
        self.mlps = mlps
        self.num_classes = num_classes
        self.prior_kind = PriorKind.IID_GAUSSIAN if prior is None else PriorKind.RCG
        self._sigma_rule = prior.sigma_rule if prior is not None else 0.0
        self.prior_arrays: dict[str, Array] = {}
        if prior is not None:
            self.prior_arrays = {
                name: np.array(getattr(prior, name), dtype=np.float64)
                for name in PRIOR_FIELDS
            }

    @classmethod
    def build(
        cls,
        config: NetworkConfig,
        obs_dim: int,
        num_classes: int,
        prior: RcgParams | None,
        rng: Rng,
    ) -> "Networks":
        act = Activation(config.activation)
        latent = config.content_dim + config.style_dim
        decoder_sizes = [latent, *reversed(config.encoder_hidden), obs_dim]
        dis_sizes = [obs_dim, *config.discriminator_hidden, 1]
        heads = {
            "enc_c": GaussianHead.build(obs_dim, config.encoder_hidden, config.content_dim, rng, act),
            "enc_u_s": GaussianHead.build(obs_dim, config.encoder_hidden, config.style_dim, rng, act),
            "enc_u_t": GaussianHead.build(obs_dim, config.encoder_hidden, config.style_dim, rng, act),
        }
        mlps = {
            "dec_s": Mlp.build(decoder_sizes, rng, hidden=act),
            "dec_t": Mlp.build(decoder_sizes, rng, hidden=act),
            "cls": Mlp.build(
                [config.content_dim, *config.classifier_hidden, num_classes], rng, hidden=act
            ),
            "dis_s": Mlp.build(dis_sizes, rng, hidden=act, output=Activation.SIGMOID),
            "dis_t": Mlp.build(dis_sizes, rng, hidden=act, output=Activation.SIGMOID),
        }
        return cls(heads, mlps, num_classes, prior)

    @property
    def enc_c(self) -> GaussianHead:
        return self.heads["enc_c"]

    def enc_u(self, domain: str) -> GaussianHead:
        return self.heads[f"enc_u_{domain}"]

    def dec(self, domain: str) -> Mlp:
        return self.mlps[f"dec_{domain}"]

    def dis(self, domain: str) -> Mlp:
        return self.mlps[f"dis_{domain}"]

    @property
    def cls(self) -> Mlp:
        return self.mlps["cls"]

    @property
    def content_dim(self) -> int:
        return self.heads["enc_c"].out_dim

    @property
    def style_dim(self) -> int:
        return self.heads["enc_u_s"].out_dim

    @property
    def obs_dim(self) -> int:
        return self.heads["enc_c"].in_dim

    @property
    def prior(self) -> RcgParams | None:
        if not self.prior_arrays:
            return None
        return RcgParams(
            mu1=self.prior_arrays["mu1"],
            delta_raw=self.prior_arrays["delta_raw"],
            sigma_raw=self.prior_arrays["sigma_raw"],
            sigma_rule=self._sigma_rule,
        )

    def joint(self) -> JointGaussianChain:
        params = self.prior
        if params is None:
            return JointGaussianChain.iid(self.num_classes, self.content_dim)
        return build_joint(params)

    def parameters(self) -> dict[str, Array]:
        """Live references keyed ``"<net>.<param>"``; prior arrays as ``prior.*``."""
        params: dict[str, Array] = {}
        for net_name, net in (*self.heads.items(), *self.mlps.items()):
            params.update({f"{net_name}.{k}": v for k, v in net.parameters().items()})
        params.update({f"prior.{k}": v for k, v in self.prior_arrays.items()})
        return params

    def save(self, path: str | Path, meta: dict[str, Any]) -> None:
        save_checkpoint(
            path,
            self.parameters(),
            {**meta, "prior_kind": self.prior_kind.value, "sigma_rule": self._sigma_rule},
        )

    def load_parameters(self, blocks: dict[str, Array], source: str = "<memory>") -> None:
        """Copy checkpoint blocks into the live arrays.

        Raises:
            CheckpointError: A block is missing, unexpected or has the wrong shape.
        """
        params = self.parameters()
        if missing := sorted(set(params) - set(blocks)):
            raise CheckpointError(source, f"missing blocks {missing[:3]}")
        if extra := sorted(set(blocks) - set(params)):
            raise CheckpointError(source, f"unexpected blocks {extra[:3]}")
        for name, target in params.items():
            if blocks[name].shape != target.shape:
                raise CheckpointError(
                    source, f"block {name}: shape {blocks[name].shape} != {target.shape}"
                )
            target[...] = blocks[name]

    def load(self, path: str | Path) -> dict[str, Any]:
        """Restore parameters from ``path`` and return the checkpoint metadata."""
        blocks, meta = load_checkpoint(path)
        self.load_parameters(blocks, str(path))
        logger.info("Loaded %d parameter blocks from %s", len(blocks), path)
        return meta


def make_prior(config: RunConfig) -> RcgParams | None:
    """RCG parameters for an ``rcg`` run, ``None`` for the i.i.d. baseline."""
    if config.train.prior_kind is PriorKind.IID_GAUSSIAN:
        return None
    return RcgParams.from_config(
        config.prior,
        config.data.num_classes,
        config.network.content_dim,
        config.sigma_rule,
    )


def make_networks(config: RunConfig, rng: Rng) -> Networks:
    return Networks.build(
        config.network,
        config.data.obs_dim,
        config.data.num_classes,
        make_prior(config),
        rng,
    )
