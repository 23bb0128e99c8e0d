"""One adaptation step: losses, routed gradients and the optimizer update.

Loss terms (all normalized by the batch size ``N`` unless noted):

========  ==========================================================
``ce``    cross-entropy of the classifier on sampled content codes
``kl_c``  content KL of every group's fused posterior vs the prior
``kl_s``  style KL of the source style posteriors (``kl_t`` target)
``l1_s``  L1 reconstruction of source rows (``l1_t`` target)
``adv_s`` non-saturating generator loss on source reconstructions
          (per-domain mean; ``adv_t`` target)
``dis_s`` discriminator loss of ``dis_s`` (per-domain mean; ``dis_t``)
========  ==========================================================

With ``alpha = beta = lambda = 1`` and the classifier/adversarial terms off,
the encoders, decoders and prior jointly descend ``-ELBO / N`` under a unit
Laplace reconstruction likelihood (constants dropped).

Each network only receives the terms named in its row of the routing matrix
(:func:`routing_matrix`), scaled by the configured weight.
"""

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from rcg_uda.config import TrainConfig
from rcg_uda.exception import NonFiniteError
from rcg_uda.neural.losses import adversarial_losses, cross_entropy, l1_loss
from rcg_uda.neural.optim import Adam
from rcg_uda.prior import joint_backward
from rcg_uda.tensor_math import Rng
from rcg_uda.training.groups import GroupBatch
from rcg_uda.training.networks import Networks
from rcg_uda.variational import (
    DiagGaussian,
    GroupPosterior,
    kl_content_with_grad,
    kl_style,
    kl_style_grad,
    reparam_backward,
    reparam_from_noise,
)

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]
Routing = Mapping[str, Mapping[str, float]]
# (logits, labels) -> (batch-mean loss, gradient wrt logits); an ordinal loss plugs in here
ClassifierLoss = Callable[[Array, NDArray[np.int64]], tuple[float, Array]]

TERMS = ("ce", "kl_c", "kl_s", "kl_t", "l1_s", "l1_t", "adv_s", "adv_t", "dis_s", "dis_t")
DESTINATIONS = (
    "enc_c", "enc_u_s", "enc_u_t", "dec_s", "dec_t", "cls", "dis_s", "dis_t", "prior",
)
DOMAINS = ("s", "t")


def routing_matrix(cfg: TrainConfig, with_prior: bool = True) -> dict[str, dict[str, float]]:
    """Weight of every loss term in every network's update."""
    adv = 1.0 if cfg.adversarial_enabled else 0.0
    routing = {dest: dict.fromkeys(TERMS, 0.0) for dest in DESTINATIONS}
    enc_c = routing["enc_c"]
    enc_c["ce"] = cfg.ce_weight
    enc_c["kl_c"] = cfg.alpha
    for d in DOMAINS:
        enc_c[f"l1_{d}"] = cfg.beta
        enc_c[f"adv_{d}"] = cfg.gamma * adv
        routing[f"enc_u_{d}"].update({
            f"l1_{d}": 1.0, f"kl_{d}": cfg.lambda_, f"adv_{d}": cfg.theta * adv
        })
        routing[f"dec_{d}"].update({f"l1_{d}": 1.0, f"adv_{d}": cfg.theta * adv})
        routing[f"dis_{d}"][f"dis_{d}"] = adv
    routing["cls"]["ce"] = 1.0
    if with_prior and not cfg.freeze_prior:
        routing["prior"]["kl_c"] = cfg.alpha
    return routing


def single_term_routing(term: str) -> dict[str, dict[str, float]]:
    """Unit weight for ``term`` on every network it can reach."""
    return {dest: {t: float(t == term) for t in TERMS} for dest in DESTINATIONS}


class LossReport(NamedTuple):
    ce: float
    kl_c: float
    kl_s: float
    kl_t: float
    l1_s: float
    l1_t: float
    adv_s: float
    adv_t: float
    dis_s: float
    dis_t: float

    @property
    def negative_elbo(self) -> float:
        """Reconstruction plus KL terms, i.e. ``-ELBO / N`` up to constants."""
        return self.l1_s + self.l1_t + self.kl_s + self.kl_t + self.kl_c


@dataclass(frozen=True)
class StepNoise:
    """Standard-normal draws consumed by one step's reparameterizations."""

    content: Array
    fused: Array
    style: dict[str, Array] = field(default_factory=dict)

    @classmethod
    def draw(cls, batch: GroupBatch, nets: Networks, rng: Rng) -> "StepNoise":
        n_s, n_t = batch.source_x.shape[0], batch.target_x.shape[0]
        return cls(
            content=rng.normal((batch.size, nets.content_dim)),
            fused=rng.normal((batch.num_groups, batch.num_classes, nets.content_dim)),
            style={
                "s": rng.normal((n_s, nets.style_dim)),
                "t": rng.normal((n_t, nets.style_dim)),
            },
        )


@dataclass
class _DomainPass:
    x: Array
    rows: NDArray[np.int64]
    q_u: DiagGaussian
    eps: Array
    recon: Array
    l1_grad: Array
    adv_grad: Array | None
    dis_grads: dict[str, Array] | None


class StepGraph:
    """Forward pass of one step with the intermediates needed for backward."""

    def __init__(
        self,
        batch: GroupBatch,
        nets: Networks,
        noise: StepNoise,
        adversarial: bool,
        classifier_loss: ClassifierLoss = cross_entropy,
    ) -> None:
        self.batch = batch
        self.nets = nets
        self.noise = noise
        n = batch.size
        k = batch.num_classes
        dc = nets.content_dim
        x = batch.observations
        labels = batch.labels
        groups = batch.groups
        self.labels = labels
        self.groups = groups

        self.q_c = nets.enc_c.forward(x)
        codes = reparam_from_noise(self.q_c, noise.content)
        ce, self.ce_grad = classifier_loss(nets.cls.forward(codes), labels)

        joint = nets.joint()
        self.joint = joint
        self.group_rows = [batch.rows_of_group(g) for g in range(batch.num_groups)]
        self.posteriors: list[GroupPosterior] = []
        self.kl_grads = []
        kl_c = 0.0
        fused_mean = np.empty((batch.num_groups, k, dc))
        fused_var = np.empty_like(fused_mean)
        for g, rows in enumerate(self.group_rows):
            members = DiagGaussian(self.q_c.mean[rows], self.q_c.logvar[rows])
            posterior = GroupPosterior.fuse(members, labels[rows], k)
            value, grads = kl_content_with_grad(posterior, joint)
            kl_c += value
            self.posteriors.append(posterior)
            self.kl_grads.append(grads)
            fused_mean[g] = posterior.mean
            fused_var[g] = posterior.variance
        self.fused_var = fused_var
        fused_sample = fused_mean + np.sqrt(fused_var) * noise.fused
        content_rows = fused_sample[groups, labels]

        n_s = batch.source_x.shape[0]
        domain_rows = {"s": np.arange(n_s), "t": np.arange(n_s, n)}
        values = {"ce": ce, "kl_c": kl_c / n}
        self.passes: dict[str, _DomainPass] = {}
        for d in DOMAINS:
            rows = domain_rows[d]
            if rows.size == 0:
                values.update({f"l1_{d}": 0.0, f"kl_{d}": 0.0, f"adv_{d}": 0.0, f"dis_{d}": 0.0})
                continue
            x_d = x[rows]
            q_u = nets.enc_u(d).forward(x_d)
            eps = noise.style[d]
            style = reparam_from_noise(q_u, eps)
            recon = nets.dec(d).forward(np.hstack([content_rows[rows], style]))
            values[f"l1_{d}"], l1_grad = l1_loss(x_d, recon, n)
            values[f"kl_{d}"] = kl_style(q_u) / n
            adv_grad = dis_grads = None
            if adversarial:
                adv = adversarial_losses(nets.dis(d), x_d, recon)
                values[f"adv_{d}"] = adv.generator
                values[f"dis_{d}"] = adv.discriminator
                adv_grad, dis_grads = adv.fake_grad, adv.dis_grads
            else:
                values[f"adv_{d}"] = values[f"dis_{d}"] = 0.0
            self.passes[d] = _DomainPass(
                x=x_d, rows=rows, q_u=q_u, eps=eps, recon=recon,
                l1_grad=l1_grad, adv_grad=adv_grad, dis_grads=dis_grads,
            )

        for term in TERMS:
            if not np.isfinite(values[term]):
                raise NonFiniteError(term, kind="loss")
        self.report = LossReport(**{term: float(values[term]) for term in TERMS})

    def backward(self, routing: Routing) -> dict[str, Array]:
        """Routed gradients keyed like :meth:`Networks.parameters`.

        Networks whose routing row is all zero are left out.
        """
        nets = self.nets
        n = self.batch.size
        dc = nets.content_dim
        grads: dict[str, Array] = {}

        def active(dest: str) -> bool:
            return any(routing[dest].values())

        def add(prefix: str, params: Mapping[str, Array], weight: float) -> None:
            if not weight:
                return
            for name, value in params.items():
                key = f"{prefix}.{name}"
                grads[key] = grads.get(key, 0.0) + weight * value

        enc_c_mean = np.zeros_like(self.q_c.mean)
        enc_c_logvar = np.zeros_like(self.q_c.logvar)
        fused_sample_grad = np.zeros_like(self.noise.fused)

        cls_back = nets.cls.backward(self.ce_grad)
        add("cls", cls_back.params, routing["cls"]["ce"])
        g_mean, g_logvar = reparam_backward(self.q_c, self.noise.content, cls_back.input)
        enc_c_mean += routing["enc_c"]["ce"] * g_mean
        enc_c_logvar += routing["enc_c"]["ce"] * g_logvar

        for d, fwd in self.passes.items():
            u_mean = np.zeros_like(fwd.q_u.mean)
            u_logvar = np.zeros_like(fwd.q_u.logvar)
            upstreams = {f"l1_{d}": fwd.l1_grad}
            if fwd.adv_grad is not None:
                upstreams[f"adv_{d}"] = fwd.adv_grad
            for term, upstream in upstreams.items():
                back = nets.dec(d).backward(upstream)
                add(f"dec_{d}", back.params, routing[f"dec_{d}"][term])
                np.add.at(
                    fused_sample_grad,
                    (self.groups[fwd.rows], self.labels[fwd.rows]),
                    routing["enc_c"][term] * back.input[:, :dc],
                )
                style_mean, style_logvar = reparam_backward(fwd.q_u, fwd.eps, back.input[:, dc:])
                u_mean += routing[f"enc_u_{d}"][term] * style_mean
                u_logvar += routing[f"enc_u_{d}"][term] * style_logvar
            kl_mean, kl_logvar = kl_style_grad(fwd.q_u)
            u_mean += routing[f"enc_u_{d}"][f"kl_{d}"] * kl_mean / n
            u_logvar += routing[f"enc_u_{d}"][f"kl_{d}"] * kl_logvar / n
            if active(f"enc_u_{d}"):
                add(f"enc_u_{d}", nets.enc_u(d).backward(u_mean, u_logvar).params, 1.0)
            if fwd.dis_grads is not None:
                add(f"dis_{d}", fwd.dis_grads, routing[f"dis_{d}"][f"dis_{d}"])

        kl_weight = routing["enc_c"]["kl_c"] / n
        prior_weight = routing["prior"]["kl_c"] / n
        joint_mean_grad = np.zeros_like(self.joint.mean)
        joint_cov_grad = np.zeros_like(self.joint.cov)
        scaled_noise = 0.5 * self.noise.fused / np.sqrt(self.fused_var)
        for g, (rows, posterior, kl) in enumerate(
            zip(self.group_rows, self.posteriors, self.kl_grads, strict=True)
        ):
            grad_mean = fused_sample_grad[g] + kl_weight * kl.mean
            grad_var = fused_sample_grad[g] * scaled_noise[g] + kl_weight * kl.variance
            d_mean, d_logvar = posterior.backward(grad_mean, grad_var)
            enc_c_mean[rows] += d_mean
            enc_c_logvar[rows] += d_logvar
            joint_mean_grad += kl.joint_mean
            joint_cov_grad += kl.joint_cov

        if active("enc_c"):
            add("enc_c", nets.enc_c.backward(enc_c_mean, enc_c_logvar).params, 1.0)
        prior = nets.prior
        if prior is not None and prior_weight:
            prior_grads = joint_backward(prior, joint_mean_grad, joint_cov_grad)
            add("prior", prior_grads._asdict(), prior_weight)
        return grads


def train_step(
    batch: GroupBatch,
    nets: Networks,
    optimizer: Adam,
    cfg: TrainConfig,
    rng: Rng,
    noise: StepNoise | None = None,
    classifier_loss: ClassifierLoss = cross_entropy,
) -> LossReport:
    """Forward, routed backward and one optimizer update.

    Raises:
        EmptyGroupError: The batch is not class-complete.
        NonFiniteError: A loss term or a gradient is not finite.
    """
    batch.check_complete()
    if noise is None:
        noise = StepNoise.draw(batch, nets, rng)
    graph = StepGraph(
        batch, nets, noise, adversarial=cfg.adversarial_enabled, classifier_loss=classifier_loss
    )
    routing = routing_matrix(cfg, with_prior=nets.prior is not None)
    optimizer.step(nets.parameters(), graph.backward(routing))
    return graph.report
