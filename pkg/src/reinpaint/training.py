"""Few-shot adversarial training loop with iterative residual reasoning.

Per image batch, the loop runs T reasoning steps.  At each step the generator
predicts a residual from the (detached) previous composite, the composite is
rebuilt, and three updates happen in order: generator (perceptual + both
adversarial terms), image critic, patch critic.  Both critics compare the
ground truth against the detached composite under a shared, seeded,
differentiable augmentation; the patch critic's supervision comes from the
exact receptive-field label map of the (identically translated) mask.

Determinism: every random draw — batch indices, masks, augmentations, weight
init — is derived from (root seed, stream, step, ...) counters, never from
global RNG state.  Two runs with the same config are bit-identical, and a
resumed run replays the exact stream of an uninterrupted one because the step
counter *is* the RNG state.

Checkpoints are plain dicts (format version, config JSON + hash, module and
optimizer state dicts, step counter, frozen-backbone provenance) saved with
``torch.save`` and loaded with ``weights_only=True``.
"""

from __future__ import annotations

import copy
import glob
import hashlib
import json
import os
from dataclasses import dataclass, field

import torch

from .augment import Augmenter, parse_policy
from .backbones import state_hash
from .core import MaskedSample, apply_mask, composite_step, load_image
from .discriminators import ForgeryPatchDiscriminator, ProjectedDiscriminator
from .errors import ContractError, NumericFault, ResourceMissing
from .generator import GeneratorConfig, ResidualGenerator, build_generator
from .labelmap import LABEL_SCHEMES, build_label_map_variant
from .losses import (
    PerceptualDistance,
    image_critic_loss,
    image_generator_loss,
    patch_critic_loss,
    patch_generator_loss,
    total_generator_loss,
)
from .masks import generate_freeform_mask
from .seeding import derive_seed, numpy_generator
from . import reporting

CHECKPOINT_FORMAT_VERSION = 1
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


@dataclass
class TrainingConfig:
    data_dir: str = ""
    out_dir: str = ""
    resolution: int = 256
    batch_size: int = 8
    reasoning_steps: int = 3
    total_batches: int = 2000
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    loss_weights: tuple = (1.5, 1.0, 1.0)
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    patch_base_channels: int = 64
    mixed_channels: int = 64
    projector_backbone: str = "random"
    perceptual_backbone: str = "random"
    augment_policy: str = "color,translation"
    label_scheme: str = "ours"
    accumulate_over_steps: bool = False
    checkpoint_interval: int = 500
    sample_interval: int = 500
    figure_interval: int = 500

    def validate(self) -> None:
        if self.batch_size < 1 or self.reasoning_steps < 1 or self.total_batches < 1:
            raise ContractError("batch_size, reasoning_steps, total_batches must be >= 1")
        if self.lr <= 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if len(self.loss_weights) != 3:
            raise ContractError("loss_weights must have 3 entries")
        if self.label_scheme not in LABEL_SCHEMES:
            raise ContractError(f"label_scheme must be one of {LABEL_SCHEMES}")
        if self.generator.resolution != self.resolution:
            raise ContractError(
                f"generator resolution {self.generator.resolution} != "
                f"training resolution {self.resolution}"
            )
        parse_policy(self.augment_policy)
        self.generator.validate()

    def to_dict(self) -> dict:
        data = {
            "data_dir": self.data_dir,
            "out_dir": self.out_dir,
            "resolution": self.resolution,
            "batch_size": self.batch_size,
            "reasoning_steps": self.reasoning_steps,
            "total_batches": self.total_batches,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "loss_weights": list(self.loss_weights),
            "seed": self.seed,
            "generator": self.generator.to_dict(),
            "patch_base_channels": self.patch_base_channels,
            "mixed_channels": self.mixed_channels,
            "projector_backbone": self.projector_backbone,
            "perceptual_backbone": self.perceptual_backbone,
            "augment_policy": self.augment_policy,
            "label_scheme": self.label_scheme,
            "accumulate_over_steps": self.accumulate_over_steps,
            "checkpoint_interval": self.checkpoint_interval,
            "sample_interval": self.sample_interval,
            "figure_interval": self.figure_interval,
        }
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        data = dict(data)
        data["generator"] = GeneratorConfig.from_dict(data["generator"])
        data["loss_weights"] = tuple(data.get("loss_weights", (1.5, 1.0, 1.0)))
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def discover_images(data_dir: str) -> list[str]:
    paths = []
    for ext in IMAGE_EXTENSIONS:
        paths.extend(glob.glob(os.path.join(data_dir, f"*{ext}")))
    paths = sorted(set(paths))
    if not paths:
        raise ContractError(f"no images with extensions {IMAGE_EXTENSIONS} in {data_dir!r}")
    return paths


class Trainer:
    """Owns the three networks, their optimizers, and the seeded data stream."""

    def __init__(self, config: TrainingConfig, images: list[torch.Tensor] | None = None):
        config.validate()
        self.config = config
        if images is None:
            paths = discover_images(config.data_dir)
            images = [load_image(p, config.resolution) for p in paths]
        r = config.resolution
        for i, img in enumerate(images):
            if img.shape != (3, r, r):
                raise ContractError(f"dataset image {i} has shape {tuple(img.shape)}")
        self.images = [img.float() for img in images]

        seed = config.seed
        self.generator = build_generator(config.generator, seed)
        self.image_critic = ProjectedDiscriminator(
            r, config.projector_backbone, seed,
            mixed_channels=config.mixed_channels,
        )
        self.patch_critic = ForgeryPatchDiscriminator(config.patch_base_channels, seed)
        self.perceptual = PerceptualDistance(config.perceptual_backbone, seed)
        self.geometry = self.patch_critic.geometry(r)

        betas = (config.beta1, config.beta2)
        self.opt_generator = torch.optim.Adam(self.generator.parameters(), config.lr, betas)
        self.opt_image_critic = torch.optim.Adam(
            [p for p in self.image_critic.parameters() if p.requires_grad], config.lr, betas
        )
        self.opt_patch_critic = torch.optim.Adam(
            self.patch_critic.parameters(), config.lr, betas
        )
        self.step = 0

    # -- seeded streams ----------------------------------------------------

    def _batch_indices(self, step: int) -> list[int]:
        rng = numpy_generator(self.config.seed, "batch", step)
        n = len(self.images)
        replace = self.config.batch_size > n
        return [int(i) for i in rng.choice(n, size=self.config.batch_size, replace=replace)]

    def _batch_masks(self, step: int) -> torch.Tensor:
        masks = [
            generate_freeform_mask(
                self.config.resolution, derive_seed(self.config.seed, "mask", step, i)
            )
            for i in range(self.config.batch_size)
        ]
        return torch.stack(masks)

    def _augmenters(self, step: int, t: int) -> tuple[Augmenter, Augmenter]:
        policy = self.config.augment_policy
        image_aug = Augmenter(policy, derive_seed(self.config.seed, "augment", step, t, 0))
        patch_aug = Augmenter(policy, derive_seed(self.config.seed, "augment", step, t, 1))
        return image_aug, patch_aug

    # -- individual updates (separable for gradient-isolation tests) -------

    def _generator_losses(self, composite, ground_truth, image_aug, patch_aug, label_map):
        perceptual = self.perceptual(composite, ground_truth)
        image_adv = image_generator_loss(self.image_critic(image_aug(composite)))
        patch_adv = patch_generator_loss(self.patch_critic(patch_aug(composite)), label_map)
        total = total_generator_loss(
            perceptual, image_adv, patch_adv, self.config.loss_weights
        )
        return total, perceptual, image_adv, patch_adv

    def _update_image_critic(self, ground_truth, composite, image_aug) -> float:
        loss = image_critic_loss(
            self.image_critic(image_aug(ground_truth)),
            self.image_critic(image_aug(composite.detach())),
        )
        if not torch.isfinite(loss):
            raise NumericFault("image critic loss is non-finite")
        self.opt_image_critic.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_image_critic.step()
        return float(loss.detach())

    def _update_patch_critic(self, ground_truth, composite, patch_aug, label_map) -> float:
        loss = patch_critic_loss(
            self.patch_critic(patch_aug(ground_truth)),
            self.patch_critic(patch_aug(composite.detach())),
            label_map,
        )
        if not torch.isfinite(loss):
            raise NumericFault("patch critic loss is non-finite")
        self.opt_patch_critic.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_patch_critic.step()
        return float(loss.detach())

    # -- one training batch -------------------------------------------------

    def train_step(self, step: int | None = None) -> dict:
        """Run one image batch (T reasoning steps, 3 updates each); returns a record."""
        cfg = self.config
        step = self.step if step is None else step
        indices = self._batch_indices(step)
        ground_truth = torch.stack([self.images[i] for i in indices])
        masks = self._batch_masks(step)
        masked_input = apply_mask(ground_truth, masks)

        self.generator.train()
        self.image_critic.train()
        self.patch_critic.train()

        record: dict = {"step": step, "indices": indices, "reasoning": []}
        accumulated: list[torch.Tensor] = []
        current = masked_input
        for t in range(cfg.reasoning_steps):
            current = current.detach()
            residual = self.generator(current, masks)
            composite = composite_step(current, residual, masks, masked_input)

            image_aug, patch_aug = self._augmenters(step, t)
            # label map from the identically-translated mask, so patch labels
            # track the (possibly shifted) forged content
            aug_mask = patch_aug(masks, is_mask=True) if "translation" in patch_aug.tokens \
                else masks
            label_map = torch.stack([
                build_label_map_variant(m[0], self.geometry, cfg.label_scheme)
                for m in aug_mask
            ]).unsqueeze(1)

            total, perceptual, image_adv, patch_adv = self._generator_losses(
                composite, ground_truth, image_aug, patch_aug, label_map
            )
            if cfg.accumulate_over_steps:
                accumulated.append(total)
            else:
                self.opt_generator.zero_grad(set_to_none=True)
                total.backward(retain_graph=False)
                self.opt_generator.step()

            loss_e = self._update_image_critic(ground_truth, composite, image_aug)
            loss_d = self._update_patch_critic(ground_truth, composite, patch_aug, label_map)

            with torch.no_grad():
                masked_area = masks.sum().clamp(min=1.0)
                masked_l1 = float(
                    ((composite.detach() - ground_truth).abs() * masks).sum() / masked_area
                )
            record["reasoning"].append({
                "t": t,
                "loss_generator": float(total.detach()),
                "perceptual": float(perceptual.detach()),
                "image_adversarial": float(image_adv.detach()),
                "patch_adversarial": float(patch_adv.detach()),
                "loss_image_critic": loss_e,
                "loss_patch_critic": loss_d,
                "masked_l1": masked_l1,
            })
            current = composite

        if cfg.accumulate_over_steps:
            self.opt_generator.zero_grad(set_to_none=True)
            torch.stack(accumulated).sum().backward()
            self.opt_generator.step()

        last = record["reasoning"][-1]
        record["loss_generator"] = last["loss_generator"]
        record["loss_image_critic"] = last["loss_image_critic"]
        record["loss_patch_critic"] = last["loss_patch_critic"]
        record["masked_l1_final"] = last["masked_l1"]
        self.step = step + 1
        return record

    # -- full run with logging / checkpoints / figures ----------------------

    def run(self, total_batches: int | None = None, log_path: str | None = None) -> list[dict]:
        cfg = self.config
        total = cfg.total_batches if total_batches is None else total_batches
        out_dir = cfg.out_dir
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
            os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)
            os.makedirs(os.path.join(out_dir, "figures"), exist_ok=True)
            if log_path is None:
                log_path = os.path.join(out_dir, "train_log.jsonl")
            with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
                json.dump(self.config.to_dict(), fh, indent=2, sort_keys=True)

        records = []
        while self.step < total:
            try:
                record = self.train_step()
            except NumericFault:
                if out_dir:
                    self.save_checkpoint(os.path.join(out_dir, "checkpoints", "diagnostic.pt"))
                raise
            records.append(record)
            if log_path:
                reporting.append_jsonl(log_path, record)
            if out_dir:
                done = self.step
                if done % cfg.checkpoint_interval == 0 or done == total:
                    self.save_checkpoint(
                        os.path.join(out_dir, "checkpoints", f"step_{done:06d}.pt")
                    )
                if done % cfg.sample_interval == 0 or done == total:
                    self._render_samples(os.path.join(out_dir, "samples", f"step_{done:06d}.png"))
                if done % cfg.figure_interval == 0 or done == total:
                    reporting.render_loss_curves(
                        records, os.path.join(out_dir, "figures", "loss_curves.png")
                    )
        return records

    def _render_samples(self, path: str) -> None:
        from .generator import iterative_inpaint

        count = min(4, len(self.images))
        ground_truth = torch.stack(self.images[:count])
        masks = torch.stack([
            generate_freeform_mask(
                self.config.resolution, derive_seed(self.config.seed, "eval", i)
            )
            for i in range(count)
        ])
        sample = MaskedSample.create(ground_truth, masks)
        self.generator.eval()
        with torch.no_grad():
            trace = iterative_inpaint(
                self.generator, sample.masked_input, masks, self.config.reasoning_steps
            )
        self.generator.train()
        reporting.render_reasoning_panel(
            ground_truth, sample.masked_input, trace.outputs, trace.residuals, path
        )

    # -- checkpointing -------------------------------------------------------

    def frozen_hashes(self) -> dict:
        return {
            "projector": state_hash(self.image_critic.projector),
            "perceptual": state_hash(self.perceptual.backbone),
        }

    def save_checkpoint(self, path: str) -> None:
        payload = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config_json": json.dumps(self.config.to_dict(), sort_keys=True),
            "config_hash": self.config.config_hash(),
            "step": self.step,
            "rng_scheme": "counter-derived",  # seed + step counter IS the RNG state
            "seed": self.config.seed,
            "generator": self.generator.state_dict(),
            "image_critic": self.image_critic.state_dict(),
            "patch_critic": self.patch_critic.state_dict(),
            "opt_generator": self.opt_generator.state_dict(),
            "opt_image_critic": self.opt_image_critic.state_dict(),
            "opt_patch_critic": self.opt_patch_critic.state_dict(),
            "backbones": {
                "projector_flag": self.config.projector_backbone,
                "perceptual_flag": self.config.perceptual_backbone,
                **self.frozen_hashes(),
            },
        }
        torch.save(payload, path)

    @classmethod
    def load_checkpoint_payload(cls, path: str) -> dict:
        if not os.path.exists(path):
            raise ResourceMissing(f"checkpoint not found: {path}")
        payload = torch.load(path, map_location="cpu", weights_only=True)
        version = payload.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ContractError(
                f"checkpoint format version {version!r} unsupported "
                f"(expected {CHECKPOINT_FORMAT_VERSION})"
            )
        return payload

    @classmethod
    def resume(cls, path: str, images: list[torch.Tensor] | None = None,
               out_dir: str | None = None) -> "Trainer":
        """Rebuild a trainer from a checkpoint; continues the exact run."""
        payload = cls.load_checkpoint_payload(path)
        config = TrainingConfig.from_dict(json.loads(payload["config_json"]))
        if out_dir is not None:
            config.out_dir = out_dir
        trainer = cls(config, images=images)
        trainer.generator.load_state_dict(payload["generator"])
        trainer.image_critic.load_state_dict(payload["image_critic"])
        trainer.patch_critic.load_state_dict(payload["patch_critic"])
        trainer.opt_generator.load_state_dict(payload["opt_generator"])
        trainer.opt_image_critic.load_state_dict(payload["opt_image_critic"])
        trainer.opt_patch_critic.load_state_dict(payload["opt_patch_critic"])
        trainer.step = int(payload["step"])
        saved = payload["backbones"]
        fresh = trainer.frozen_hashes()
        if saved["projector"] != fresh["projector"] or saved["perceptual"] != fresh["perceptual"]:
            raise ContractError(
                "frozen backbone hash mismatch on resume; the checkpoint was produced "
                "with different frozen weights"
            )
        return trainer


def load_generator_from_checkpoint(path: str) -> tuple[ResidualGenerator, dict]:
    """Inference-side load: rebuild just the generator and return the payload."""
    payload = Trainer.load_checkpoint_payload(path)
    config = TrainingConfig.from_dict(json.loads(payload["config_json"]))
    generator = build_generator(config.generator, config.seed)
    generator.load_state_dict(payload["generator"])
    generator.eval()
    return generator, payload
