"""Model backends: procedural toys plus hub checkpoint wrappers.

The toy backends exist so exports, self-tests, and the test suite run with
no weights and no network. The toy segmenter is deliberately pointwise
(logits at a pixel depend only on that pixel's color), which makes it
exactly flip-equivariant; the flip realignment check in the self-test
relies on that. The hub wrappers serve real checkpoints behind the same
two-method interface but need torch, transformers, and a locally cached
download; they load lazily and are not exercised by the tests.
"""

import numpy as np

from .config import ExportError

TOY_GAIN = 20.0  # sharpness of the color-distance logits


class ToySegmenter:
    """Pointwise color-prototype classifier.

    Each class owns a fixed random RGB prototype; the logit is the negative
    scaled squared distance from the pixel color to the prototype. Crude,
    but it reacts to photometric jitter and resampling the way a real
    network's confidence does, which is all the ensemble needs.
    """

    def __init__(self, class_count: int, seed: int = 0):
        self.class_count = class_count
        rng = np.random.default_rng(seed)
        self.prototypes = rng.uniform(0.0, 1.0, size=(class_count, 3))

    def logits(self, img: np.ndarray) -> np.ndarray:
        diff = img[None, :, :, :] - self.prototypes[:, None, None, :]
        return (-TOY_GAIN * np.sum(diff * diff, axis=3)).astype(np.float32)


class ToyFeaturizer:
    """Patch-mean color statistics pushed through a fixed random projection."""

    def __init__(self, patch_size: int, embed_dim: int, seed: int = 0):
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        rng = np.random.default_rng(seed)
        # 4 inputs: mean R, G, B and a constant bias channel
        self.projection = rng.normal(size=(embed_dim, 4))

    def features(self, img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h, w = img.shape[:2]
        ps = self.patch_size
        yb = np.arange(0, h, ps)
        xb = np.arange(0, w, ps)
        sums = np.add.reduceat(np.add.reduceat(img, yb, axis=0), xb, axis=1)
        ny = np.diff(np.append(yb, h))
        nx = np.diff(np.append(xb, w))
        means = sums / (ny[:, None] * nx[None, :])[:, :, None]
        stats = np.concatenate([means, np.ones(means.shape[:2] + (1,))], axis=2)
        emb = np.einsum("df,hwf->dhw", self.projection, stats)
        glob = emb.mean(axis=(1, 2))
        norm = float(np.linalg.norm(glob))
        if norm < 1e-9:
            raise ExportError("toy featurizer produced a zero global feature")
        return emb.astype(np.float32), (glob / norm).astype(np.float32)


class HubSegmenter:
    """Semantic-segmentation checkpoint from the transformers hub.

    Loads on first use with local_files_only, so the checkpoint must already
    be in the local cache; offline environments fail fast with a clear
    error instead of hanging on a download.
    """

    def __init__(self, model_id: str, class_count: int):
        self.model_id = model_id
        self.class_count = class_count
        self._model = None
        self._processor = None

    def _load(self):
        if self._model is not None:
            return
        try:
            from transformers import (
                AutoImageProcessor,
                AutoModelForSemanticSegmentation,
            )
        except ImportError as exc:
            raise ExportError(
                f"model {self.model_id!r} needs the transformers package: {exc}"
            ) from exc
        try:
            self._processor = AutoImageProcessor.from_pretrained(
                self.model_id, local_files_only=True
            )
            self._model = AutoModelForSemanticSegmentation.from_pretrained(
                self.model_id, local_files_only=True
            ).eval()
        except Exception as exc:
            raise ExportError(
                f"cannot load {self.model_id!r}; is the checkpoint cached locally? {exc}"
            ) from exc

    def logits(self, img: np.ndarray) -> np.ndarray:
        self._load()
        import torch

        h, w = img.shape[:2]
        pixels = (img * 255.0).astype(np.uint8)
        inputs = self._processor(images=pixels, return_tensors="pt")
        with torch.no_grad():
            raw = self._model(**inputs).logits
            aligned = torch.nn.functional.interpolate(
                raw, size=(h, w), mode="bilinear", align_corners=False
            )[0]
        out = aligned.numpy().astype(np.float32)
        if out.shape[0] != self.class_count:
            raise ExportError(
                f"model {self.model_id!r} has {out.shape[0]} classes, "
                f"config says {self.class_count}"
            )
        return out


class HubFeaturizer:
    """ViT backbone from the transformers hub; patch tokens + CLS.

    Runs the backbone at the image's native resolution, so height and width
    must be multiples of the model patch size (crop beforehand). That keeps
    the emitted patch grid consistent with the image dimensions.
    """

    def __init__(self, model_id: str):
        self.model_id = model_id
        self._model = None
        self._processor = None
        self.patch_size = None
        self.embed_dim = None

    def _load(self):
        if self._model is not None:
            return
        try:
            from transformers import AutoImageProcessor, AutoModel
        except ImportError as exc:
            raise ExportError(
                f"model {self.model_id!r} needs the transformers package: {exc}"
            ) from exc
        try:
            self._processor = AutoImageProcessor.from_pretrained(
                self.model_id, local_files_only=True
            )
            self._model = AutoModel.from_pretrained(
                self.model_id, local_files_only=True
            ).eval()
        except Exception as exc:
            raise ExportError(
                f"cannot load {self.model_id!r}; is the checkpoint cached locally? {exc}"
            ) from exc
        self.patch_size = int(self._model.config.patch_size)
        self.embed_dim = int(self._model.config.hidden_size)

    def features(self, img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        self._load()
        import torch

        h, w = img.shape[:2]
        ps = self.patch_size
        if h % ps or w % ps:
            raise ExportError(
                f"image {h}x{w} not a multiple of patch size {ps}; crop first"
            )
        pixels = (img * 255.0).astype(np.uint8)
        inputs = self._processor(
            images=pixels, return_tensors="pt", do_resize=False, do_center_crop=False
        )
        with torch.no_grad():
            hidden = self._model(**inputs).last_hidden_state[0].numpy()
        hp, wp = h // ps, w // ps
        n_extra = hidden.shape[0] - hp * wp  # CLS and any register tokens
        if n_extra < 1:
            raise ExportError(
                f"model {self.model_id!r}: token count {hidden.shape[0]} "
                f"does not cover a {hp}x{wp} grid"
            )
        patches = hidden[n_extra:].reshape(hp, wp, self.embed_dim)
        emb = np.moveaxis(patches, 2, 0).astype(np.float32)
        cls = hidden[0].astype(np.float64)
        norm = float(np.linalg.norm(cls))
        if norm < 1e-9:
            raise ExportError(f"model {self.model_id!r} returned a zero CLS token")
        return emb, (cls / norm).astype(np.float32)


def seg_backend(cfg) -> ToySegmenter | HubSegmenter:
    if cfg.seg_model == "toy":
        return ToySegmenter(cfg.class_count, seed=cfg.seed)
    return HubSegmenter(cfg.seg_model, cfg.class_count)


def feat_backend(cfg) -> ToyFeaturizer | HubFeaturizer:
    if cfg.feat_model == "toy":
        return ToyFeaturizer(cfg.patch_size, cfg.embed_dim, seed=cfg.seed)
    return HubFeaturizer(cfg.feat_model)
