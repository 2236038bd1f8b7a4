"""Generation engines: the real diffusion-plus-detector pair and a stub.

An engine owns the two models and answers one request at a time: generate an
image from the request's parameters, run the detector on it, and report the
measured generation time together with the raw detections. Scoring the
detections against the base prompt happens in the server, not here, so both
engines stay interchangeable.

The real engine imports torch, diffusers, and ultralytics lazily inside its
constructor; the stub keeps the whole package importable and testable on
machines without any of them.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

from .matching import prompt_classes
from .wire import Request

# Class vocabulary of the common 80-class detector checkpoints; the stub
# uses it verbatim, the real engine reads the list from the loaded model.
COCO80 = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
    "truck", "boat", "traffic light", "fire hydrant", "stop sign",
    "parking meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard",
    "sports ball", "kite", "baseball bat", "baseball glove", "skateboard",
    "surfboard", "tennis racket", "bottle", "wine glass", "cup", "fork",
    "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair",
    "couch", "potted plant", "bed", "dining table", "toilet", "tv",
    "laptop", "mouse", "remote", "keyboard", "cell phone", "microwave",
    "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase",
    "scissors", "teddy bear", "hair drier", "toothbrush",
)


@dataclass(frozen=True)
class EngineResult:
    """Measured generation time plus raw detections as (class, confidence)."""

    time_ms: float
    detections: tuple[tuple[str, float], ...]


def _unit(*parts: object) -> float:
    """Deterministic value in [0, 1) derived from the given parts."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


class StubEngine:
    """Deterministic stand-in used by tests and desk-scale runs.

    It pretends the generated image contains exactly the detector classes
    named in the positive prompt, with confidences that depend on the full
    request (so different seeds score differently), plus one unrelated
    detection to make sure scoring does not reward off-prompt objects.
    """

    def __init__(self, delay_s: float = 0.0):
        self.class_names: tuple[str, ...] = COCO80
        self.delay_s = delay_s

    def generate(self, request: Request) -> EngineResult:
        if self.delay_s > 0.0:
            time.sleep(self.delay_s)
        stamp = request.to_line()
        jitter = (_unit("time", stamp) - 0.5) * 0.04
        time_ms = (900.0 + 230.0 * request.steps) * (1.0 + jitter)

        present = prompt_classes(request.positive_prompt, self.class_names)
        detections = []
        for name in sorted(present):
            confidence = 0.35 + 0.6 * _unit("conf", name, stamp)
            detections.append((name, round(confidence, 6)))
        unrelated = "kite" if "kite" not in present else "vase"
        detections.append((unrelated, round(0.5 + 0.3 * _unit("extra", stamp), 6)))
        return EngineResult(time_ms=round(time_ms, 3), detections=tuple(detections))


class DiffusionDetectionEngine:
    """The real backend: a diffusion pipeline timed on-device, then a detector.

    Both models load in the constructor, so a caller that builds the engine
    before speaking on the wire upholds the loaded-before-handshake rule.
    The reported time brackets only the pipeline call, synchronized on the
    device before and after; detection runs outside the bracket.
    """

    def __init__(self, diffusion_model: str, detector_model: str, device: str = "auto"):
        import torch
        from diffusers import StableDiffusionPipeline
        from ultralytics import YOLO

        self._torch = torch
        if device == "auto":
            device = "cuda" if torch.cuda.is_available() else "cpu"
        self.device = device
        dtype = torch.float16 if device == "cuda" else torch.float32
        self._pipe = StableDiffusionPipeline.from_pretrained(diffusion_model, torch_dtype=dtype)
        self._pipe = self._pipe.to(device)
        self._pipe.set_progress_bar_config(disable=True)
        self._detector = YOLO(detector_model)
        names = self._detector.names
        self.class_names: tuple[str, ...] = tuple(names[i] for i in sorted(names))

    def _synchronize(self) -> None:
        if self.device.startswith("cuda"):
            self._torch.cuda.synchronize()

    def generate(self, request: Request) -> EngineResult:
        generator = self._torch.Generator(device=self.device)
        generator.manual_seed(request.seed & 0x7FFFFFFFFFFFFFFF)

        self._synchronize()
        start = time.perf_counter()
        output = self._pipe(
            prompt=request.positive_prompt,
            negative_prompt=request.negative_prompt,
            num_inference_steps=request.steps,
            guidance_scale=request.guidance_scale,
            guidance_rescale=request.guidance_rescale,
            generator=generator,
        )
        self._synchronize()
        time_ms = (time.perf_counter() - start) * 1000.0

        image = output.images[0]
        detections = []
        for result in self._detector.predict(image, verbose=False):
            boxes = result.boxes
            if boxes is None:
                continue
            for cls_idx, confidence in zip(boxes.cls.tolist(), boxes.conf.tolist()):
                detections.append((self.class_names[int(cls_idx)], float(confidence)))
        return EngineResult(time_ms=time_ms, detections=tuple(detections))
