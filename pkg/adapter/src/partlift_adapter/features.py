"""Dense per-pixel descriptor backends, emitted as strided feature grids.

``multiscale_color_features`` is the CPU default: smoothed color plus
luminance gradients at two Gaussian scales, L2-normalized per cell.
``diffusion_features`` taps a latent-diffusion U-Net at the configured
timestep and upsampling block; it needs `diffusers`, `torch`, and weights.
"""

from __future__ import annotations

import numpy as np

from .config import ExtractionConfig

COLOR_SCALES = (1.0, 4.0)


def multiscale_color_features(image: np.ndarray, stride: int) -> tuple[np.ndarray, int]:
    """(Hf, Wf, C) float32 unit-norm descriptors at the given stride."""
    from scipy.ndimage import gaussian_filter, sobel

    img = image.astype(np.float64) / 255.0
    lum = img.mean(axis=2)
    channels = []
    for sigma in COLOR_SCALES:
        for c in range(3):
            channels.append(gaussian_filter(img[..., c], sigma))
        smooth = gaussian_filter(lum, sigma)
        channels.append(sobel(smooth, axis=0))
        channels.append(sobel(smooth, axis=1))
    dense = np.stack(channels, axis=2)

    h, w = lum.shape
    hf = -(-h // stride)
    wf = -(-w // stride)
    pad_h = hf * stride - h
    pad_w = wf * stride - w
    dense = np.pad(dense, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    cells = dense.reshape(hf, stride, wf, stride, dense.shape[2]).mean(axis=(1, 3))

    norms = np.linalg.norm(cells, axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        cells = np.where(norms > 0, cells / norms, 0.0)
    return cells.astype(np.float32), stride


def diffusion_features(image: np.ndarray, config: ExtractionConfig) -> tuple[np.ndarray, int]:
    """U-Net activations at the first upsampling block, timestep as configured.

    Requires `diffusers` + `torch` and downloadable weights; raises a clear
    error otherwise. The stride is computed from the actual activation size.
    """
    try:
        import torch
        from diffusers import StableDiffusionPipeline
    except ImportError as exc:
        raise RuntimeError(
            f"diffusion backend needs torch+diffusers: {exc}"
        ) from exc
    try:
        pipe = StableDiffusionPipeline.from_pretrained(config.diffusion_model)
    except OSError as exc:
        raise RuntimeError(
            f"could not load diffusion weights {config.diffusion_model!r}: {exc}"
        ) from exc

    device = "cuda" if torch.cuda.is_available() else "cpu"
    pipe = pipe.to(device)
    unet, vae = pipe.unet, pipe.vae

    grabbed: dict[str, torch.Tensor] = {}

    def hook(_module, _inputs, output):
        grabbed["activation"] = output[0] if isinstance(output, tuple) else output

    handle = unet.up_blocks[0].register_forward_hook(hook)
    try:
        with torch.no_grad():
            img = torch.from_numpy(image.astype(np.float32) / 127.5 - 1.0)
            img = img.permute(2, 0, 1)[None].to(device)
            latents = vae.encode(img).latent_dist.mean * vae.config.scaling_factor
            t = torch.tensor([config.diffusion_timestep], device=device)
            noise = torch.randn(
                latents.shape, generator=torch.Generator(device).manual_seed(0), device=device
            )
            noisy = pipe.scheduler.add_noise(latents, noise, t)
            prompt_embeds, _ = pipe.encode_prompt(
                config.text_prompt, device, 1, False
            )
            unet(noisy, t, encoder_hidden_states=prompt_embeds)
    finally:
        handle.remove()

    act = grabbed["activation"][0].permute(1, 2, 0).float().cpu().numpy()
    h = image.shape[0]
    stride = max(h // act.shape[0], 1)
    norms = np.linalg.norm(act, axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        act = np.where(norms > 0, act / norms, 0.0)
    return act.astype(np.float32), stride


def extract_features(image: np.ndarray, config: ExtractionConfig) -> tuple[np.ndarray, int]:
    if config.feature_backend == "multiscale_color":
        return multiscale_color_features(image, config.feature_stride)
    return diffusion_features(image, config)
