"""Torch mirror of the codec network, sized by the weight-file geometry.

The codec runs these layers through its own deterministic kernels; training
only has to produce parameter values, so this mirror trades that bit-exact
arithmetic for autograd. Layer names, channel widths, and output mappings
track the weight-file blob naming scheme exactly, and export walks the same
table, which keeps the two implementations from drifting apart silently.

Quantization proxies
--------------------
Rounding has zero gradient almost everywhere. The joint phase replaces it
with additive uniform noise on both the rate and the reconstruction paths.
The later phases freeze everything upstream of the part being trained, so
gradients through quantization are unnecessary there; they use the codec's
real rounding and masks, and the trained part sees exactly the inputs it
will see at decode time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .config import TrainConfig

ENCODER_WIDTH = 32  # hidden channels of the four-stage analysis/synthesis stacks
PARAM_WIDTH = 16  # hidden channels of the psi/lrp/rem two-layer nets
SIGMA_FLOOR = 1e-6
# Caps any element at 30 bits and keeps the log finite when the model is far
# off. Gradients vanish for clamped elements; the shared layers still learn
# from the rest of the batch.
LIKELIHOOD_FLOOR = 2.0**-30


@dataclass(frozen=True)
class LayerSpec:
    in_channels: int
    out_channels: int
    kind: str  # "down" (stride-2 conv), "up" (stride-2 transposed), "same"


def layer_table(cfg: TrainConfig) -> dict[str, LayerSpec]:
    """Layer name -> geometry, in weight-file serialization order."""
    C = cfg.latent_channels
    Z = cfg.hyper_channels
    cs = cfg.slice_channels
    W = ENCODER_WIDTH
    P = PARAM_WIDTH
    d: dict[str, LayerSpec] = {}
    for which in ("b", "t"):
        enc = [3, W, W, W, C]
        dec = [C, W, W, W, 3]
        for layer in range(4):
            d[f"ga_{which}.{layer}"] = LayerSpec(enc[layer], enc[layer + 1], "down")
        for layer in range(4):
            d[f"gs_{which}.{layer}"] = LayerSpec(dec[layer], dec[layer + 1], "up")
    d["ha.0"] = LayerSpec(2 * C, W, "down")
    d["ha.1"] = LayerSpec(W, Z, "down")
    d["hs.0"] = LayerSpec(Z, W, "up")
    d["hs.1"] = LayerSpec(W, 4 * C, "up")
    for i in range(cfg.slices):
        d[f"psi_b.{i}.0"] = LayerSpec(2 * C + i * cs, P, "same")
        d[f"psi_b.{i}.1"] = LayerSpec(P, 2 * cs, "same")
        d[f"psi_t.{i}.0"] = LayerSpec(cs + 2 * C + 2 * i * cs, P, "same")
        d[f"psi_t.{i}.1"] = LayerSpec(P, 2 * cs, "same")
        d[f"lrp_b.{i}.0"] = LayerSpec(C + cs, P, "same")
        d[f"lrp_b.{i}.1"] = LayerSpec(P, cs, "same")
        d[f"lrp_t.{i}.0"] = LayerSpec(C + cs, P, "same")
        d[f"lrp_t.{i}.1"] = LayerSpec(P, cs, "same")
        for j in range(len(cfg.checkpoints)):
            d[f"rem.{i}.{j}.0"] = LayerSpec(5 * cs, P, "same")
            d[f"rem.{i}.{j}.1"] = LayerSpec(P, 2 * cs, "same")
    return d


def _make_layer(spec: LayerSpec) -> nn.Module:
    if spec.kind == "down":
        return nn.Conv2d(spec.in_channels, spec.out_channels, 3, stride=2, padding=1)
    if spec.kind == "up":
        return nn.ConvTranspose2d(
            spec.in_channels, spec.out_channels, 3, stride=2, padding=1, output_padding=1
        )
    return nn.Conv2d(spec.in_channels, spec.out_channels, 3, stride=1, padding=1)


def positive_map(x: torch.Tensor) -> torch.Tensor:
    """Smooth strictly-positive mapping: 0.5*(x + sqrt(x^2 + 4)) + floor."""
    return 0.5 * (x + torch.sqrt(x * x + 4.0)) + SIGMA_FLOOR


def bounded_map(x: torch.Tensor) -> torch.Tensor:
    """Smooth odd mapping of the reals into [-1, 1]: x / sqrt(x^2 + 1)."""
    return x / torch.sqrt(x * x + 1.0)


def hard_round(x: torch.Tensor) -> torch.Tensor:
    """Round to nearest, ties away from zero; the codec's rounding rule."""
    return torch.copysign(torch.floor(torch.abs(x) + 0.5), x)


def _std_cdf(t: torch.Tensor) -> torch.Tensor:
    return 0.5 * torch.erfc(t * -0.7071067811865476)


def interval_bits(v: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Bits for the unit-width interval around v under a N(0, sigma^2) model.

    This is the continuous counterpart of the coder's per-symbol cost: at
    integer v it is the probability mass the coder assigns to that symbol.
    """
    lik = _std_cdf((v + 0.5) / sigma) - _std_cdf((v - 0.5) / sigma)
    return -torch.log2(torch.clamp(lik, min=LIKELIHOOD_FLOOR))


def _noise(like: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    return torch.rand(like.shape, generator=gen, dtype=like.dtype) - 0.5


def batch_sigma_mask(sigma: np.ndarray, q: float) -> np.ndarray:
    """Per-sample keep-mask: sigma at or above the (100 - q)-th percentile.

    Thresholds are linear-interpolation percentiles in float64 over each
    sample's flattened slice, the same rule the codec applies, so training
    sees exactly the decoder's masks. Ties at the threshold are kept.
    """
    q = float(np.float32(q))
    sig = sigma.astype(np.float64)
    thr = np.percentile(sig.reshape(sig.shape[0], -1), 100.0 - q, axis=1, method="linear")
    return (sig >= thr.reshape(-1, 1, 1, 1)).astype(np.uint8)


def batch_regions(sigma: np.ndarray, checkpoints: tuple[float, ...]) -> np.ndarray:
    """Region index per element: how many checkpoint masks exclude it."""
    regions = np.zeros(sigma.shape, dtype=np.int16)
    for c in checkpoints:
        regions += 1 - batch_sigma_mask(sigma, c).astype(np.int16)
    return regions


@dataclass
class QuantizedState:
    """Hard-quantized pipeline state shared by the refinement phases.

    Mirrors what a decoder holds after the base layer: the reconstructed
    base latent, the hyper conditioning planes, and the base entropy
    parameters each slice was coded against.
    """

    y_t: torch.Tensor
    y_hat_b: torch.Tensor
    d_mu_b: torch.Tensor
    d_sigma_b: torch.Tensor
    d_mu_t: torch.Tensor
    d_sigma_t: torch.Tensor
    base_params: list[tuple[torch.Tensor, torch.Tensor]]


class CodecModel(nn.Module):
    """Every codec sub-network plus the passes the three phases train on."""

    def __init__(self, cfg: TrainConfig) -> None:
        super().__init__()
        self.cfg = cfg
        # Layer init draws from the global generator; seeding here makes
        # model construction part of the reproducibility contract.
        torch.manual_seed(cfg.seed)
        self._conv: dict[str, nn.Module] = {}
        for name, spec in layer_table(cfg).items():
            mod = _make_layer(spec)
            self._conv[name] = mod
            self.add_module(name.replace(".", "_"), mod)
        self.zprior_mu = nn.Parameter(torch.zeros(cfg.hyper_channels))
        self.zprior_sigma_raw = nn.Parameter(torch.zeros(cfg.hyper_channels))
        # Refiners are residual: zeroing their last layer makes the initial
        # refinement the identity, so training starts from "no worse".
        for i in range(cfg.slices):
            for j in range(len(cfg.checkpoints)):
                last = self._conv[f"rem.{i}.{j}.1"]
                nn.init.zeros_(last.weight)
                nn.init.zeros_(last.bias)

    def conv_layer(self, name: str) -> nn.Module:
        return self._conv[name]

    def _stack(self, prefix: str, n: int, x: torch.Tensor) -> torch.Tensor:
        for layer in range(n):
            x = self._conv[f"{prefix}.{layer}"](x)
            if layer < n - 1:
                x = F.leaky_relu(x, 0.01)
        return x

    def _slice(self, t: torch.Tensor, i: int) -> torch.Tensor:
        cs = self.cfg.slice_channels
        return t[:, i * cs : (i + 1) * cs]

    # -- sub-network forwards ------------------------------------------------

    def analysis(self, x: torch.Tensor, which: str) -> torch.Tensor:
        return self._stack(f"ga_{which[0]}", 4, x)

    def synthesis(self, y: torch.Tensor, which: str) -> torch.Tensor:
        return torch.clamp(self._stack(f"gs_{which[0]}", 4, y), 0.0, 1.0)

    def hyper_analysis(self, y_b: torch.Tensor, y_t: torch.Tensor) -> torch.Tensor:
        return self._stack("ha", 2, torch.cat([y_b, y_t], dim=1))

    def hyper_synthesis(self, z_hat: torch.Tensor):
        four = self._stack("hs", 2, z_hat)
        return torch.chunk(four, 4, dim=1)

    def psi_base(self, i, d_mu_b, d_sigma_b, y_prev):
        parts = [d_mu_b, d_sigma_b] + ([y_prev] if y_prev is not None else [])
        out = self._stack(f"psi_b.{i}", 2, torch.cat(parts, dim=1))
        mu, sig_raw = torch.chunk(out, 2, dim=1)
        return mu, positive_map(sig_raw)

    def psi_top(self, i, y_b_slice, d_mu_t, d_sigma_t, mu_prev, sigma_prev):
        parts = [y_b_slice, d_mu_t, d_sigma_t]
        if mu_prev is not None:
            parts += [mu_prev, sigma_prev]
        out = self._stack(f"psi_t.{i}", 2, torch.cat(parts, dim=1))
        mu, sig_raw = torch.chunk(out, 2, dim=1)
        return mu, positive_map(sig_raw)

    def lrp(self, i: int, which: str, context, quant_slice) -> torch.Tensor:
        out = self._stack(f"lrp_{which[0]}.{i}", 2, torch.cat([context, quant_slice], dim=1))
        return 0.5 * bounded_map(out)

    def rem_refine(self, i, j, y_ckpt_slice, mu_b, sigma_b, mu_t, sigma_t):
        inp = torch.cat([y_ckpt_slice, mu_b, sigma_b, mu_t, sigma_t], dim=1)
        out = self._stack(f"rem.{i}.{j}", 2, inp)
        d_mu, d_sig = torch.chunk(out, 2, dim=1)
        return mu_t + d_mu, sigma_t * (1.0 + 0.5 * bounded_map(d_sig))

    def z_prior(self) -> tuple[torch.Tensor, torch.Tensor]:
        mu = self.zprior_mu.view(1, -1, 1, 1)
        return mu, positive_map(self.zprior_sigma_raw).view(1, -1, 1, 1)

    # -- phase passes ----------------------------------------------------------

    def joint_rd(self, x: torch.Tensor, gen: torch.Generator) -> dict:
        """Noise-proxy pass over both levels: reconstructions plus rates.

        Rates come back in bits per image pixel; the hyper-latent rate is
        reported separately because it prices both levels.
        """
        B, _, H, W = x.shape
        px = B * H * W
        y_b = self.analysis(x, "base")
        y_t = self.analysis(x, "top")
        z = self.hyper_analysis(y_b, y_t)
        z_noisy = z + _noise(z, gen)
        mu_z, sigma_z = self.z_prior()
        bits_z = interval_bits(z_noisy - mu_z, sigma_z).sum()
        d_mu_b, d_sigma_b, d_mu_t, d_sigma_t = self.hyper_synthesis(z_noisy)

        recon: list[torch.Tensor] = []
        bits_b = torch.zeros((), dtype=x.dtype)
        for i in range(self.cfg.slices):
            y_prev = torch.cat(recon, dim=1) if recon else None
            mu, sigma = self.psi_base(i, d_mu_b, d_sigma_b, y_prev)
            y_noisy = self._slice(y_b, i) + _noise(mu, gen)
            bits_b = bits_b + interval_bits(y_noisy - mu, sigma).sum()
            corr = self.lrp(i, "base", d_mu_b, y_noisy)
            recon.append(y_noisy + corr)
        y_hat_b = torch.cat(recon, dim=1)
        x_hat_b = self.synthesis(y_hat_b, "base")

        mus: list[torch.Tensor] = []
        sigmas: list[torch.Tensor] = []
        tops: list[torch.Tensor] = []
        bits_t = torch.zeros((), dtype=x.dtype)
        for i in range(self.cfg.slices):
            mu_prev = torch.cat(mus, dim=1) if mus else None
            sigma_prev = torch.cat(sigmas, dim=1) if sigmas else None
            y_b_i = self._slice(y_hat_b, i)
            mu, sigma = self.psi_top(i, y_b_i, d_mu_t, d_sigma_t, mu_prev, sigma_prev)
            mus.append(mu)
            sigmas.append(sigma)
            r_noisy = (self._slice(y_t, i) - y_b_i) + _noise(mu, gen)
            bits_t = bits_t + interval_bits(r_noisy - mu, sigma).sum()
            corr = self.lrp(i, "top", d_mu_t, r_noisy)
            tops.append(y_b_i + (r_noisy + corr))
        x_hat_t = self.synthesis(torch.cat(tops, dim=1), "top")
        return {
            "x_hat_b": x_hat_b,
            "x_hat_t": x_hat_t,
            "bpp_b": bits_b / px,
            "bpp_t": bits_t / px,
            "bpp_z": bits_z / px,
        }

    def quantized_state(self, x: torch.Tensor) -> QuantizedState:
        """Base pipeline with the codec's real rounding, slice by slice."""
        y_b = self.analysis(x, "base")
        y_t = self.analysis(x, "top")
        z = self.hyper_analysis(y_b, y_t)
        mu_z, _ = self.z_prior()
        z_hat = mu_z + hard_round(z - mu_z)
        d_mu_b, d_sigma_b, d_mu_t, d_sigma_t = self.hyper_synthesis(z_hat)
        recon: list[torch.Tensor] = []
        base_params: list[tuple[torch.Tensor, torch.Tensor]] = []
        for i in range(self.cfg.slices):
            y_prev = torch.cat(recon, dim=1) if recon else None
            mu, sigma = self.psi_base(i, d_mu_b, d_sigma_b, y_prev)
            base_params.append((mu, sigma))
            quant = mu + hard_round(self._slice(y_b, i) - mu)
            corr = self.lrp(i, "base", d_mu_b, quant)
            recon.append(quant + corr)
        return QuantizedState(
            y_t=y_t,
            y_hat_b=torch.cat(recon, dim=1),
            d_mu_b=d_mu_b,
            d_sigma_b=d_sigma_b,
            d_mu_t=d_mu_t,
            d_sigma_t=d_sigma_t,
            base_params=base_params,
        )

    def top_params(self, st: QuantizedState) -> list[tuple[torch.Tensor, torch.Tensor]]:
        """Per-slice top entropy parameters; conditioned on parameters only,
        so they do not depend on any quality choice."""
        params: list[tuple[torch.Tensor, torch.Tensor]] = []
        for i in range(self.cfg.slices):
            mu_prev = torch.cat([p[0] for p in params], dim=1) if params else None
            sigma_prev = torch.cat([p[1] for p in params], dim=1) if params else None
            y_b_i = self._slice(st.y_hat_b, i)
            params.append(
                self.psi_top(i, y_b_i, st.d_mu_t, st.d_sigma_t, mu_prev, sigma_prev)
            )
        return params

    def masked_top_latent(self, x: torch.Tensor, q: float) -> torch.Tensor:
        """Top latent a decoder would reconstruct at quality q.

        Elements the mask keeps carry their rounded residual; the rest carry
        the predicted mean. Callers wrap this in no_grad: nothing upstream
        of the top synthesis stack is trained against it.
        """
        st = self.quantized_state(x)
        params = self.top_params(st)
        tops: list[torch.Tensor] = []
        for i in range(self.cfg.slices):
            mu, sigma = params[i]
            mask = torch.from_numpy(
                batch_sigma_mask(sigma.detach().cpu().numpy(), q).astype(np.bool_)
            )
            y_b_i = self._slice(st.y_hat_b, i)
            r = self._slice(st.y_t, i) - y_b_i
            pre = torch.where(mask, mu + hard_round(r - mu), mu)
            corr = self.lrp(i, "top", st.d_mu_t, pre)
            tops.append(y_b_i + (pre + corr))
        return torch.cat(tops, dim=1)

    def refinement_bits(self, x: torch.Tensor, gen: torch.Generator | None = None) -> dict:
        """Rate on the elements beyond each checkpoint, refined and not.

        Mirrors the coder's region ordering: the refiner anchored at
        checkpoint j sees the reconstruction available there and its output
        prices exactly the elements that j's mask excludes but the next
        one covers. With gen the values carry the uniform-noise proxy
        (training); without it they are the coder's actual symbols (eval).
        Gradients reach only the refiners; every input is detached.
        """
        cks = self.cfg.checkpoints
        with torch.no_grad():
            st = self.quantized_state(x)
            params = self.top_params(st)
        B, _, H, W = x.shape
        px = B * H * W
        bits_ref = torch.zeros((), dtype=x.dtype)
        bits_plain = torch.zeros((), dtype=x.dtype)
        for i in range(self.cfg.slices):
            mu, sigma = params[i]
            sig_np = sigma.cpu().numpy()
            regions = batch_regions(sig_np, cks)
            y_b_i = self._slice(st.y_hat_b, i)
            r = self._slice(st.y_t, i) - y_b_i
            noise = _noise(r, gen) if gen is not None else None
            sym = hard_round(r - mu)
            mu_eff = mu.clone()
            for j in range(1, len(cks) + 1):
                ck = torch.from_numpy(
                    batch_sigma_mask(sig_np, cks[j - 1]).astype(np.bool_)
                )
                with torch.no_grad():
                    pre = torch.where(ck, sym + mu_eff, mu)
                    corr = self.lrp(i, "top", st.d_mu_t, pre)
                    y_ckpt = y_b_i + (pre + corr)
                b_mu, b_sigma = st.base_params[i]
                mu_ref, sigma_ref = self.rem_refine(i, j - 1, y_ckpt, b_mu, b_sigma, mu, sigma)
                sel = torch.from_numpy(regions == j)
                if sel.any():
                    if noise is not None:
                        bits_ref = bits_ref + interval_bits(
                            (r + noise - mu_ref)[sel], sigma_ref[sel]
                        ).sum()
                        bits_plain = bits_plain + interval_bits(
                            (r + noise - mu)[sel], sigma[sel]
                        ).sum()
                    else:
                        bits_ref = bits_ref + interval_bits(
                            hard_round(r - mu_ref)[sel], sigma_ref[sel]
                        ).sum()
                        bits_plain = bits_plain + interval_bits(sym[sel], sigma[sel]).sum()
                with torch.no_grad():
                    mu_eff[sel] = mu_ref[sel]
                    sym[sel] = hard_round(r - mu_eff)[sel]
        return {"bpp_refined": bits_ref / px, "bpp_plain": (bits_plain / px).detach()}
