"""sRGB <-> CIELAB conversion on channel-first tensors (…×3×H×W).

D65 reference white, IEC 61966-2-1 sRGB companding. Every function here is
differentiable so the losses can run through the Lab -> RGB path; clamping
only happens when asked for (image export).
"""
import numpy as np
import torch

from chromaquery.cqdata import ShapeError, check_finite_tensor

WHITE_D65 = (0.95047, 1.0, 1.08883)

_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)

_DELTA = 6.0 / 29.0

L_SCALE = 100.0
AB_SCALE = 128.0


def _check_channels(tensor, count, what):
    if tensor.dim() < 3 or tensor.shape[-3] != count:
        raise ShapeError('{} expects …×{}×H×W, got {}'.format(what, count, tuple(tensor.shape)))


def _apply_matrix(matrix, tensor):
    m = torch.as_tensor(matrix, dtype=tensor.dtype, device=tensor.device)
    return torch.einsum('ij,...jhw->...ihw', m, tensor)


def srgb_to_linear(rgb):
    return torch.where(rgb <= 0.04045, rgb / 12.92,
                       ((rgb.clamp(min=0.04045) + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(linear):
    return torch.where(linear <= 0.0031308, linear * 12.92,
                       1.055 * linear.clamp(min=0.0031308) ** (1.0 / 2.4) - 0.055)


def _lab_f(t):
    return torch.where(t > _DELTA ** 3, t.clamp(min=_DELTA ** 3) ** (1.0 / 3.0),
                       t / (3.0 * _DELTA ** 2) + 4.0 / 29.0)


def _lab_f_inv(t):
    return torch.where(t > _DELTA, t ** 3, 3.0 * _DELTA ** 2 * (t - 4.0 / 29.0))


def rgb_to_lab(rgb):
    _check_channels(rgb, 3, 'rgb_to_lab')
    check_finite_tensor(rgb, 'rgb_to_lab input')
    xyz = _apply_matrix(_RGB_TO_XYZ, srgb_to_linear(rgb))
    white = torch.tensor(WHITE_D65, dtype=rgb.dtype, device=rgb.device).view(3, 1, 1)
    fx, fy, fz = _lab_f(xyz / white).unbind(dim=-3)
    L = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)
    return torch.stack([L, a, b], dim=-3)


def lab_to_linear(lab):
    """Lab to linear-light RGB, unclamped."""
    _check_channels(lab, 3, 'lab_to_linear')
    L, a, b = lab.unbind(dim=-3)
    fy = (L + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    white = torch.tensor(WHITE_D65, dtype=lab.dtype, device=lab.device).view(3, 1, 1)
    xyz = _lab_f_inv(torch.stack([fx, fy, fz], dim=-3)) * white
    return _apply_matrix(_XYZ_TO_RGB, xyz)


def lab_to_rgb(lab, clamp=True):
    """Inverse of rgb_to_lab. With clamp=False the out-of-gamut values survive
    (and stay differentiable)."""
    _check_channels(lab, 3, 'lab_to_rgb')
    rgb = linear_to_srgb(lab_to_linear(lab))
    if clamp:
        rgb = rgb.clamp(0.0, 1.0)
    return rgb


def split_luminance(lab):
    """(x_L, y_AB) views over the channel axis."""
    _check_channels(lab, 3, 'split_luminance')
    return lab[..., :1, :, :], lab[..., 1:, :, :]


def merge_channels(x_L, y_AB):
    _check_channels(x_L, 1, 'merge_channels (L)')
    _check_channels(y_AB, 2, 'merge_channels (AB)')
    if x_L.shape[:-3] != y_AB.shape[:-3] or x_L.shape[-2:] != y_AB.shape[-2:]:
        raise ShapeError('cannot merge L {} with AB {}'.format(tuple(x_L.shape), tuple(y_AB.shape)))
    return torch.cat([x_L, y_AB], dim=-3)


def normalize_luminance(L):
    return L / L_SCALE


def normalize_ab(ab):
    return ab / AB_SCALE


def denormalize_ab(ab, clamp=True):
    ab = ab * AB_SCALE
    if clamp:
        ab = ab.clamp(-128.0, 127.0)
    return ab


def lab_batch_to_rgb255(x_L, ab_normalized, clamp=False):
    """Network output to 0-255 RGB through the differentiable path the losses use."""
    lab = merge_channels(x_L, ab_normalized * AB_SCALE)
    return lab_to_rgb(lab, clamp=clamp) * 255.0
