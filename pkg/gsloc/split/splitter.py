"""Moment-matched splitting of Gaussians along their major axis.

In the canonical frame of a Gaussian, the major axis marginal N(0, s^2) is
replaced by the three-component mixture

    lambda * N(-beta s, U s^2) + lambda_0 * N(0, U s^2) + lambda * N(+beta s, U s^2)

Matching the first four moments forces lambda_0 = 2/3, lambda = 1/6 and
U = 1 - beta^2 / 3, which is a valid variance only for 0 < beta < sqrt(3).
The other two axes are left untouched. Each child carries lambda_k times the
parent opacity.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from gsloc.core import DomainError
from gsloc.scene.core import Gaussian
from gsloc.scene.core import GaussianScene
from gsloc.scene.core import quat_to_matrix

DEFAULT_BETA = 1.4
BETA_MAX = math.sqrt(3.0)


@dataclass(frozen=True)
class SplitParams:
    beta: float
    lambda_side: float
    lambda_center: float
    sigma_ratio_sq: float

    @property
    def weights(self) -> tuple[float, float, float]:
        return self.lambda_side, self.lambda_center, self.lambda_side


def split_parameters(beta: float = DEFAULT_BETA) -> SplitParams:
    if not 0 < beta < BETA_MAX:
        raise DomainError(
            f"beta = {beta} violates the positive semi-definiteness constraint:"
            f" the child variance 1 - beta^2/3 requires 0 < beta < sqrt(3)"
        )
    return SplitParams(
        beta=float(beta),
        lambda_side=1.0 / 6.0,
        lambda_center=2.0 / 3.0,
        sigma_ratio_sq=1.0 - beta**2 / 3.0,
    )


def _split_arrays(
    means: np.ndarray,
    rotations: np.ndarray,
    scales: np.ndarray,
    opacities: np.ndarray,
    params: SplitParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Child means (N, 3, 3), scales (N, 3, 3) and opacities (N, 3), ordered
    (minus, center, plus) along the second axis."""
    n = len(means)
    # argmax returns the first maximum: ties go to the lowest axis
    axis = np.argmax(scales, axis=1)
    major = scales[np.arange(n), axis]
    # the major direction in world space is the matching rotation column
    direction = quat_to_matrix(rotations)[np.arange(n), :, axis]

    offset = (params.beta * major)[:, None] * direction
    child_means = np.stack([means - offset, means, means + offset], axis=1)

    child_scale = scales.copy()
    child_scale[np.arange(n), axis] = major * math.sqrt(params.sigma_ratio_sq)
    child_scales = np.repeat(child_scale[:, None, :], 3, axis=1)

    child_opac = opacities[:, None] * np.array(params.weights)[None, :]
    return child_means, child_scales, child_opac


def split_gaussian(
    g: Gaussian,
    params: SplitParams,
    ident: int = 0,
) -> tuple[Gaussian, Gaussian, Gaussian]:
    """(g_minus, g_center, g_plus), each with parent_id = `ident`."""
    means, scales, opac = _split_arrays(
        g.mean[None], g.rotation[None], g.scale[None], np.array([g.opacity]), params
    )
    return tuple(
        Gaussian(
            mean=means[0, k],
            rotation=g.rotation,
            scale=scales[0, k],
            opacity=float(opac[0, k]),
            color=g.color,
            feature=g.feature,
            parent_id=ident,
        )
        for k in range(3)
    )


def split_scene(scene: GaussianScene, beta: float = DEFAULT_BETA) -> GaussianScene:
    """3N Gaussians; children of Gaussian i sit at 3i, 3i+1, 3i+2 with
    parent_id i."""
    params = split_parameters(beta)
    n = len(scene)
    if not n:
        return GaussianScene.empty(scene.feature_dim)

    means, scales, opac = _split_arrays(
        scene.means, scene.rotations, scene.scales, scene.opacities, params
    )
    return GaussianScene(
        means=means.reshape(3 * n, 3),
        rotations=np.repeat(scene.rotations, 3, axis=0),
        scales=scales.reshape(3 * n, 3),
        opacities=opac.reshape(3 * n),
        colors=np.repeat(scene.colors, 3, axis=0),
        features=np.repeat(scene.features, 3, axis=0),
        parent_ids=np.repeat(np.arange(n), 3),
    )


# mixture moments {{{


def _normal_raw_moment(order: int, mean: float, var: float) -> float:
    match order:
        case 1:
            return mean
        case 2:
            return mean**2 + var
        case 3:
            return mean**3 + 3 * mean * var
        case 4:
            return mean**4 + 6 * mean**2 * var + 3 * var**2
    raise ValueError(f"Unsupported moment order {order}; expected 1-4")


def mixture_moment(order: int, s: float, params: SplitParams) -> float:
    """Closed-form raw moment of the 1D split mixture for a parent of scale s."""
    if order not in (1, 2, 3, 4):
        raise ValueError(f"Unsupported moment order {order}; expected 1-4")
    var = params.sigma_ratio_sq * s**2
    offset = params.beta * s
    return sum(
        weight * _normal_raw_moment(order, mean, var)
        for weight, mean in zip(params.weights, (-offset, 0.0, offset))
    )


def mixture_density(x, s: float, params: SplitParams):
    sigma = math.sqrt(params.sigma_ratio_sq) * s
    offset = params.beta * s
    return sum(
        weight * norm.pdf(x, loc=mean, scale=sigma)
        for weight, mean in zip(params.weights, (-offset, 0.0, offset))
    )


# }}}
