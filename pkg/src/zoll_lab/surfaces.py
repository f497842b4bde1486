"""Closed-form surface models: round sphere, flat torus, surfaces of revolution.

Each model exposes chart descriptions, the cometric, geodesic distance and an
area quadrature.  Phase points live on the unit cotangent bundle; alongside the
chart representation every model has a "canonical" array representation used by
the vectorised flow and quadrature code:

* sphere      -- base = unit vectors in R^3, covector = the metrically dual
                 tangent vector (unit, orthogonal to the base point),
* torus       -- base = (x1, x2) in [0, 2pi)^2, covector = (xi1, xi2),
* revolution  -- base = (r, theta), covector = (xi_r, xi_theta) for the metric
                 dr^2 + f(r)^2 dtheta^2.

Angles are radians, the sphere has radius 1 and the torus fundamental domain is
[0, 2pi)^2, so great circles have period 2pi and the flat geodesics close up at
lattice translations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

TWO_PI = 2.0 * np.pi

# Chart identifiers.  The sphere carries two polar charts (axis +z and +x) so
# that every phase point lies in at least one chart away from its poles.
CHART_SPHERE_Z = "sph_z"
CHART_SPHERE_X = "sph_x"
CHART_TORUS = "torus"
CHART_REVOLUTION = "rev"


class ChartDomainError(ValueError):
    """Raised when chart coordinates leave the chart's domain."""


class UnsupportedModelError(NotImplementedError):
    """Raised when an operation has no implementation for the given model."""


def wrap_angle(x):
    """Reduce angles to [0, 2pi)."""
    return np.mod(x, TWO_PI)


def torus_delta(x, y):
    """Shortest signed representative of x - y on the circle of length 2pi."""
    d = np.mod(np.asarray(x) - np.asarray(y) + np.pi, TWO_PI) - np.pi
    return d


@dataclass(frozen=True)
class SurfaceModel:
    """A closed surface with exactly known geometry.

    kind is one of "sphere", "torus", "revolution".  For revolution surfaces
    the metric is dr^2 + f(r)^2 dtheta^2 on (0, r_max) x [0, 2pi) with the
    poles r in {0, r_max} excluded from phase-space sampling; the profile must
    be smooth and positive on the open interval.
    """

    kind: str
    name: str = ""
    profile: Callable | None = None
    profile_deriv: Callable | None = None
    r_max: float = np.pi
    all_geodesics_periodic: bool = field(init=False, default=False)
    common_period: float | None = field(init=False, default=None)

    def __post_init__(self):
        if self.kind not in ("sphere", "torus", "revolution"):
            raise ValueError(f"unknown surface kind {self.kind!r}")
        if self.kind == "revolution" and self.profile is None:
            raise ValueError("revolution surfaces need a profile function")
        periodic = self.kind == "sphere"
        object.__setattr__(self, "all_geodesics_periodic", periodic)
        object.__setattr__(self, "common_period", TWO_PI if periodic else None)

    # ----------------------------------------------------------------- charts

    @property
    def charts(self) -> tuple[str, ...]:
        if self.kind == "sphere":
            return (CHART_SPHERE_Z, CHART_SPHERE_X)
        if self.kind == "torus":
            return (CHART_TORUS,)
        return (CHART_REVOLUTION,)

    @property
    def base_dim(self) -> int:
        return 3 if self.kind == "sphere" else 2

    def _check_chart(self, chart, x):
        x = np.asarray(x, dtype=float)
        if chart in (CHART_SPHERE_Z, CHART_SPHERE_X):
            if self.kind != "sphere":
                raise ChartDomainError(f"chart {chart} not on a {self.kind}")
            theta = np.asarray(x)[..., 0]
            if np.any(theta <= 0.0) or np.any(theta >= np.pi):
                raise ChartDomainError("polar chart excludes theta in {0, pi}")
        elif chart == CHART_TORUS:
            if self.kind != "torus":
                raise ChartDomainError(f"chart {chart} not on a {self.kind}")
        elif chart == CHART_REVOLUTION:
            if self.kind != "revolution":
                raise ChartDomainError(f"chart {chart} not on a {self.kind}")
            r = np.asarray(x)[..., 0]
            if np.any(r <= 0.0) or np.any(r >= self.r_max):
                raise ChartDomainError("revolution chart excludes the poles")
        else:
            raise ChartDomainError(f"unknown chart {chart!r}")
        return x

    # --------------------------------------------------------------- cometric

    def metric_diag(self, chart, x):
        """Diagonal (g_11, g_22) of the metric in an orthogonal chart."""
        x = self._check_chart(chart, x)
        if chart in (CHART_SPHERE_Z, CHART_SPHERE_X):
            return np.ones_like(x[..., 0]), np.sin(x[..., 0]) ** 2
        if chart == CHART_TORUS:
            one = np.ones_like(x[..., 0])
            return one, one
        f = self.profile(x[..., 0])
        return np.ones_like(x[..., 0]), f**2

    def cometric(self, chart, x, xi):
        """Evaluate g*_x(xi, xi), the principal symbol of the half Laplacian squared."""
        g11, g22 = self.metric_diag(chart, x)
        xi = np.asarray(xi, dtype=float)
        return xi[..., 0] ** 2 / g11 + xi[..., 1] ** 2 / g22

    # ----------------------------------------------------- chart <-> canonical

    def chart_to_embedding(self, chart, x):
        """Sphere charts -> unit vectors in R^3 (identity map for other kinds)."""
        x = np.asarray(x, dtype=float)
        if self.kind != "sphere":
            return x
        theta, phi = x[..., 0], x[..., 1]
        st, ct = np.sin(theta), np.cos(theta)
        if chart == CHART_SPHERE_Z:
            return np.stack([st * np.cos(phi), st * np.sin(phi), ct], axis=-1)
        if chart == CHART_SPHERE_X:
            # polar axis along +x
            return np.stack([ct, st * np.cos(phi), st * np.sin(phi)], axis=-1)
        raise ChartDomainError(f"unknown sphere chart {chart!r}")

    def to_canonical(self, chart, x, xi):
        """Map chart coordinates of a phase point to the canonical representation."""
        x = self._check_chart(chart, x)
        xi = np.asarray(xi, dtype=float)
        if self.kind == "sphere":
            p = self.chart_to_embedding(chart, x)
            theta, phi = x[..., 0], x[..., 1]
            st, ct = np.sin(theta), np.cos(theta)
            sp, cp = np.sin(phi), np.cos(phi)
            if chart == CHART_SPHERE_Z:
                e_th = np.stack([ct * cp, ct * sp, -st], axis=-1)
                e_ph = np.stack([-st * sp, st * cp, np.zeros_like(st)], axis=-1)
            else:
                e_th = np.stack([-st, ct * cp, ct * sp], axis=-1)
                e_ph = np.stack([np.zeros_like(st), -st * sp, st * cp], axis=-1)
            # raise the index: v = xi_theta e_theta + xi_phi / sin^2(theta) e_phi
            v = xi[..., :1] * e_th + (xi[..., 1:2] / st[..., None] ** 2) * e_ph
            return p, v
        if self.kind == "torus":
            return wrap_angle(x), xi
        return x.copy(), xi.copy()

    def from_canonical(self, base, covec):
        """Pick a chart and return (chart, x, xi) for a canonical phase point."""
        base = np.asarray(base, dtype=float)
        covec = np.asarray(covec, dtype=float)
        if self.kind == "sphere":
            chart = CHART_SPHERE_Z if abs(base[2]) < 0.9 else CHART_SPHERE_X
            if chart == CHART_SPHERE_Z:
                theta = np.arccos(np.clip(base[2], -1.0, 1.0))
                phi = np.arctan2(base[1], base[0])
                st, ct = np.sin(theta), np.cos(theta)
                e_th = np.array([ct * np.cos(phi), ct * np.sin(phi), -st])
                e_ph = np.array([-st * np.sin(phi), st * np.cos(phi), 0.0])
            else:
                theta = np.arccos(np.clip(base[0], -1.0, 1.0))
                phi = np.arctan2(base[2], base[1])
                st, ct = np.sin(theta), np.cos(theta)
                e_th = np.array([-st, ct * np.cos(phi), ct * np.sin(phi)])
                e_ph = np.array([0.0, -st * np.sin(phi), st * np.cos(phi)])
            xi = np.array([covec @ e_th, covec @ e_ph])
            return chart, np.array([theta, phi]), xi
        if self.kind == "torus":
            return CHART_TORUS, wrap_angle(base), covec.copy()
        return CHART_REVOLUTION, base.copy(), covec.copy()

    def cometric_canonical(self, base, covec):
        """g*(xi, xi) evaluated on canonical arrays (vectorised)."""
        base = np.asarray(base, dtype=float)
        covec = np.asarray(covec, dtype=float)
        if self.kind == "sphere":
            return np.sum(covec**2, axis=-1)
        if self.kind == "torus":
            return np.sum(covec**2, axis=-1)
        f = self.profile(base[..., 0])
        return covec[..., 0] ** 2 + covec[..., 1] ** 2 / f**2

    def normalize_covector(self, base, covec):
        """Scale covectors onto the unit cometric sphere."""
        nrm = np.sqrt(self.cometric_canonical(base, covec))
        return covec / nrm[..., None]

    # --------------------------------------------------------------- distance

    def distance(self, x, y):
        """Geodesic distance between canonical base points (vectorised).

        Exact closed forms: great-circle arc length on the sphere, quotient
        Euclidean distance on the torus.  Revolution surfaces have no closed
        form here and are rejected.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "sphere":
            cross = np.linalg.norm(np.cross(x, y), axis=-1)
            dot = np.sum(x * y, axis=-1)
            return np.arctan2(cross, dot)
        if self.kind == "torus":
            d = torus_delta(x, y)
            return np.sqrt(np.sum(d**2, axis=-1))
        raise UnsupportedModelError("no closed-form distance on revolution surfaces")

    # ------------------------------------------------------------------- area

    @property
    def area(self) -> float:
        if self.kind == "sphere":
            return 4.0 * np.pi
        if self.kind == "torus":
            return TWO_PI**2
        from scipy.integrate import quad

        val, _ = quad(lambda r: self.profile(r), 0.0, self.r_max, limit=200)
        return TWO_PI * val

    def area_quadrature(self, n_u: int = 96, n_v: int = 128, breaks=None):
        """Product quadrature (points, weights) for integrals over the surface.

        Sphere: Gauss-Legendre in the latitude variable x trapezoid in
        longitude; ``breaks`` may list latitude values where the 1-d rule is
        split so indicator integrands stay smooth per segment.  Torus: tensor
        trapezoid with optional splits per axis (breaks = {"x1": [...],
        "x2": [...]}).  Returns canonical base points (N, dim) and weights (N,).
        """
        if self.kind == "sphere":
            lat_breaks = sorted(b for b in (breaks or []) if -np.pi / 2 < b < np.pi / 2)
            edges = [-np.pi / 2, *lat_breaks, np.pi / 2]
            lats, wl = _segmented_gauss(edges, n_u)
            phis = TWO_PI * np.arange(n_v) / n_v
            wp = np.full(n_v, TWO_PI / n_v)
            LAT, PHI = np.meshgrid(lats, phis, indexing="ij")
            W = np.outer(wl * np.cos(lats), wp)
            pts = np.stack(
                [np.cos(LAT) * np.cos(PHI), np.cos(LAT) * np.sin(PHI), np.sin(LAT)],
                axis=-1,
            )
            return pts.reshape(-1, 3), W.reshape(-1)
        if self.kind == "torus":
            br = breaks or {}
            x1, w1 = _segmented_uniform(br.get("x1"), n_u)
            x2, w2 = _segmented_uniform(br.get("x2"), n_v)
            X1, X2 = np.meshgrid(x1, x2, indexing="ij")
            W = np.outer(w1, w2)
            pts = np.stack([X1, X2], axis=-1)
            return pts.reshape(-1, 2), W.reshape(-1)
        # revolution: Gauss-Legendre in r (weight f), trapezoid in theta
        rs, wr = _segmented_gauss([0.0, self.r_max], n_u)
        ths = TWO_PI * np.arange(n_v) / n_v
        wth = np.full(n_v, TWO_PI / n_v)
        R, TH = np.meshgrid(rs, ths, indexing="ij")
        W = np.outer(wr * self.profile(rs), wth)
        pts = np.stack([R, TH], axis=-1)
        return pts.reshape(-1, 2), W.reshape(-1)

    # ------------------------------------------------------------ conveniences

    def latitude(self, base):
        """Latitude (radians, positive north) of canonical sphere points."""
        if self.kind != "sphere":
            raise UnsupportedModelError("latitude is a sphere-only helper")
        base = np.asarray(base, dtype=float)
        return np.arcsin(np.clip(base[..., 2], -1.0, 1.0))


def _segmented_gauss(edges, n_per_segment):
    """Gauss-Legendre nodes/weights on each [edges[i], edges[i+1]] segment."""
    xs, ws = [], []
    gx, gw = np.polynomial.legendre.leggauss(n_per_segment)
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 0:
            continue
        xs.append(0.5 * (b - a) * gx + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * gw)
    return np.concatenate(xs), np.concatenate(ws)


def _segmented_uniform(breaks, n_total):
    """Periodic-uniform nodes on [0, 2pi), optionally split at given breaks.

    Without breaks this is the plain trapezoid rule (spectrally accurate on
    periodic smooth integrands).  With breaks each segment gets midpoint nodes
    so indicator integrands are constant per segment.
    """
    if not breaks:
        x = TWO_PI * np.arange(n_total) / n_total
        return x, np.full(n_total, TWO_PI / n_total)
    edges = sorted({wrap_angle(b) for b in breaks})
    edges = [*edges, edges[0] + TWO_PI]
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        length = b - a
        n = max(4, int(np.ceil(n_total * length / TWO_PI)))
        mid = a + (np.arange(n) + 0.5) * length / n
        xs.append(wrap_angle(mid))
        ws.append(np.full(n, length / n))
    return np.concatenate(xs), np.concatenate(ws)


@dataclass(frozen=True)
class PhasePoint:
    """A point of the unit cotangent bundle in chart coordinates."""

    chart: str
    x: np.ndarray
    xi: np.ndarray

    @classmethod
    def on(cls, model: SurfaceModel, chart: str, x, xi, normalize: bool = True):
        """Construct a phase point, projecting xi onto the unit cometric sphere."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        model._check_chart(chart, x)
        q = model.cometric(chart, x, xi)
        if normalize:
            xi = xi / np.sqrt(q)
        elif abs(q - 1.0) > 1e-12:
            raise ValueError(f"covector not unit: g*(xi,xi) = {q}")
        return cls(chart, x, xi)

    def canonical(self, model: SurfaceModel):
        return model.to_canonical(self.chart, self.x, self.xi)


def project(z: PhasePoint) -> np.ndarray:
    """Canonical projection pi: S*M -> M (forgets the covector)."""
    return np.asarray(z.x, dtype=float).copy()


# ------------------------------------------------------------- model builders


def sphere() -> SurfaceModel:
    return SurfaceModel(kind="sphere", name="sphere")


def torus() -> SurfaceModel:
    return SurfaceModel(kind="torus", name="torus")


def revolution(profile, profile_deriv, r_max=np.pi, name="revolution") -> SurfaceModel:
    return SurfaceModel(
        kind="revolution",
        name=name,
        profile=profile,
        profile_deriv=profile_deriv,
        r_max=r_max,
    )


def zoll_revolution_demo() -> SurfaceModel:
    """Round sphere written in geodesic polar coordinates: f(r) = sin r.

    Used to exercise the revolution-surface integrator against a genuinely
    Zoll metric with known behaviour.
    """
    return revolution(np.sin, np.cos, r_max=np.pi, name="zoll_revolution_demo")


_BUILTIN_MODELS = {
    "sphere": sphere,
    "torus": torus,
    "zoll_revolution_demo": zoll_revolution_demo,
}


def make_model(kind: str, profile: str | None = None) -> SurfaceModel:
    """Resolve configuration keys model.kind / model.profile to a model."""
    key = profile if kind == "revolution" and profile else kind
    try:
        return _BUILTIN_MODELS[key]()
    except KeyError:
        raise ValueError(f"unknown model {key!r}; built-ins: {sorted(_BUILTIN_MODELS)}")
