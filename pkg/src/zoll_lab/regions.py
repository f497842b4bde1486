"""Subsets of the surface and observables on the unit cotangent bundle.

Regions are built from distance-defined primitives (spherical caps and bands
by latitude, torus strips, tubes around curves) and boolean combinations;
each carries an exact membership predicate, a signed distance (negative
inside) and a topology tag.  Observables evaluate on canonical base points
(and optionally covectors) in vectorised form.

The descriptor mini-language accepted by :func:`make_region`:

    cap(lat>=0.7854)      closed polar cap     (lat> for the open cap)
    band(|lat|<=0.5236)   closed latitude band (< for open)
    strip(0,1)            open torus strip a < x1 < b  (strip2 for the x2 axis)
    tube(equator,0.2)     open tube of radius 0.2 around a named curve
    union(A;B)  intersection(A;B)  complement(A)

Mollifier families follow the distance formulas h_k = min(1, k d(x, omega^c))
for open sets and h_k = max(0, 1 - k d(x, omega)) for closed sets.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .surfaces import SurfaceModel, TWO_PI, torus_delta, wrap_angle


class RegionParseError(ValueError):
    """Malformed region descriptor."""


class UnsupportedRegionError(ValueError):
    """Operation undefined for this region (e.g. mollifier of an 'other' set)."""


@dataclass(frozen=True)
class Region:
    """A subset of M with membership, signed distance and topology tag."""

    model: SurfaceModel
    descriptor: str
    topology: str  # "open" | "closed" | "other"
    member_fn: Callable = field(repr=False)
    sdist_fn: Callable = field(repr=False)
    # coordinate values where the region boundary crosses a product-quadrature
    # axis ("lat" on the sphere, "x1"/"x2" on the torus); None when unknown
    breaks: dict = field(default_factory=dict)

    def member(self, base):
        return np.asarray(self.member_fn(base))

    def sdist(self, base):
        return np.asarray(self.sdist_fn(base))

    def complement(self) -> "Region":
        topo = {"open": "closed", "closed": "open"}.get(self.topology, "other")
        return Region(
            model=self.model,
            descriptor=f"complement({self.descriptor})",
            topology=topo,
            member_fn=lambda b, f=self.member_fn: ~np.asarray(f(b)),
            sdist_fn=lambda b, f=self.sdist_fn: -np.asarray(f(b)),
            breaks=dict(self.breaks),
        )

    def union(self, other: "Region") -> "Region":
        return _combine(self, other, "union")

    def intersection(self, other: "Region") -> "Region":
        return _combine(self, other, "intersection")

    def area_fraction(self, n_u=256, n_v=256) -> float:
        """Quadrature estimate of |omega| / |M| (boundary-split when exact)."""
        pts, w = _region_quadrature(self.model, self, n_u, n_v)
        return float(np.sum(w * self.member(pts)) / self.model.area)

    def jordan_boundary_estimate(self, deltas=(0.1, 0.05, 0.025), n=192):
        """Measure of {|sdist| < delta} per delta; a Jordan-boundary diagnostic.

        A boundary of measure zero shows up as an estimate decaying linearly
        with delta; the flag is True when halving delta at least roughly halves
        the measure.
        """
        pts, w = self.model.area_quadrature(n, n)
        sd = np.abs(self.sdist(pts))
        shells = [float(np.sum(w[sd < d])) for d in deltas]
        ratios = [b / a for a, b in zip(shells[:-1], shells[1:]) if a > 0]
        return {
            "deltas": list(deltas),
            "shell_measures": shells,
            "jordan_flag": bool(all(r < 0.75 for r in ratios)) if ratios else True,
        }


def _combine(r1: Region, r2: Region, op: str) -> Region:
    if op == "union":
        member = lambda b: np.asarray(r1.member_fn(b)) | np.asarray(r2.member_fn(b))
        sdist = lambda b: np.minimum(r1.sdist_fn(b), r2.sdist_fn(b))
    else:
        member = lambda b: np.asarray(r1.member_fn(b)) & np.asarray(r2.member_fn(b))
        sdist = lambda b: np.maximum(r1.sdist_fn(b), r2.sdist_fn(b))
    topo = r1.topology if r1.topology == r2.topology else "other"
    breaks: dict = {}
    for r in (r1, r2):
        for axis, vals in r.breaks.items():
            breaks.setdefault(axis, [])
            breaks[axis] = sorted(set(breaks[axis]) | set(vals))
    return Region(
        model=r1.model,
        descriptor=f"{op}({r1.descriptor};{r2.descriptor})",
        topology=topo,
        member_fn=member,
        sdist_fn=sdist,
        breaks=breaks,
    )


def _region_quadrature(model, region, n_u, n_v):
    br = region.breaks
    if model.kind == "sphere":
        return model.area_quadrature(n_u, n_v, breaks=br.get("lat"))
    if model.kind == "torus":
        return model.area_quadrature(n_u, n_v, breaks={k: br[k] for k in ("x1", "x2") if k in br})
    return model.area_quadrature(n_u, n_v)


# ------------------------------------------------------------------ primitives


def cap(model: SurfaceModel, lat0: float, closed: bool = True) -> Region:
    """Spherical cap {lat >= lat0} (closed) or {lat > lat0} (open).

    The signed distance is exact: the geodesic distance to the boundary circle
    of latitude lat0 is |lat - lat0| along a meridian.
    """
    if model.kind != "sphere":
        raise UnsupportedRegionError("caps are sphere regions")
    op = ">=" if closed else ">"

    def member(b):
        lat = model.latitude(b)
        return lat >= lat0 if closed else lat > lat0

    return Region(
        model=model,
        descriptor=f"cap(lat{op}{lat0:g})",
        topology="closed" if closed else "open",
        member_fn=member,
        sdist_fn=lambda b: lat0 - model.latitude(b),
        breaks={"lat": [lat0]},
    )


def band(model: SurfaceModel, alpha: float, closed: bool = True) -> Region:
    """Equatorial band {|lat| <= alpha} (closed) or strict (open)."""
    if model.kind != "sphere":
        raise UnsupportedRegionError("bands are sphere regions")
    op = "<=" if closed else "<"

    def member(b):
        lat = np.abs(model.latitude(b))
        return lat <= alpha if closed else lat < alpha

    return Region(
        model=model,
        descriptor=f"band(|lat|{op}{alpha:g})",
        topology="closed" if closed else "open",
        member_fn=member,
        sdist_fn=lambda b: np.abs(model.latitude(b)) - alpha,
        breaks={"lat": [-alpha, alpha]},
    )


def strip(model: SurfaceModel, a: float, b: float, axis: int = 0) -> Region:
    """Open torus strip {a < x_axis < b} (widths below the period).

    Signed distance is the exact circle distance to the boundary pair {a, b}.
    """
    if model.kind != "torus":
        raise UnsupportedRegionError("strips are torus regions")
    width = b - a
    if width <= 0 or width >= TWO_PI:
        raise UnsupportedRegionError("strip width must lie strictly in (0, 2pi)")
    a = wrap_angle(a)

    def offsets(base):
        return wrap_angle(np.asarray(base)[..., axis] - a)

    def member(base):
        u = offsets(base)
        return (u > 0) & (u < width)

    def sdist(base):
        u = offsets(base)
        inside = np.minimum(u, width - u)
        outside = np.minimum(TWO_PI - u, u - width)
        return np.where((u > 0) & (u < width), -inside, outside)

    name = "strip" if axis == 0 else "strip2"
    return Region(
        model=model,
        descriptor=f"{name}({a:g},{a + width:g})",
        topology="open",
        member_fn=member,
        sdist_fn=sdist,
        breaks={f"x{axis + 1}": [a, wrap_angle(a + width)]},
    )


# --------------------------------------------------------------------- curves


@dataclass(frozen=True)
class Curve:
    """A curve on M given by dense samples (plus exact segments on the torus)."""

    model: SurfaceModel
    name: str
    samples: np.ndarray  # (n, base_dim) canonical base points
    segments: np.ndarray | None = None  # torus: (m, 2, 2) segment endpoints in the cover

    def distance_to(self, base):
        base = np.asarray(base, dtype=float)
        if self.model.kind == "torus" and self.segments is not None:
            return _torus_segments_distance(base, self.segments)
        flat = base.reshape(-1, base.shape[-1])
        out = np.full(flat.shape[0], np.inf)
        chunk = max(1, int(2**22 // max(len(self.samples), 1)))
        for i0 in range(0, flat.shape[0], chunk):
            sl = slice(i0, min(flat.shape[0], i0 + chunk))
            d = self.model.distance(flat[sl, None, :], self.samples[None, :, :])
            out[sl] = d.min(axis=1)
        return out.reshape(base.shape[:-1])


def _torus_segments_distance(base, segments):
    """Exact distance from torus points to straight segments in the cover.

    Segments must be short enough (< about pi) that the nine lattice copies of
    the query point cover every relevant representative.
    """
    flat = np.asarray(base, dtype=float).reshape(-1, 2)
    shifts = np.array([[i * TWO_PI, j * TWO_PI] for i in (-1, 0, 1) for j in (-1, 0, 1)])
    best = np.full(flat.shape[0], np.inf)
    a = segments[:, 0, :]
    ab = segments[:, 1, :] - segments[:, 0, :]
    ab2 = np.maximum(np.sum(ab**2, axis=1), 1e-300)
    for s in shifts:
        p = flat + s
        ap = p[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("nmd,md->nm", ap, ab) / ab2[None, :], 0.0, 1.0)
        d2 = np.sum((ap - t[..., None] * ab[None, :, :]) ** 2, axis=-1)
        best = np.minimum(best, np.sqrt(d2.min(axis=1)))
    return best.reshape(np.asarray(base).shape[:-1])


def geodesic_segment_curve(model, base, covec, t0, t1, name="segment", n_samples=None):
    """Curve handle for gamma([t0, t1]) of the orbit through (base, covec)."""
    from .dynamics import GeodesicFlow

    flow = GeodesicFlow(model)
    length = t1 - t0
    if model.kind == "torus":
        n_sub = max(1, int(np.ceil(length / 1.0)))
        ts = np.linspace(t0, t1, n_sub + 1)
        pts = np.asarray(base)[None, :] + ts[:, None] * np.asarray(covec)[None, :]
        start = wrap_angle(pts[:-1])
        segs = np.stack([start, start + (pts[1:] - pts[:-1])], axis=1)
        samples = wrap_angle(pts)
        return Curve(model=model, name=name, samples=samples, segments=segs)
    n = n_samples or max(64, int(np.ceil(length * 512)))
    ts = t0 + (np.arange(n) + 0.5) * length / n
    samples = flow.orbit_base(np.asarray(base)[None], np.asarray(covec)[None], ts)[0]
    return Curve(model=model, name=name, samples=samples)


def equator_curve(model, n_samples=4096):
    ts = TWO_PI * (np.arange(n_samples) + 0.5) / n_samples
    samples = np.stack([np.cos(ts), np.sin(ts), np.zeros_like(ts)], axis=-1)
    return Curve(model=model, name="equator", samples=samples)


def tube(model: SurfaceModel, curve: Curve, radius: float) -> Region:
    """Open tube {x : d(x, curve) < radius}."""
    return Region(
        model=model,
        descriptor=f"tube({curve.name},{radius:g})",
        topology="open",
        member_fn=lambda b: curve.distance_to(b) < radius,
        sdist_fn=lambda b: curve.distance_to(b) - radius,
        breaks={},
    )


def eps_neighborhood(obj, eps: float) -> Region:
    """Open eps-neighborhood {x : d(x, omega) < eps} of a region or curve."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(obj, Curve):
        return tube(obj.model, obj, eps)
    region = obj

    def sdist(b):
        return np.maximum(region.sdist_fn(b), 0.0) - eps

    breaks = {}
    if region.model.kind == "sphere" and "lat" in region.breaks:
        cand = [v + s * eps for v in region.breaks["lat"] for s in (-1, 1)]
        breaks["lat"] = sorted(v for v in cand if -np.pi / 2 < v < np.pi / 2)
    return Region(
        model=region.model,
        descriptor=f"eps_neighborhood({region.descriptor},{eps:g})",
        topology="open",
        member_fn=lambda b: sdist(b) < 0,
        sdist_fn=sdist,
        breaks=breaks,
    )


# ----------------------------------------------------------------- observables


@dataclass(frozen=True)
class Observable:
    """A bounded function on S*M, vectorised over canonical phase arrays.

    ``fn`` takes base points (and for phase-space symbols also covectors) and
    returns values in [bounds[0], bounds[1]].  ``kind`` is one of "pullback",
    "indicator", "mollifier", "symbol", "constant".
    """

    name: str
    kind: str
    fn: Callable = field(repr=False)
    bounds: tuple = (0.0, 1.0)
    needs_covector: bool = False
    region: Region | None = None
    mollifier_index: int | None = None

    def __call__(self, base, covec=None):
        if self.needs_covector:
            return self.fn(base, covec)
        return self.fn(base)


def constant(c: float) -> Observable:
    return Observable(
        name=f"const({c:g})",
        kind="constant",
        fn=lambda b: np.full(np.asarray(b).shape[:-1], float(c)),
        bounds=(c, c),
    )


def indicator(region: Region) -> Observable:
    return Observable(
        name=f"indicator({region.descriptor})",
        kind="indicator",
        fn=lambda b: region.member(b).astype(float),
        bounds=(0.0, 1.0),
        region=region,
    )


def mollifier(region: Region, k: int) -> Observable:
    """The k-th mollifier of a tagged open or closed region.

    Open omega:   h_k(x) = min(1, k d(x, omega^c)) -- increases to the
    indicator from below.  Closed omega: h_k(x) = max(0, 1 - k d(x, omega)) --
    decreases to the indicator from above.
    """
    if k < 1:
        raise ValueError("mollifier index must be a positive integer")
    if region.topology == "open":

        def fn(b):
            d_complement = np.maximum(-region.sdist(b), 0.0)
            return np.minimum(1.0, k * d_complement)

    elif region.topology == "closed":

        def fn(b):
            d_region = np.maximum(region.sdist(b), 0.0)
            return np.maximum(0.0, 1.0 - k * d_region)

    else:
        raise UnsupportedRegionError("mollifiers need an open or closed topology tag")
    return Observable(
        name=f"mollifier({region.descriptor},k={k})",
        kind="mollifier",
        fn=fn,
        bounds=(0.0, 1.0),
        region=region,
        mollifier_index=k,
    )


def mollifier_family(region: Region, ks=(1, 2, 4, 8, 16, 32)):
    return [mollifier(region, k) for k in ks]


def pullback(model: SurfaceModel, fn, name, bounds=(0.0, 1.0)) -> Observable:
    """Observable f(pi(z)) from a base function; ignores the covector."""
    return Observable(name=name, kind="pullback", fn=fn, bounds=bounds)


def symbol_observable(model: SurfaceModel, fn, name, bounds=(0.0, 1.0)) -> Observable:
    """Smooth symbol a(x, xi) on S*M."""
    return Observable(name=name, kind="symbol", fn=fn, bounds=bounds, needs_covector=True)


def compose_with_flow(flow, a: Observable, s: float) -> Observable:
    """The observable a o phi_s (used by the flow-invariance checks)."""

    def fn(base, covec=None):
        if a.needs_covector:
            b, c = flow.flow_batch(base, covec, s)
            return a.fn(b, c)
        shape = np.asarray(base).shape
        flat_b = np.asarray(base, dtype=float).reshape(-1, shape[-1])
        if covec is None:
            raise ValueError("compose_with_flow needs covectors to transport the base")
        flat_c = np.asarray(covec, dtype=float).reshape(-1, shape[-1])
        b, _ = flow.flow_batch(flat_b, flat_c, s)
        return a.fn(b).reshape(shape[:-1])

    return Observable(
        name=f"{a.name}∘phi_{s:g}",
        kind=a.kind,
        fn=fn,
        bounds=a.bounds,
        needs_covector=True,
        region=a.region,
    )


# ------------------------------------------------------------------ the parser

_NUM = r"[-+]?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?"


def make_region(model: SurfaceModel, descriptor: str, curves: dict | None = None) -> Region:
    """Parse the region descriptor mini-language (grammar in the module docstring)."""
    s = descriptor.strip()
    if not s:
        raise RegionParseError("empty region descriptor")
    m = re.fullmatch(r"(\w+)\((.*)\)", s, flags=re.S)
    if not m:
        raise RegionParseError(f"cannot parse region descriptor {descriptor!r}")
    head, body = m.group(1), m.group(2).strip()
    if head == "cap":
        mm = re.fullmatch(rf"lat\s*(>=|>)\s*({_NUM})", body)
        if not mm:
            raise RegionParseError(f"cap wants 'lat>=c' or 'lat>c', got {body!r}")
        return cap(model, float(mm.group(2)), closed=mm.group(1) == ">=")
    if head == "band":
        mm = re.fullmatch(rf"\|lat\|\s*(<=|<)\s*({_NUM})", body)
        if not mm:
            raise RegionParseError(f"band wants '|lat|<=a' or '|lat|<a', got {body!r}")
        return band(model, float(mm.group(2)), closed=mm.group(1) == "<=")
    if head in ("strip", "strip2"):
        mm = re.fullmatch(rf"({_NUM})\s*,\s*({_NUM})", body)
        if not mm:
            raise RegionParseError(f"strip wants 'a,b', got {body!r}")
        return strip(model, float(mm.group(1)), float(mm.group(2)), axis=0 if head == "strip" else 1)
    if head == "tube":
        mm = re.fullmatch(rf"(\w+)\s*,\s*({_NUM})", body)
        if not mm:
            raise RegionParseError(f"tube wants 'curve_id,radius', got {body!r}")
        cid = mm.group(1)
        registry = dict(curves or {})
        if model.kind == "sphere" and cid == "equator" and cid not in registry:
            registry[cid] = equator_curve(model)
        if cid not in registry:
            raise RegionParseError(f"unknown curve id {cid!r}")
        return tube(model, registry[cid], float(mm.group(2)))
    if head == "complement":
        return make_region(model, body, curves).complement()
    if head in ("union", "intersection"):
        parts = _split_args(body)
        if len(parts) < 2:
            raise RegionParseError(f"{head} wants at least two ';'-separated regions")
        out = make_region(model, parts[0], curves)
        for p in parts[1:]:
            out = _combine(out, make_region(model, p, curves), head)
        return out
    raise RegionParseError(f"unknown region primitive {head!r}")


def _split_args(body: str):
    parts, depth, cur = [], 0, []
    for ch in body:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == ";" and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if cur:
        parts.append("".join(cur).strip())
    return [p for p in parts if p]
