"""File-based painter protocol.

The pipeline and any painter communicate through a directory of images plus
a small JSON sidecar, so a painter can live in another process, another
language, or another machine's filesystem. A request directory contains:

  depth.png   16-bit depth, code 0 = background, sidecar min/max in meta
  remap.png   8-bit RGB warped initialization (absent for the first view)
  mask.png    8-bit, 255 = generate, 0 = keep
  zones.png   8-bit trimap 0/128/255 = keep/refine/generate (optional)
  meta.json   prompt, view_index, camera, depth range, seed

The painter answers with color.png plus done.json; done.json is written
last (atomically) so pollers never observe a half-finished response.
"""

import shlex
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import NoiseSchedule, OracleDenoiser, downsample_mask, masked_generate
from .geometry import Camera, camera_on_sphere
from .images import (
    decode_depth,
    encode_depth,
    read_json,
    read_png,
    to_u8,
    to_unit,
    write_json,
    write_png,
)
from .remap import GENERATE, KEEP, REFINE

_ZONE_TO_PNG = {KEEP: 0, REFINE: 128, GENERATE: 255}
_PNG_TO_ZONE = {0: KEEP, 128: REFINE, 255: GENERATE}

FIELD_GRADIENT = 0.34
FIELD_CHECKER = 0.10
FIELD_SCALE = 0.6  # checker period; gentle enough that nearest-sample
                   # lookups at default fusion density stay within 4/255


class ProtocolError(RuntimeError):
    """Malformed request or response (schema violation)."""


class PainterError(RuntimeError):
    """Painter reported failure or misbehaved."""


class PainterTimeout(PainterError):
    """External painter did not finish within the allotted time."""


def color_field(positions: np.ndarray) -> np.ndarray:
    """Deterministic world-space color field used by the built-in painters.

    A smooth per-axis gradient plus a soft 3-d checker, the same everywhere,
    so any two views of one surface point agree by construction.

    Args:
      positions: (..., 3) world coordinates.

    Returns:
      (..., 3) colors in [0, 1].
    """
    p = np.asarray(positions, dtype=np.float64)
    checker = np.tanh(2.0 * np.cos(np.pi * p / FIELD_SCALE).prod(axis=-1))
    rgb = 0.5 + FIELD_GRADIENT * p + FIELD_CHECKER * checker[..., None]
    return np.clip(rgb, 0.0, 1.0)


@dataclass
class PaintRequest:
    """One view's painting job.

    depth is float with inf background; mask is uint8 with 1 = generate;
    zones (optional) uses the keep/refine/generate codes; remap is a float
    RGB image in [0, 1] or None for the first view.
    """

    prompt: str
    view_index: int
    camera: Camera
    depth: np.ndarray
    mask: np.ndarray
    remap: np.ndarray | None = None
    zones: np.ndarray | None = None
    seed: int = 0

    def validate(self):
        res = self.camera.resolution
        shape = (res, res)
        if self.depth.shape != shape:
            raise ProtocolError(f"depth shape {self.depth.shape} != {shape}")
        if self.mask.shape != shape:
            raise ProtocolError(f"mask shape {self.mask.shape} != {shape}")
        if self.remap is not None and self.remap.shape != shape + (3,):
            raise ProtocolError(f"remap shape {self.remap.shape} != {shape + (3,)}")
        if self.zones is not None:
            if self.zones.shape != shape:
                raise ProtocolError(f"zones shape {self.zones.shape} != {shape}")
            if not np.isin(self.zones, [KEEP, REFINE, GENERATE]).all():
                raise ProtocolError("zones contain values outside {keep, refine, generate}")


def write_request(request: PaintRequest, dirpath) -> Path:
    """Serialize a request into a directory; returns the directory path."""
    request.validate()
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    codes, dmin, dmax = encode_depth(request.depth)
    write_png(dirpath / "depth.png", codes)
    write_png(dirpath / "mask.png", np.where(request.mask != 0, 255, 0).astype(np.uint8))
    if request.remap is not None:
        write_png(dirpath / "remap.png", to_u8(request.remap))
    if request.zones is not None:
        zones_png = np.zeros(request.zones.shape, dtype=np.uint8)
        for zone, value in _ZONE_TO_PNG.items():
            zones_png[request.zones == zone] = value
        write_png(dirpath / "zones.png", zones_png)
    cam = request.camera
    write_json(dirpath / "meta.json", {
        "prompt": request.prompt,
        "view_index": request.view_index,
        "camera": {
            "azimuth": cam.azimuth,
            "elevation": cam.elevation,
            "radius": cam.radius,
            "fov_y": cam.fov_y,
            "resolution": cam.resolution,
        },
        "depth_min": dmin,
        "depth_max": dmax,
        "seed": request.seed,
    })
    return dirpath


def read_request(dirpath) -> PaintRequest:
    """Parse a request directory; raises ProtocolError on schema violations."""
    dirpath = Path(dirpath)
    meta_path = dirpath / "meta.json"
    if not meta_path.exists():
        raise ProtocolError(f"missing {meta_path}")
    try:
        meta = read_json(meta_path)
    except ValueError as exc:
        raise ProtocolError(f"unparseable {meta_path}: {exc}") from exc
    for key in ("prompt", "view_index", "camera", "depth_min", "depth_max", "seed"):
        if key not in meta:
            raise ProtocolError(f"meta.json missing key '{key}'")
    cam_meta = meta["camera"]
    for key in ("azimuth", "elevation", "fov_y", "resolution"):
        if key not in cam_meta:
            raise ProtocolError(f"meta.json camera missing key '{key}'")
    if not (dirpath / "depth.png").exists():
        raise ProtocolError(f"missing {dirpath / 'depth.png'}")
    if not (dirpath / "mask.png").exists():
        raise ProtocolError(f"missing {dirpath / 'mask.png'}")
    if meta["depth_min"] > meta["depth_max"]:
        raise ProtocolError("depth_min exceeds depth_max")
    camera = camera_on_sphere(
        cam_meta["azimuth"], cam_meta["elevation"],
        radius=cam_meta.get("radius", 1.0), fov_y=cam_meta["fov_y"],
        resolution=int(cam_meta["resolution"]))
    codes = read_png(dirpath / "depth.png")
    if codes.dtype != np.uint16:
        raise ProtocolError("depth.png must be 16-bit")
    depth = decode_depth(codes, meta["depth_min"], meta["depth_max"])
    mask = (read_png(dirpath / "mask.png") != 0).astype(np.uint8)
    remap = None
    if (dirpath / "remap.png").exists():
        remap = to_unit(read_png(dirpath / "remap.png"))
    zones = None
    if (dirpath / "zones.png").exists():
        zones_png = read_png(dirpath / "zones.png")
        zones = np.zeros(zones_png.shape, dtype=np.uint8)
        seen = np.zeros(zones_png.shape, dtype=bool)
        for value, zone in _PNG_TO_ZONE.items():
            hit = zones_png == value
            zones[hit] = zone
            seen |= hit
        if not seen.all():
            raise ProtocolError("zones.png contains values outside {0, 128, 255}")
    request = PaintRequest(
        prompt=meta["prompt"], view_index=int(meta["view_index"]), camera=camera,
        depth=depth, mask=mask, remap=remap, zones=zones, seed=int(meta["seed"]))
    request.validate()
    return request


def write_response(dirpath, color=None, painter_id: str = "unknown",
                   status: str = "ok", message: str | None = None) -> None:
    """Write color.png then done.json (last, atomically)."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    if color is not None:
        write_png(dirpath / "color.png",
                  color if color.dtype == np.uint8 else to_u8(color))
    done = {"status": status, "painter_id": painter_id}
    if message is not None:
        done["message"] = message
    write_json(dirpath / "done.json", done)


def read_response(dirpath, resolution: int) -> np.ndarray:
    """Read and validate a painter response; returns float RGB in [0, 1]."""
    dirpath = Path(dirpath)
    done_path = dirpath / "done.json"
    if not done_path.exists():
        raise ProtocolError(f"missing {done_path}")
    done = read_json(done_path)
    if "status" not in done or "painter_id" not in done:
        raise ProtocolError("done.json missing status or painter_id")
    if done["status"] != "ok":
        raise PainterError(
            f"painter '{done['painter_id']}' failed: {done.get('message', done['status'])}")
    color_path = dirpath / "color.png"
    if not color_path.exists():
        raise ProtocolError(f"missing {color_path}")
    color = read_png(color_path)
    if color.shape != (resolution, resolution, 3):
        raise ProtocolError(
            f"color.png shape {color.shape} != {(resolution, resolution, 3)}")
    return to_unit(color)


def _field_target(request: PaintRequest) -> np.ndarray:
    """Field colors at the request's visible surface, black background."""
    fg = np.isfinite(request.depth)
    rows, cols = np.nonzero(fg)
    colors = np.zeros(request.depth.shape + (3,))
    if len(rows):
        points = request.camera.unproject(cols.astype(np.float64),
                                          rows.astype(np.float64),
                                          request.depth[fg])
        colors[fg] = color_field(points)
    return colors


class ProceduralPainter:
    """Multi-view-consistent oracle painter: color = field(world position)."""

    painter_id = "procedural"

    def paint(self, request: PaintRequest) -> np.ndarray:
        request.validate()
        colors = _field_target(request)
        if request.remap is not None:
            keep = request.mask == 0
            colors[keep] = request.remap[keep]
        return colors


class MaskedDiffusionPainter:
    """Built-in generative painter: the masked blending loop run to
    completion with an oracle denoiser that targets the procedural field.

    Keep pixels reproduce the remapped initialization exactly, generate
    pixels converge to the field, refine pixels blend both.
    """

    painter_id = "masked-diffusion"

    def __init__(self, n_steps: int = 50, w_refine: float = 0.5):
        self.schedule = NoiseSchedule.linear(n_steps)
        self.w_refine = w_refine

    def paint(self, request: PaintRequest) -> np.ndarray:
        request.validate()
        target = _field_target(request)
        constraint = request.remap if request.remap is not None else np.zeros_like(target)
        weights = downsample_mask(request.mask, request.zones, factor=1,
                                  w_refine=self.w_refine)
        conditioning = {"depth": request.depth, "prompt": request.prompt,
                        "seed": request.seed}
        out = masked_generate(OracleDenoiser(target, self.schedule), constraint,
                              weights, conditioning, self.schedule,
                              seed=request.seed)
        return np.clip(out, 0.0, 1.0)


BUILTIN_PAINTERS = {
    ProceduralPainter.painter_id: ProceduralPainter,
    MaskedDiffusionPainter.painter_id: MaskedDiffusionPainter,
}


def serve_request(painter, dirpath) -> None:
    """Run an in-process painter against a request directory on disk.

    Reads the request back from files (never from memory) so the file
    protocol is the single source of truth, then writes the response.
    Failures are reported through done.json with status=error.
    """
    try:
        request = read_request(dirpath)
        color = painter.paint(request)
    except Exception as exc:
        write_response(dirpath, painter_id=getattr(painter, "painter_id", "unknown"),
                       status="error", message=str(exc))
        return
    write_response(dirpath, color, painter_id=painter.painter_id)


def run_external_painter(dirpath, command: str, timeout: float = 300.0,
                         poll: float = 0.05) -> None:
    """Spawn an external painter and wait for done.json.

    The command template must contain a '{dir}' placeholder that receives
    the request directory. Raises PainterTimeout when the deadline passes
    (partial files are ignored), PainterError on nonzero exit without a
    response.
    """
    if "{dir}" not in command:
        raise PainterError("painter command template must contain '{dir}'")
    dirpath = Path(dirpath)
    argv = [part.replace("{dir}", str(dirpath)) for part in shlex.split(command)]
    done_path = dirpath / "done.json"
    stderr_path = dirpath / "painter_stderr.log"
    deadline = time.monotonic() + timeout
    # stderr goes to a file so a chatty painter can never fill a pipe and stall
    with open(stderr_path, "wb") as stderr_file:
        proc = subprocess.Popen(argv, stdout=subprocess.DEVNULL, stderr=stderr_file)
        try:
            while True:
                if done_path.exists():
                    try:
                        proc.wait(timeout=5.0)
                    except subprocess.TimeoutExpired:
                        pass  # response complete; a lingering process is killed below
                    return
                code = proc.poll()
                if code is not None:
                    if code != 0:
                        stderr = stderr_path.read_text(errors="replace")[-2000:]
                        raise PainterError(f"painter exited with code {code}: {stderr}")
                    if done_path.exists():
                        return
                    raise ProtocolError("painter exited without writing done.json")
                if time.monotonic() > deadline:
                    raise PainterTimeout(f"painter exceeded {timeout}s")
                time.sleep(poll)
        finally:
            if proc.poll() is None:
                proc.kill()
                proc.wait()


def paint_view(painter, request: PaintRequest, dirpath,
               timeout: float = 300.0) -> np.ndarray:
    """Full protocol round trip for one view.

    painter is either a built-in painter object or an 'external:<command>'
    string. The request is always materialized on disk first, so every
    paint goes through the same files an external tool would see.
    """
    write_request(request, dirpath)
    if isinstance(painter, str):
        if not painter.startswith("external:"):
            raise PainterError(f"unknown painter '{painter}'")
        run_external_painter(dirpath, painter[len("external:"):], timeout=timeout)
    else:
        serve_request(painter, dirpath)
    return read_response(dirpath, request.camera.resolution)


def main(argv=None) -> int:
    """Serve one request directory from the command line.

    Usage: python -m repaint3d.protocol DIR [painter-id]
    """
    import sys

    args = sys.argv[1:] if argv is None else argv
    if not args:
        print("usage: python -m repaint3d.protocol DIR [painter-id]", file=sys.stderr)
        return 2
    painter_id = args[1] if len(args) > 1 else "procedural"
    if painter_id not in BUILTIN_PAINTERS:
        print(f"unknown painter '{painter_id}'", file=sys.stderr)
        return 2
    serve_request(BUILTIN_PAINTERS[painter_id](), args[0])
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
