"""Shared test support: independent oracles plus a tiny staged pipeline.

Each oracle is written for clarity, not speed: explicit loops, exact
arithmetic where it matters, no calls into the package under test.
"""

from fractions import Fraction
from pathlib import Path

import numpy as np
import torch
from scipy import linalg, ndimage

N8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
EIGHT = np.ones((3, 3), dtype=bool)
FOUR = ndimage.generate_binary_structure(2, 1)
D64 = torch.float64

# criterion number -> result line, filled in by the acceptance suite
ACCEPTANCE = {}


def flood_components(mask):
    """Brute-force 8-connected labelling with an explicit stack."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    comps = []
    H, W = mask.shape
    for r in range(H):
        for c in range(W):
            if mask[r, c] and not seen[r, c]:
                stack, comp = [(r, c)], []
                seen[r, c] = True
                while stack:
                    y, x = stack.pop()
                    comp.append((y, x))
                    for dy, dx in N8:
                        v, u = y + dy, x + dx
                        if 0 <= v < H and 0 <= u < W and mask[v, u] and not seen[v, u]:
                            seen[v, u] = True
                            stack.append((v, u))
                comps.append(comp)
    return comps


def zhang_suen_reference(mask):
    """Textbook parallel Zhang-Suen, written pixel by pixel."""
    img = np.pad(np.asarray(mask, dtype=bool), 1).astype(int)
    while True:
        changed = False
        for step in (0, 1):
            kill = []
            for r in range(1, img.shape[0] - 1):
                for c in range(1, img.shape[1] - 1):
                    if not img[r, c]:
                        continue
                    p = [img[r - 1, c], img[r - 1, c + 1], img[r, c + 1], img[r + 1, c + 1],
                         img[r + 1, c], img[r + 1, c - 1], img[r, c - 1], img[r - 1, c - 1]]
                    b = sum(p)
                    a = sum(1 for k in range(8) if p[k] == 0 and p[(k + 1) % 8] == 1)
                    p2, p4, p6, p8 = p[0], p[2], p[4], p[6]
                    if step == 0:
                        ok = p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
                    else:
                        ok = p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
                    if 2 <= b <= 6 and a == 1 and ok:
                        kill.append((r, c))
            for r, c in kill:
                img[r, c] = 0
            changed |= bool(kill)
        if not changed:
            return img[1:-1, 1:-1].astype(bool)


def random_blob(rng, size=24):
    noise = ndimage.gaussian_filter(rng.random((size, size)), rng.uniform(1.0, 2.5))
    return noise > np.quantile(noise, rng.uniform(0.4, 0.8))


def otsu_exhaustive(hist):
    """Lowest t maximising w0 * w1 * (mu0 - mu1)^2, in exact arithmetic."""
    h = [int(v) for v in hist]
    total = sum(h)
    best, best_t = None, None
    for t in range(1, len(h)):
        n0, n1 = sum(h[:t]), sum(h[t:])
        if n0 == 0 or n1 == 0:
            continue
        mu0 = Fraction(sum(i * h[i] for i in range(t)), n0)
        mu1 = Fraction(sum(i * h[i] for i in range(t, len(h))), n1)
        var = Fraction(n0, total) * Fraction(n1, total) * (mu0 - mu1) ** 2
        if best is None or var > best:
            best, best_t = var, t
    return best_t


def naive_binarize(k, rows=25, cols=40):
    """Per-pixel window mean with replicate padding, in exact rationals.

    Window rows y - rows//2 .. y - rows//2 + rows - 1, likewise for columns.
    """
    H, W = k.shape
    out = np.zeros((H, W), dtype=bool)
    for y in range(H):
        ys = np.clip(np.arange(y - rows // 2, y - rows // 2 + rows), 0, H - 1)
        for x in range(W):
            xs = np.clip(np.arange(x - cols // 2, x - cols // 2 + cols), 0, W - 1)
            mean = Fraction(int(k[np.ix_(ys, xs)].sum()), rows * cols)
            out[y, x] = not (k[y, x] > mean)
    return out


def outer_border_oracle(mask):
    """Outer border pixel sets of 8-components, via flood fills.

    The background touching a component's first raster pixel from the left is
    the region enclosing it; its border is the component pixels 4-adjacent to
    that region.
    """
    m = np.pad(mask, 1)
    comps, n = ndimage.label(m, structure=EIGHT)
    bg, _ = ndimage.label(~m, structure=FOUR)
    out = []
    for k in range(1, n + 1):
        rr, cc = np.nonzero(comps == k)
        first = np.lexsort((cc, rr))[0]
        region = bg[rr[first], cc[first] - 1]
        near = ndimage.binary_dilation(bg == region, structure=FOUR)
        ys, xs = np.nonzero((comps == k) & near)
        out.append(frozenset(zip((xs - 1).tolist(), (ys - 1).tolist())))
    return out


def random_mask(rng, size=24):
    noise = ndimage.gaussian_filter(rng.random((size, size)), rng.uniform(0.6, 2.0))
    return noise > np.quantile(noise, rng.uniform(0.3, 0.8))


def cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def brute_hull_vertices(pts):
    """O(n^3): endpoints of every edge with all points on its left or on the segment."""
    pts = sorted(set(map(tuple, pts)))
    verts = set()
    for i, p in enumerate(pts):
        for j, q in enumerate(pts):
            if i == j:
                continue
            ok = True
            for r in pts:
                c = cross(p, q, r)
                if c < 0:
                    ok = False
                    break
                if c == 0 and not (min(p[0], q[0]) <= r[0] <= max(p[0], q[0])
                                   and min(p[1], q[1]) <= r[1] <= max(p[1], q[1])):
                    ok = False
                    break
            if ok:
                verts |= {p, q}
    return verts


def brute_force(pred, gt):
    tp = fp = tn = fn = 0
    for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1

    def safe(num, den):
        return 1.0 if den == 0 else num / den

    return (tp, fp, tn, fn), {
        "f1": safe(2 * tp, 2 * tp + fp + fn),
        "specificity": safe(tn, tn + fp),
        "sensitivity": safe(tp, tp + fn),
        "iou": safe(tp, tp + fp + fn),
        "pacc": (tp + tn) / (tp + fp + tn + fn),
    }


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def autograd(f, x):
    t = torch.tensor(x, dtype=D64, requires_grad=True)
    f(t).backward()
    return t.grad.numpy()


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def check_grad(f_torch, x):
    fd = central_diff(lambda v: f_torch(torch.tensor(v, dtype=D64)).item(), x)
    return rel_err(fd, autograd(f_torch, x))


def fid_oracle(a, b):
    mu = a.mean(0) - b.mean(0)
    sa, sb = np.atleast_2d(np.cov(a, rowvar=False)), np.atleast_2d(np.cov(b, rowvar=False))
    cross = linalg.sqrtm(sa @ sb)
    return float(mu @ mu + np.trace(sa) + np.trace(sb) - 2 * np.trace(cross).real)


def standardised(rng, n):
    x = rng.normal(size=n)
    x -= x.mean()
    return x / x.std(ddof=1)



# staged pipeline ----------------------------------------------------------------

# smallest config that still exercises every toy stage end to end
TINY = """
run.seed = 3
run.dataset = toy
run.image_size = 32
run.toy_train = 30
run.toy_eval = 6
run.toy_finetune = 2
run.n_diagrams = 12
run.n_pairs = 12
prep.despeckle_window = 5
edge.sigma = 2.0
edge.lo = 0.2
edge.hi = 0.4
gan.base_channels = 4
gan.n_downsample = 1
gan.n_blocks = 1
gan.d_layers = 1
gan.num_discriminators = 2
gan.epochs = 2
gan.batch_size = 4
gan.fid_dim = 4
seg.depth = 2
seg.base_channels = 4
seg.epochs = 2
seg.finetune_epochs = 2
"""


def run_stage_chain(root, **over):
    """Run every toy-dataset stage in order, each fed its upstream run directories."""
    from edgeseg.config import load_config, parse_pairs
    from edgeseg.pipeline import run_stage

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    base = {**parse_pairs(TINY), "run.runs_dir": str(root / "runs"), **over}
    dirs = {}

    def go(stage, **links):
        values = {**base, **{k.replace("__", "."): str(v) for k, v in links.items()}}
        path = root / f"{stage}.cfg"
        path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
        dirs[stage] = run_stage(stage, load_config(path))
        return dirs[stage]

    toy = go("gen-toy")
    prep = go("preprocess", run__manifest=toy / "manifest.tsv")
    edges = go("extract-edges", run__manifest=prep / "manifest.tsv")
    diagrams = go("synth-diagrams")
    gan = go("train-gan", run__edges_run=edges)
    ds = go("gen-dataset", run__gan_run=gan, run__diagrams_run=diagrams)
    seg = go("train-seg", run__dataset_run=ds)
    ft = go("finetune-seg", run__model_run=seg, run__manifest=prep / "manifest.tsv")
    go("evaluate", run__model_run=ft, run__manifest=prep / "manifest.tsv")
    return dirs


def snapshot(run_dir):
    """Bytes of every artifact except wall-clock dependent files."""
    skip = {"stage.log", "timings.json"}
    return {p.relative_to(run_dir): p.read_bytes() for p in sorted(Path(run_dir).rglob("*"))
            if p.is_file() and p.name not in skip}
