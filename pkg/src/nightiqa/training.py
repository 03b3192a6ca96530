"""Joint end-to-end training with the weighted hybrid loss, plus
prediction and a finite-difference gradient checking harness.

Training is deterministic given a seed: single-threaded, deterministic
kernels, ordered batches from a seeded shuffle.
"""

import csv
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import data as data_mod
from .data import CHECKPOINT_FORMAT_VERSION, ModelCheckpoint, load_image
from .decomposition import decomposition_loss
from .eai import eai_cache_path
from .encoding import FeatureDecoder, FeatureEncoder, feature_loss
from .head import QualityHead, quality_loss
from .model import FullModel

LOG_FIELDS = ["epoch", "idm", "feat", "quality", "total"]

GRADCHECK_COMPONENTS = ("decomposition", "feature", "head", "total")


@dataclass
class TrainConfig:
    lambda1: float = 0.1
    lambda2: float = 0.2
    lambda3: float = 0.7
    batch_size: int = 16
    epochs: int = 100
    learning_rate: float = 3e-5
    input_size: tuple = (512, 512)
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")
        self.input_size = tuple(int(v) for v in self.input_size)

    def to_dict(self):
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d


def _parse_value(key, raw):
    raw = raw.strip()
    if key == "input_size":
        parts = raw.replace("x", ",").split(",")
        return tuple(int(p) for p in parts)
    if key in ("batch_size", "epochs", "seed"):
        return int(raw)
    return float(raw)


def load_config(path, overrides=None):
    """Read a `key = value` config file; overrides (a dict) win over
    file values."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in TrainConfig.__dataclass_fields__:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _parse_value(key, raw)
    if overrides:
        values.update(overrides)
    return TrainConfig(**values)


def total_loss(idm, feat, quality, config):
    """Weighted hybrid loss. Component losses must be non-negative."""
    for name, value in (("idm", idm), ("feat", feat), ("quality", quality)):
        v = float(value.detach()) if torch.is_tensor(value) else float(value)
        if v < 0:
            raise ValueError(f"negative {name} loss: {v} (upstream bug)")
    return config.lambda1 * idm + config.lambda2 * feat + config.lambda3 * quality


def _enable_determinism():
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


def build_model(seed):
    """Fresh model with seeded random initialization (PyTorch's default
    He-style uniform fan-in scaling)."""
    torch.manual_seed(seed)
    return FullModel()


def state_dict_to_arrays(model):
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def load_model_from_checkpoint(ckpt):
    model = FullModel()
    state = {k: torch.from_numpy(np.asarray(v)) for k, v in ckpt.parameter_map.items()}
    model.load_state_dict(state)
    return model


def _load_training_pair(record, input_size):
    eai_path = eai_cache_path(record.image_path)
    if not eai_path.exists():
        raise FileNotFoundError(
            f"missing EAI cache for {record.image_path}: expected {eai_path} "
            f"(run `nightiqa prepare-eai` first)"
        )
    i_n = load_image(record.image_path, input_size)
    i_e = load_image(eai_path, input_size)
    return i_n, i_e


def _to_nchw(images):
    arr = np.stack(images).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(arr))


def train(manifest, config, records=None, log_path=None, checkpoint_path=None,
          progress=None):
    """Train on the given records (default: the whole manifest).

    Returns (ModelCheckpoint of the best epoch by training loss,
    per-epoch log as a list of dicts). Requires the EAI cache.
    """
    if records is None:
        records = manifest.records
    records = list(records)
    if not records:
        raise ValueError("empty training split")

    _enable_determinism()
    pairs = [_load_training_pair(rec, config.input_size) for rec in records]
    nti = _to_nchw([p[0] for p in pairs])
    eai = _to_nchw([p[1] for p in pairs])
    mos = torch.tensor([rec.mos for rec in records], dtype=torch.float32)

    model = build_model(config.seed)
    model.train()
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        eps=config.adam_eps,
    )
    rng = np.random.default_rng(config.seed)

    log = []
    best = None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(records))
        sums = {"idm": 0.0, "feat": 0.0, "quality": 0.0}
        n_batches = 0
        for start in range(0, len(records), config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size])
            optimizer.zero_grad()
            idm, feat, quality, _ = model.losses(nti[idx], eai[idx], mos[idx])
            loss = total_loss(idm.total, feat, quality, config)
            loss.backward()
            optimizer.step()
            sums["idm"] += float(idm.total.detach())
            sums["feat"] += float(feat.detach())
            sums["quality"] += float(quality.detach())
            n_batches += 1
        means = {k: v / n_batches for k, v in sums.items()}
        entry = {
            "epoch": epoch,
            "idm": means["idm"],
            "feat": means["feat"],
            "quality": means["quality"],
            "total": config.lambda1 * means["idm"]
            + config.lambda2 * means["feat"]
            + config.lambda3 * means["quality"],
        }
        log.append(entry)
        if progress is not None:
            progress(entry)
        if best is None or entry["total"] < best[0]:
            best = (entry["total"], epoch, state_dict_to_arrays(model))

    ckpt = ModelCheckpoint(
        format_version=CHECKPOINT_FORMAT_VERSION,
        parameter_map=best[2],
        config_snapshot=config.to_dict(),
        rng_seed=config.seed,
        extra={"best_epoch": best[1], "best_total_loss": best[0]},
    )
    if checkpoint_path is not None:
        data_mod.save_checkpoint(ckpt, checkpoint_path)
    if log_path is not None:
        write_loss_log(log, log_path)
    return ckpt, log


def write_loss_log(log, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
        for entry in log:
            writer.writerow([entry["epoch"]] + [repr(entry[k]) for k in LOG_FIELDS[1:]])


def predict(ckpt, image_path, input_size=None):
    """Score a single image from a checkpoint; the EAI stream is not
    used at test time."""
    model = load_model_from_checkpoint(ckpt)
    model.eval()
    if input_size is None:
        input_size = tuple(ckpt.config_snapshot.get("input_size", (512, 512)))
    image = load_image(image_path, input_size)
    with torch.no_grad():
        score = model.predict_score(_to_nchw([image]))
    return float(score[0])


def predict_batch(ckpt, image_paths, input_size=None, batch_size=8):
    model = load_model_from_checkpoint(ckpt)
    model.eval()
    if input_size is None:
        input_size = tuple(ckpt.config_snapshot.get("input_size", (512, 512)))
    scores = []
    with torch.no_grad():
        for start in range(0, len(image_paths), batch_size):
            chunk = image_paths[start : start + batch_size]
            batch = _to_nchw([load_image(p, input_size) for p in chunk])
            scores.extend(float(s) for s in model.predict_score(batch))
    return scores


def _gradcheck_setup(component, seed):
    """Build a float64 loss closure and the modules whose parameters are
    checked."""
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed + 1)

    def rand(shape):
        return torch.rand(shape, generator=gen, dtype=torch.float64)

    if component == "decomposition":
        model = FullModel().double()
        model.train()
        i_n, i_e = rand((2, 3, 16, 16)), rand((2, 3, 16, 16))

        def closure():
            batch = torch.cat([i_n, i_e], dim=0)
            r, l = model.decomp(batch)
            out_n = (r[:2], l[:2])
            out_e = (r[2:], l[2:])
            return decomposition_loss(i_n, i_e, out_n, out_e).total

        return closure, [model.decomp]

    if component == "feature":
        enc_r, enc_l = FeatureEncoder(3).double(), FeatureEncoder(1).double()
        dec_r, dec_l = FeatureDecoder(3).double(), FeatureDecoder(1).double()
        for m in (enc_r, enc_l, dec_r, dec_l):
            m.train()
        r, l = rand((2, 3, 16, 16)), rand((2, 1, 16, 16))

        def closure():
            return feature_loss(
                r, dec_r(enc_r(r)[-1]), l, dec_l(enc_l(l)[-1])
            )

        return closure, [enc_r, enc_l, dec_r, dec_l]

    if component == "head":
        head = QualityHead().double()
        head.train()
        sizes = [16, 8, 4, 2]
        pyr_r = tuple(rand((2, c, s, s)) for c, s in zip((16, 32, 64, 128), sizes))
        pyr_l = tuple(rand((2, c, s, s)) for c, s in zip((16, 32, 64, 128), sizes))
        targets = rand((2,))

        def closure():
            return quality_loss(head(pyr_r, pyr_l), targets)

        return closure, [head]

    if component == "total":
        model = FullModel().double()
        model.train()
        config = TrainConfig(input_size=(16, 16))
        i_n, i_e = rand((2, 3, 16, 16)), rand((2, 3, 16, 16))
        targets = rand((2,))

        def closure():
            idm, feat, quality, _ = model.losses(i_n, i_e, targets)
            return total_loss(idm.total, feat, quality, config)

        return closure, [model]

    raise ValueError(
        f"unknown gradcheck component {component!r}; expected one of "
        f"{GRADCHECK_COMPONENTS}"
    )


DEFAULT_GRADCHECK_SEED = 0


def gradcheck(component, seed=DEFAULT_GRADCHECK_SEED, step=1e-4,
              samples_per_param=3):
    """Compare analytic gradients to central finite differences on tiny
    float64 inputs. Returns a report dict with the max relative error.

    Each entry's error is normalized by max(|analytic|, |fd|, component
    gradient inf-norm) so near-zero entries are judged against the
    gradient's scale.

    The networks use ReLU, which is only piecewise differentiable. When
    the +-step interval straddles a kink the central difference does not
    estimate the derivative of either piece, so any sample exceeding the
    tolerance is validated by a second estimate at step/2: on a smooth
    segment the two agree to O(step^2), while a straddled kink makes
    them disagree. Invalid samples are redrawn. The validation never
    consults the analytic gradient, so a wrong gradient is still caught:
    both estimates would agree with each other and disagree with it.
    """
    _enable_determinism()
    closure, modules = _gradcheck_setup(component, seed)
    params = [p for m in modules for p in m.parameters() if p.requires_grad]

    loss = closure()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grad_scale = max(float(g.abs().max()) for g in grads if g is not None)

    def fd_at(flat, j, orig, h):
        with torch.no_grad():
            flat[j] = orig + h
            f_plus = float(closure())
            flat[j] = orig - h
            f_minus = float(closure())
            flat[j] = orig
        return (f_plus - f_minus) / (2.0 * h)

    rng = np.random.default_rng(seed)
    max_rel = 0.0
    checked = 0
    skipped = 0
    for param, grad in zip(params, grads):
        flat = param.data.view(-1)
        n = flat.numel()
        take = min(samples_per_param, n)
        done = 0
        # draw extra candidates so kink-straddling samples can be replaced
        for j in rng.choice(n, size=min(4 * take, n), replace=False):
            if done == take:
                break
            j = int(j)
            orig = float(flat[j])
            fd = fd_at(flat, j, orig, step)
            analytic = 0.0 if grad is None else float(grad.view(-1)[j])
            rel = abs(analytic - fd) / max(abs(analytic), abs(fd), grad_scale)
            if rel > 2.5e-4:
                fd_half = fd_at(flat, j, orig, step / 2.0)
                scale = max(abs(fd), abs(fd_half), grad_scale)
                if abs(fd - fd_half) > 2.5e-4 * scale:
                    skipped += 1  # non-smooth interval: FD is no valid oracle
                    continue
            max_rel = max(max_rel, rel)
            checked += 1
            done += 1
    return {
        "component": component,
        "max_rel_err": max_rel,
        "checked": checked,
        "skipped": skipped,
    }
