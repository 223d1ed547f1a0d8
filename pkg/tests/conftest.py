import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from legassist.nn import TrainConfig, UNet, UNetConfig, load_model, save_model, train  # noqa: E402
from legassist.sim import gen_training_set  # noqa: E402

CACHE = Path(__file__).parent / ".cache"
TRAIN_N, TRAIN_SEED = 1000, 0
VAL_N, VAL_SEED = 50, 10_000
CACHE_VERSION = 4  # bump when the simulator or training code changes behaviour


@dataclass
class TrainedModel:
    model: UNet
    loss_history: list[float]
    val_history: list[float]
    pos_weight: float
    seconds: float
    cached: bool


def _key(ucfg: UNetConfig, tcfg: TrainConfig) -> str:
    blob = json.dumps({"unet": asdict(ucfg), "train": asdict(tcfg), "n": TRAIN_N, "seed": TRAIN_SEED,
                       "val": [VAL_N, VAL_SEED], "v": CACHE_VERSION}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@pytest.fixture(scope="session")
def trained_model() -> TrainedModel:
    """The default training run (about 1000 grids), cached between sessions."""
    ucfg, tcfg = UNetConfig(), TrainConfig()
    key = _key(ucfg, tcfg)
    model_path, meta_path = CACHE / f"model_{key}.bin", CACHE / f"model_{key}.json"
    if model_path.exists() and meta_path.exists():
        meta = json.loads(meta_path.read_text())
        return TrainedModel(load_model(model_path), meta["loss"], meta["val"], meta["pos_weight"],
                            meta["seconds"], True)
    data = gen_training_set(TRAIN_N, TRAIN_SEED)
    val = gen_training_set(VAL_N, VAL_SEED)
    t0 = time.perf_counter()
    res = train(data, ucfg, tcfg, validation=val)
    seconds = time.perf_counter() - t0
    CACHE.mkdir(exist_ok=True)
    save_model(model_path, res.model)
    meta_path.write_text(json.dumps({"loss": res.loss_history, "val": res.val_history,
                                     "pos_weight": res.pos_weight, "seconds": seconds}))
    return TrainedModel(res.model, res.loss_history, res.val_history, res.pos_weight, seconds, False)


# ---------------------------------------------------------------- acceptance lines

ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion(request):
    """``criterion(ok, detail)`` records one PASS/FAIL line for the test and asserts ``ok``."""
    label = request.node.name.removeprefix("test_")

    def record(ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
