import copy
import pytest
import numpy as np

from omegaconf import OmegaConf

import kanformer.log.tracker as tracker
from kanformer.components import AdamState, AdamW, CrossEntropyLoss, EarlyStopping, MSELoss, adamw_step
from kanformer.data import ArrayDataset, SplitDataset, parse_task
from kanformer.errors import (
    CheckpointManifestError,
    CheckpointSizeError,
    CheckpointVersionError,
    ConfigError,
    ContractError,
    NonFiniteError,
    ShapeError,
    TrainingError,
)
from kanformer.eval import classification_metrics, evaluate_classification, rmse, topk_accuracy
from kanformer.log import MetricLogger, read_metrics
from kanformer.models import build_encoder, encoder_forward
from kanformer.tensor import Parameter, Tape, Tensor, backward
from kanformer.train import run_training, train_loop
from kanformer.utils import (
    config_diff,
    fingerprint,
    get_params_groups,
    load_checkpoint,
    load_config,
    make_streams,
    remap_flags,
    resolve_config,
    save_checkpoint,
    worker_count,
)


def test_adamw_step_is_pure_and_starts_at_lr_sign(rng):
    params = {"w": rng.normal(size=(3, 2))}
    grads = {"w": rng.normal(size=(3, 2))}
    before = {k: v.copy() for k, v in params.items()}
    state = AdamState()
    new, new_state = adamw_step(params, grads, state, lr=0.01, weight_decay=0.0)
    assert np.array_equal(params["w"], before["w"])
    assert state.step == 0 and not state.exp_avg
    assert new_state.step == 1
    np.testing.assert_allclose(new["w"], before["w"] - 0.01 * np.sign(grads["w"]), atol=1e-6)


def test_adamw_weight_decay_is_decoupled():
    params = {"w": np.array([2.0])}
    new, _ = adamw_step(params, {"w": np.array([0.0])}, AdamState(), lr=0.1, weight_decay=0.5)
    np.testing.assert_allclose(new["w"], [2.0 * (1 - 0.05)])


def test_adamw_step_errors():
    params = {"w": np.ones(2)}
    with pytest.raises(NonFiniteError):
        adamw_step(params, {"w": np.array([1.0, np.nan])}, AdamState(), lr=0.1)
    with pytest.raises(ContractError):
        adamw_step(params, {}, AdamState(), lr=0.1)
    with pytest.raises(ShapeError):
        adamw_step(params, {"w": np.ones(3)}, AdamState(), lr=0.1)


def test_adamw_class_matches_the_pure_step(rng):
    w0, g0, g1 = rng.normal(size=(3, 4, 2))
    p = Parameter(w0.copy(), precision="f64")
    opt = AdamW([{"params": [("w", p)]}], lr=0.05, weight_decay=0.01)
    opt.step({p: Tensor(g0, precision="f64")})
    opt.step({p: Tensor(g1, precision="f64")})

    params, state = {"w": w0.copy()}, AdamState()
    for g in (g0, g1):
        params, state = adamw_step(params, {"w": g}, state, lr=0.05, weight_decay=0.01)
    np.testing.assert_allclose(p.data, params["w"], rtol=1e-12)


def test_adamw_class_rejects_non_finite_gradients():
    p = Parameter(np.ones(2), precision="f64")
    opt = AdamW([{"params": [("w", p)]}], lr=0.1)
    with pytest.raises(NonFiniteError):
        opt.step({p: Tensor(np.array([np.inf, 0.0]), precision="f64")})
    assert np.array_equal(p.data, np.ones(2))


def test_mse_loss():
    loss = MSELoss()(Tensor(np.array([1.0, 2.0, 4.0])), np.array([1.0, 0.0, 1.0]))
    assert loss.item() == pytest.approx(13.0 / 3.0)


def test_cross_entropy_loss(rng):
    logits = rng.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 2])
    loss = CrossEntropyLoss()(Tensor(logits, precision="f64"), labels)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    assert loss.item() == pytest.approx(-logp[np.arange(4), labels].mean())
    with pytest.raises(ContractError):
        CrossEntropyLoss()(Tensor(logits), np.array([0, 3, 1, 2]))
    with pytest.raises(ShapeError):
        CrossEntropyLoss()(Tensor(logits), labels[:3])


def test_early_stopping():
    seen = []
    es = EarlyStopping("rmse", "min", patience=2, on_improvement=seen.append)
    for epoch, value in enumerate([3.0, 2.0, 2.5, 2.4, 1.0]):
        es(epoch, {"rmse": value})
        if es.early_stop:
            break
    assert seen == [0, 1]
    assert es.best_epoch == 1 and es.best_value == 2.0
    assert epoch == 3


def test_early_stopping_max_mode():
    es = EarlyStopping("acc1", "max", patience=5)
    assert es(0, {"acc1": 0.2})
    assert es(1, {"acc1": 0.3})
    assert not es(2, {"acc1": 0.3})
    assert es.best_value == 0.3
    with pytest.raises(ValueError):
        EarlyStopping("acc1", "up")


def test_metrics():
    assert rmse(np.array([1.0, 3.0]), np.array([1.0, 1.0])) == pytest.approx(np.sqrt(2.0))
    with pytest.raises(ContractError):
        rmse(np.array([]), np.array([]))
    logits = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 2.0], [3.0, 2.0, 1.0]])
    labels = np.array([1, 0, 1])
    # a tie ranks the lower class index first
    assert topk_accuracy(logits, labels, 1) == 0.0
    assert topk_accuracy(logits, labels, 2) == pytest.approx(2 / 3)
    results = classification_metrics(logits, labels, ks=(1, 3))
    assert set(results) == {"acc1", "acc3", "f1_macro"}
    assert results["acc3"] == 1.0
    assert results["f1_macro"] == 0.0
    with pytest.raises(ContractError):
        classification_metrics(logits, labels, ks=(1, 5))


def test_constant_logits_score_like_argmax(rng):
    labels = rng.integers(0, 10, size=1000)
    results = classification_metrics(np.zeros((1000, 10)), labels, ks=(1, 5))
    assert results["acc1"] == pytest.approx(np.mean(labels == 0))
    assert results["acc5"] == pytest.approx(np.mean(labels < 5))


def test_always_predicting_one_class():
    logits = np.tile([1.0, 0.0], (4, 1))
    results = classification_metrics(logits, np.array([0, 0, 1, 1]), ks=(1,))
    assert results["acc1"] == 0.5
    # class 0: precision 1/2, recall 1; class 1 never predicted
    assert results["f1_macro"] == pytest.approx(1 / 3)


def test_evaluate_classification_on_a_model():
    class Constant:
        def eval(self):
            return self

        def __call__(self, inputs):
            return Tensor(np.tile([2.0, 1.0], (len(inputs), 1)), precision="f64")

    data = ArrayDataset(np.zeros((4, 3)), np.array([0, 1, 0, 1]))
    results = evaluate_classification(Constant(), data, ks=(1, 2))
    assert results == {"acc1": 0.5, "acc2": 1.0, "f1_macro": pytest.approx(1 / 3)}


def test_params_groups(tiny_cfg, rng):
    model = build_encoder(tiny_cfg, parse_task(tiny_cfg.task), rng)
    decayed, plain = get_params_groups(model)
    assert plain["weight_decay"] == 0.0
    assert all(p.ndim >= 2 for _, p in decayed["params"])
    assert all(name.endswith("bias") or p.ndim <= 1 for name, p in plain["params"])
    assert len(decayed["params"]) + len(plain["params"]) == len(model.parameters())


def test_loss_decreases_on_a_frozen_batch(tiny_cfg, rng):
    # soft routing keeps the loss smooth in the parameters
    tiny_cfg.moe.router = "soft"
    task = parse_task(tiny_cfg.task)
    model = build_encoder(tiny_cfg, task, np.random.default_rng(0), precision="f64")
    model.eval()
    x = rng.uniform(1.0, 5.0, size=(8, task.arity))
    y = x[:, 0] * x[:, 1]
    optimizer = AdamW(get_params_groups(model), lr=1e-3, weight_decay=0.0)
    losses = []
    for _ in range(6):
        with Tape() as tape:
            loss = MSELoss()(model(x), y)
        losses.append(loss.item())
        optimizer.step(backward(loss, tape))
    assert all(after < before for before, after in zip(losses, losses[1:]))


def test_checkpoint_round_trip(tiny_cfg, tmp_path):
    task = parse_task(tiny_cfg.task)
    model = build_encoder(tiny_cfg, task, np.random.default_rng(5))
    path = save_checkpoint(model, tmp_path / "ckpt", tiny_cfg, task)
    loaded, cfg, loaded_task = load_checkpoint(path)
    assert loaded_task == task
    assert cfg.model.dim == tiny_cfg.model.dim
    x = np.random.default_rng(0).normal(size=(4, task.arity))
    assert np.array_equal(encoder_forward(model, x).data, encoder_forward(loaded, x).data)


def test_checkpoint_errors(tiny_cfg, tmp_path):
    task = parse_task(tiny_cfg.task)
    model = build_encoder(tiny_cfg, task, np.random.default_rng(0))
    path = save_checkpoint(model, tmp_path / "ckpt", tiny_cfg, task)

    blob = (path / "params.bin").read_bytes()
    (path / "params.bin").write_bytes(blob[:-4])
    with pytest.raises(CheckpointSizeError):
        load_checkpoint(path)
    (path / "params.bin").write_bytes(blob)

    manifest = OmegaConf.load(path / "manifest")
    manifest.format_version = 99
    OmegaConf.save(manifest, path / "manifest")
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)

    (path / "manifest").unlink()
    with pytest.raises(CheckpointManifestError):
        load_checkpoint(path)


def test_run_training_writes_metrics(tiny_cfg, tmp_path):
    result = run_training(tiny_cfg, tmp_path, verbose=False)
    records = read_metrics(tmp_path / "metrics.jsonl")
    assert len(records) == len(result.history) == tiny_cfg.train.max_epochs
    assert list(records[0]) == ["epoch", "train_loss", "rmse", "lowest_so_far", "wall_time_s"]
    assert [r["epoch"] for r in records] == list(range(len(records)))
    assert result.tracking == "rmse"
    assert result.best_value == min(r["rmse"] for r in records)
    assert records[-1]["lowest_so_far"] == result.best_value
    assert (tmp_path / "checkpoint" / "manifest").is_file()


def test_run_training_is_reproducible(tiny_cfg, tmp_path):
    assert tiny_cfg.train.record_wall_time is False
    run_training(tiny_cfg, tmp_path / "a", verbose=False)
    run_training(tiny_cfg, tmp_path / "b", verbose=False)
    for name in ("metrics.jsonl", "checkpoint/params.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_run_training_can_record_wall_time(tiny_cfg, tmp_path):
    tiny_cfg.train.record_wall_time = True
    tiny_cfg.train.max_epochs = 1
    run_training(tiny_cfg, tmp_path, verbose=False)
    (record,) = read_metrics(tmp_path / "metrics.jsonl")
    assert record["wall_time_s"] > 0.0


def test_non_finite_loss_stops_training(tiny_cfg):
    task = parse_task(tiny_cfg.task)
    rng = np.random.default_rng(0)
    targets = rng.normal(size=16)
    targets[3] = np.nan
    train = ArrayDataset(rng.normal(size=(16, 2)), targets)
    test = ArrayDataset(rng.normal(size=(4, 2)), rng.normal(size=4))
    model = build_encoder(tiny_cfg, task, rng)
    with pytest.raises(TrainingError):
        train_loop(tiny_cfg, model, SplitDataset(train, test, 0, "nan"), task, verbose=False)


def test_config_provenance(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("model:\n  layers: 3\n")
    cfg, provenance = load_config(path, ["moe.top_k=1"])
    assert cfg.model.layers == 3 and cfg.moe.top_k == 1
    assert provenance["model.layers"] == "file"
    assert provenance["moe.top_k"] == "flag"
    assert provenance["model.heads"] == "default"


def test_config_task_defaults():
    cfg, _ = load_config(None, ["task=cifar10"])
    cfg = resolve_config(cfg)
    assert cfg.model.dim == 128 and cfg.train.batch_size == 128
    cfg, _ = load_config()
    cfg = resolve_config(cfg)
    assert cfg.model.dim == 64 and cfg.train.batch_size == 4


@pytest.mark.parametrize(
    "overrides",
    [
        ["moe.num_experts=3"],
        ["model.heads=5"],
        ["moe.top_k=9"],
        ["train.lr=0"],
        ["task=feynman:I.99.9"],
        ["moe.router=dense"],
    ],
)
def test_config_validation(overrides):
    cfg, _ = load_config(None, overrides)
    with pytest.raises(ConfigError):
        resolve_config(cfg)


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError):
        load_config(None, ["model.depth=3"])
    path = tmp_path / "bad.yaml"
    path.write_text("optimizer:\n  lr: 1\n")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_fingerprint_and_diff(tiny_cfg):
    other = copy.deepcopy(tiny_cfg)
    other.output_dir = "/somewhere"
    assert fingerprint(other) == fingerprint(tiny_cfg)
    other.moe.top_k = 1
    assert fingerprint(other) != fingerprint(tiny_cfg)
    diff = config_diff(tiny_cfg, other)
    assert diff == {"output_dir": (None, "/somewhere"), "moe.top_k": (2, 1)}


def test_remap_flags():
    assert remap_flags(["--model.dim", "16", "--moe.top_k=1"]) == ["model.dim=16", "moe.top_k=1"]
    with pytest.raises(ConfigError):
        remap_flags(["stray"])
    with pytest.raises(ConfigError):
        remap_flags(["--model.dim"])


def test_streams_are_independent_and_seeded():
    a, b = make_streams(7), make_streams(7)
    assert list(a) == ["init", "shuffle", "dropout", "data"]
    assert a["init"].random() == b["init"].random()
    assert make_streams(7)["init"].random() != make_streams(7)["shuffle"].random()


def test_worker_count():
    assert worker_count({}) == 1
    with pytest.raises(ConfigError):
        worker_count({"KANFORMER_THREADS": "0"})
    with pytest.raises(ConfigError):
        worker_count({"KANFORMER_THREADS": "many"})


def test_metric_logger_weights_by_samples():
    logger = MetricLogger()
    logger.update(n=3, loss=1.0)
    logger.update(n=1, loss=Tensor(np.array(5.0)))
    assert logger.summary() == {"loss": 2.0}
    assert logger.postfix() == "loss=3"


def test_update_log_dict_filters_metrics(monkeypatch):
    defined = []
    monkeypatch.setattr(tracker.wandb, "define_metric", lambda name, step_metric: defined.append(name))
    log_dict = {"epoch": 3}
    tracker.update_log_dict("test", {"rmse": 0.5, "lowest_so_far": 0.4}, log_dict, step="epoch", to_log=["rmse"])
    assert log_dict == {"epoch": 3, "test/rmse": 0.5}
    assert defined == ["test/rmse"]
