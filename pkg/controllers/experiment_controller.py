"""
Experiment Controller for TransNN Lab
Orchestrates every command: validate inputs, compute, write the run manifest, then the outputs
"""

import csv
import logging
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from pydantic import ValidationError as PydanticValidationError

from config.app_config import AppConfig
from config.performance_config import get_system_info
from services.analysis_service import Verdict, extinction_check
from services.continuum_service import (
    RateModel,
    SelfTransmission,
    discretization_consistency,
    discretization_consistency_multi,
    integrate,
    load_rates,
    sis_rhs_multi,
    sis_rhs_single,
)
from services.dynamics_service import Representation, Trajectory, simulate, simulate_streaming
from services.exceptions import ConvergenceError, DomainError, ValidationError
from services.learning_service import (
    ApproxConfig,
    TrainConfig,
    accuracy,
    approximation_ladder,
    build_model,
    compare_activations,
    get_target,
    load_dataset,
    load_train_config,
    save_checkpoint,
    save_history,
    save_ladder,
    train,
)
from services.network_service import load_network
from utils.file_utils import ensure_directory_exists, file_sha256, load_json, save_json, write_gnuplot_script
from utils.resource_monitor import resource_profile
from utils.text_utils import parse_p0_spec

logger = logging.getLogger(__name__)


class RunManifest(BaseModel):
    """Everything needed to reproduce a run; written before any output."""
    command: str
    config: Dict[str, Any]
    seed: int
    version: str
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    settings: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    system: Dict[str, Any] = Field(default_factory=dict)


class ExperimentController:
    def __init__(self, out_dir: Optional[str] = None, seed: Optional[int] = None, fmt: str = "csv"):
        """
        Initialize experiment controller

        Args:
            out_dir: Default output directory (AppConfig.OUTPUT_DIR when omitted)
            seed: Global seed (AppConfig.DEFAULT_SEED when omitted)
            fmt: "csv" or "json" for tabular outputs
        """
        if fmt not in ("csv", "json"):
            raise ValidationError(f"unknown format '{fmt}'", "--format")
        self.out_dir = Path(out_dir or AppConfig.OUTPUT_DIR)
        self.seed = AppConfig.DEFAULT_SEED if seed is None else int(seed)
        self.seed_explicit = seed is not None
        self.fmt = fmt
        logger.info(f"Experiment controller ready (out_dir={self.out_dir}, seed={self.seed}, format={fmt})")

    # --- helpers ---

    def _target_dir(self, out: Optional[str], command: str) -> Path:
        return Path(out) if out else self.out_dir / command

    def _write_manifest(self, directory: Path, command: str, config: Dict[str, Any], inputs: Sequence[str],
                        outputs: Sequence[Optional[Path]], seed: Optional[int] = None) -> Path:
        ensure_directory_exists(directory)
        manifest = RunManifest(
            command=command,
            config=config,
            seed=self.seed if seed is None else seed,
            version=AppConfig.VERSION,
            inputs={str(p): file_sha256(p) for p in inputs if p and Path(p).is_file()},
            outputs=[str(p) for p in outputs if p is not None],
            settings={
                "spectral": AppConfig.get_spectral_config(),
                "dynamics": AppConfig.get_dynamics_config(),
                "training": AppConfig.get_training_defaults(),
            },
            system=get_system_info(),
        )
        return save_json(directory / "manifest.json", manifest.model_dump(mode="json"))

    def _ext(self) -> str:
        return ".json" if self.fmt == "json" else ".csv"

    @staticmethod
    def _script_for(data_path: Path) -> Optional[Path]:
        # gnuplot reads the CSV tables only
        return data_path.with_suffix(".gp") if data_path.suffix == ".csv" else None

    # --- commands ---

    @resource_profile
    def cmd_simulate(self, network_file: str, p0_spec: str, horizon: int,
                     representation: str = "prob", out: Optional[str] = None) -> Dict[str, Any]:
        """
        Simulate a network and export the trajectory (step,node,p,s)

        Args:
            network_file: JSON or CSV network
            p0_spec: initial-condition mini-language
            horizon: number of steps
            representation: prob | info | log_healthy
            out: output directory

        Returns:
            Dictionary with output paths and the final probabilities
        """
        net = load_network(network_file)
        p0 = parse_p0_spec(p0_spec, net.n, self.seed)
        rep = Representation(representation)
        if horizon < 0:
            raise ValidationError(f"horizon must be nonnegative, got {horizon}", "--horizon")
        streaming = horizon > AppConfig.STREAMING_HORIZON_LIMIT
        directory = self._target_dir(out, "simulate")
        data_path = directory / ("trajectory.csv" if streaming else "trajectory" + self._ext())
        script_path = self._script_for(data_path)
        config = {"network": str(network_file), "p0": p0_spec, "horizon": horizon,
                  "representation": rep.value, "kind": net.kind.value, "streaming": streaming}

        if streaming:
            self._write_manifest(directory, "simulate", config, [network_file], [data_path, script_path])
            final = self._stream_trajectory(net, p0, horizon, rep, data_path)
        else:
            trajectory = simulate(net, p0, horizon, rep, initial_representation=Representation.PROBABILITY)
            self._write_manifest(directory, "simulate", config, [network_file], [data_path, script_path])
            trajectory.save(data_path, self.fmt)
            final = trajectory.probabilities()[-1]
        if script_path:
            write_gnuplot_script(script_path, data_path, 1, {"p": 3}, "Infection probability per node", "step", "p")
        return {"trajectory": str(data_path), "final_p": [float(v) for v in final],
                "manifest": str(directory / "manifest.json")}

    def _stream_trajectory(self, net, p0, horizon: int, rep: Representation, path: Path) -> np.ndarray:
        with open(path, 'w', encoding='utf-8', newline='') as file:
            writer = csv.writer(file)
            writer.writerow(["step", "node", "p", "s"])

            def emit(step: int, state: np.ndarray) -> None:
                view = Trajectory(states=state[None, :], representation=rep)
                for node, (p, s) in enumerate(zip(view.probabilities()[0], view.info()[0])):
                    writer.writerow([step, node, repr(float(p)), repr(float(s))])

            final = simulate_streaming(net, p0, horizon, emit, rep, initial_representation=Representation.PROBABILITY)
        return Trajectory(states=final[None, :], representation=rep).probabilities()[0]

    @resource_profile
    def cmd_threshold(self, network_file: str, out: Optional[str] = None) -> Dict[str, Any]:
        """
        Spectral extinction check; writes threshold.json

        Raises:
            ConvergenceError: after writing the report, when the spectral estimate did not converge
        """
        net = load_network(network_file)
        report = extinction_check(net)
        directory = self._target_dir(out, "threshold")
        report_path = directory / "threshold.json"
        self._write_manifest(directory, "threshold", {"network": str(network_file)}, [network_file], [report_path])
        save_json(report_path, report.to_dict())
        logger.info(report.summary())
        if report.verdict is Verdict.UNCONVERGED:
            raise ConvergenceError(f"{report.summary()} (best estimate after {report.iterations} iterations)")
        return {"summary": report.summary(), "report": report.to_dict(), "path": str(report_path)}

    @resource_profile
    def cmd_ode(self, rates_file: str, p0_spec: str, t_end: float, dt: float,
                out: Optional[str] = None) -> Dict[str, Any]:
        """Integrate the network SIS field with RK4; time series t,node,p."""
        rates, adj, model = load_rates(rates_file)
        p0 = parse_p0_spec(p0_spec, rates.n, self.seed)
        rhs = partial(sis_rhs_multi, rates) if model is RateModel.MULTI else partial(sis_rhs_single, rates, adj)
        series = integrate(rhs, p0, t_end, dt)
        directory = self._target_dir(out, "ode")
        data_path = directory / ("timeseries" + self._ext())
        script_path = self._script_for(data_path)
        config = {"rates": str(rates_file), "p0": p0_spec, "t_end": t_end, "dt": dt, "model": model.value}
        self._write_manifest(directory, "ode", config, [rates_file], [data_path, script_path])
        series.save(data_path, self.fmt)
        if script_path:
            write_gnuplot_script(script_path, data_path, 1, {"p": 3}, "Network SIS solution", "t", "p")
        return {"timeseries": str(data_path), "final_p": series.states[-1].tolist(),
                "clamp_events": len(series.clamp_events)}

    @resource_profile
    def cmd_consistency(self, rates_file: str, p0_spec: str, deltas: Sequence[float], out: Optional[str] = None,
                        t_end: float = 1.0, self_transmission: str = "exponential",
                        epsilon: Optional[float] = None) -> Dict[str, Any]:
        """Δ-ladder of discrete dynamics against the RK4 reference; table delta,sup_error,order_estimate."""
        rates, adj, model = load_rates(rates_file)
        p0 = parse_p0_spec(p0_spec, rates.n, self.seed)
        if model is RateModel.MULTI:
            table = discretization_consistency_multi(rates, p0, deltas, t_end, epsilon)
        else:
            table = discretization_consistency(rates, adj, p0, deltas, t_end, SelfTransmission(self_transmission))
        directory = self._target_dir(out, "consistency")
        data_path = directory / ("consistency" + self._ext())
        script_path = self._script_for(data_path)
        config = {"rates": str(rates_file), "p0": p0_spec, "deltas": list(deltas), "t_end": t_end,
                  "self_transmission": self_transmission, "model": model.value,
                  "epsilon": rates.epsilon if epsilon is None else epsilon}
        self._write_manifest(directory, "consistency", config, [rates_file], [data_path, script_path])
        table.save(data_path, self.fmt)
        if script_path:
            write_gnuplot_script(script_path, data_path, 1, {"sup error": 2}, "Discrete to continuous consistency",
                                 "delta", "sup error", logscale="xy")
        return {"table": str(data_path), "errors": table.errors.tolist(), "orders": table.orders.tolist(),
                "fitted_constant": table.fitted_constant}

    @resource_profile
    def cmd_train(self, dataset: Optional[str] = None, config_file: Optional[str] = None,
                  out: Optional[str] = None, compare: bool = False, progress: bool = False) -> Dict[str, Any]:
        """
        Train a layered TransNN (or the activation comparison) and export checkpoints and losses

        Args:
            dataset: CSV file or built-in dataset name (falls back to the config's dataset)
            config_file: JSON TrainConfig
            out: output directory
            compare: run every activation variant instead of one model
            progress: show a progress bar

        Returns:
            Dictionary with output paths, final loss and accuracy
        """
        overrides: Dict[str, Any] = {"progress": progress}
        if self.seed_explicit:
            overrides["seed"] = self.seed
        cfg = load_train_config(config_file, **overrides) if config_file else TrainConfig(**overrides)
        data = load_dataset(dataset or cfg.dataset, seed=cfg.seed)
        directory = self._target_dir(out, "train")
        inputs = [p for p in (dataset, config_file) if p]
        config = cfg.model_dump(mode="json")
        config["dataset"] = dataset or cfg.dataset

        if compare:
            result = compare_activations(data, cfg)
            data_path = directory / "comparison.csv"
            script_path = directory / "comparison.gp"
            self._write_manifest(directory, "train --compare", config, inputs, [data_path, script_path],
                                 seed=cfg.seed)
            result.save(data_path)
            columns = {name: i + 2 for i, name in enumerate(result.histories)}
            write_gnuplot_script(script_path, data_path, 1, columns, "Activation comparison", "epoch",
                                 "training loss", logscale="y")
            return {"comparison": str(data_path), "accuracies": result.accuracies}

        model = build_model(cfg.layer_sizes, cfg.activation, cfg.head, seed=cfg.seed, w_init=cfg.w_init,
                            bias_init=cfg.bias_init)
        trained, history = train(model, data, cfg)
        paths = [directory / "checkpoint_initial.json", directory / "checkpoint_final.json",
                 directory / "training_log.csv", directory / "training_log.gp"]
        self._write_manifest(directory, "train", config, inputs, paths, seed=cfg.seed)
        save_checkpoint(model, paths[0])
        save_checkpoint(trained, paths[1])
        save_history(history, paths[2])
        write_gnuplot_script(paths[3], paths[2], 1, {"train": 2, "validation": 3}, "Training loss", "epoch",
                             "loss", logscale="y")
        result = {"checkpoint": str(paths[1]), "training_log": str(paths[2]),
                  "final_loss": history[-1].train_loss}
        if data.is_classification:
            result["accuracy"] = accuracy(trained, data)
        return result

    @resource_profile
    def cmd_approx(self, target: str, widths: Sequence[int], out: Optional[str] = None, b: float = 1.0,
                   activation: str = "tlogsigmoid", refine_epochs: int = 0) -> Dict[str, Any]:
        """Universal-approximation ladder; table width,sup_error,rational_sup_error,rounding_bound."""
        get_target(target)
        if not widths or any(w < 1 for w in widths):
            raise ValidationError(f"widths must be positive, got {list(widths)}", "--widths")
        try:
            cfg = ApproxConfig(b=b, activation=activation, seed=self.seed, refine_epochs=refine_epochs)
        except PydanticValidationError as e:
            first = e.errors()[0]
            raise ValidationError(first.get("msg", "invalid approximation settings"),
                                  ".".join(str(p) for p in first["loc"])) from e
        if cfg.b == 0.0:
            raise DomainError("the approximator needs a nonzero bias b")
        results = approximation_ladder(target, widths, cfg)
        directory = self._target_dir(out, "approx")
        data_path = directory / f"{target}_ladder.csv"
        script_path = directory / f"{target}_ladder.gp"
        config = {"target": target, "widths": list(widths), **cfg.model_dump(mode="json")}
        self._write_manifest(directory, "approx", config, [], [data_path, script_path])
        save_ladder(results, data_path)
        write_gnuplot_script(script_path, data_path, 1, {"sup error": 2, "rational": 3},
                             f"Sup error ladder ({target})", "width", "sup error", logscale="xy")
        return {"ladder": str(data_path), "sup_errors": [r.sup_error for r in results],
                "rounding_changes": [r.rounding_change for r in results]}

    def cmd_validate(self, path: str) -> Dict[str, Any]:
        """Checks a network or rates file without writing anything."""
        file_path = Path(path)
        if not file_path.is_file():
            raise ValidationError("file not found", str(path))
        data = load_json(file_path) if file_path.suffix.lower() == ".json" else None
        if isinstance(data, dict) and "c" in data:
            rates, _, model = load_rates(file_path)
            return {"valid": True, "type": "rates", "model": model.value, "n": rates.n}
        net = load_network(file_path)
        return {"valid": True, "type": "network", "kind": net.kind.value, "n": net.n,
                "storage": net.storage, "counts_exact": net.counts_exact}
