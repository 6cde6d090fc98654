import os
import json
import copy
import time
from dataclasses import dataclass, field
from typing import Dict

from sketchkd.config import load_config, config_hash, save_config
from sketchkd.helpers import check_filepath, component_rng, atomic_write_text, git_describe, sha256_of_file
from sketchkd.backbone import PyramidBackbone
from sketchkd.data import generate_synthetic, save_directory, load_directory, split_dataset
from sketchkd.distill import FeatureBank
from sketchkd.ema import ema_swap_for_eval
from sketchkd.trainer import pretrain_teacher, train_student, load_checkpoint, run_ablation, get_recipe
from sketchkd.evaluation import retrieval, acc_at_q, ACC_QS, data_scaling_study, cross_category_harness, stability_trace, write_series_csv, plot_series


@dataclass
class RunManifest:
    """Record of one command: what ran, on what, with which configuration."""
    command: str
    config_path: str
    config_hash: str
    seed: int
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    start: float = 0.0
    end: float = 0.0
    git: str = "unknown"

    def to_text(self):
        lines = ["command: {0}".format(self.command),
                 "config: {0}".format(self.config_path),
                 "config_hash: {0}".format(self.config_hash),
                 "seed: {0}".format(self.seed)]
        for name, path in sorted(self.inputs.items()):
            lines.append("input {0}: {1}".format(name, path))
        for name, path in sorted(self.outputs.items()):
            digest = sha256_of_file(path) if os.path.isfile(path) else "-"
            lines.append("output {0}: {1} sha256={2}".format(name, path, digest))
        lines.append("start: {0}".format(time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.start))))
        lines.append("end: {0}".format(time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.end))))
        lines.append("git: {0}".format(self.git))
        return "\n".join(lines)+"\n"

    def write(self, out_dir):
        self.end = time.time()
        self.git = git_describe()
        atomic_write_text(os.path.join(out_dir, "manifest.txt"), self.to_text())


class Experiment:
    """One configured experiment: a configuration, a dataset directory and an output
    directory, with one method per command.

    Parameters
    ----------
    experiment_input : str or dict, optional
        Path to a JSON object, or a dictionary, with the keys

            "config" : path to a configuration file, or a configuration dictionary
            "data" : dataset directory (load_directory format)
            "out" : output directory
            "seed" : overrides the configured seed
            "n_test" : labelled instances held out as the retrieval gallery
            "verbose" : bool

        A "run" key is ignored here; it is read by the command-line batch mode.

    Raises
    ------
    IOError
        If input filepath or filename is invalid
    """

    def __init__(self, experiment_input={}):

        # File
        if isinstance(experiment_input, str):
            check_filepath(experiment_input, ".json")
            with open(experiment_input) as input_json_handle:
                self._input_dict = json.load(input_json_handle)
            base = os.path.dirname(os.path.abspath(experiment_input))

        # Dictionary
        elif isinstance(experiment_input, dict):
            self._input_dict = copy.deepcopy(experiment_input)
            base = os.getcwd()

        # Input format not recognized
        else:
            raise IOError("Input to Experiment class initializer must be a file path or Python dictionary, not type {0}.".format(type(experiment_input)))

        # Configuration
        config_input = self._input_dict.get("config", {})
        if isinstance(config_input, str):
            config_input = config_input if os.path.isabs(config_input) else os.path.join(base, config_input)
            self.config_path = config_input
        else:
            self.config_path = "<inline>"
        hp = load_config(config_input)
        if "seed" in self._input_dict and self._input_dict["seed"] is not None:
            hp = hp.replace(seed=int(self._input_dict["seed"]))
        self.hp = hp

        def resolve(path):
            if path is None or os.path.isabs(path):
                return path
            return os.path.join(base, path)

        self.data_dir = resolve(self._input_dict.get("data", None))
        self.out_dir = resolve(self._input_dict.get("out", "sketchkd_out"))
        self.n_test = self._input_dict.get("n_test", None)
        self.verbose = self._input_dict.get("verbose", False)
        self._dataset = None


    def _manifest(self, command, **inputs):
        return RunManifest(command=command, config_path=self.config_path, config_hash=config_hash(self.hp), seed=self.hp.seed,
                           inputs={name : str(value) for name, value in inputs.items() if value is not None}, start=time.time())


    def _finish(self, manifest, **outputs):
        os.makedirs(self.out_dir, exist_ok=True)
        manifest.outputs.update(outputs)
        manifest.write(self.out_dir)


    def _load_dataset(self):
        if self._dataset is None:
            if self.data_dir is None:
                raise IOError("No dataset directory was given (\"data\").")
            self._dataset = load_directory(self.data_dir, self.hp.image_size)
        return self._dataset


    def split(self):
        """Training pool and held-out gallery, split deterministically from the run seed."""
        dataset = self._load_dataset()
        n_test = self.n_test if self.n_test is not None else max(1, len(dataset.labelled)//4)
        return split_dataset(dataset, n_test, component_rng(self.hp.seed, "data.split"))


    def gen_data(self, **kwargs):
        """Generates a synthetic dataset and writes it in the directory format.

        Parameters
        ----------
        out : str, optional
            Dataset directory. Defaults to the experiment's data directory.

        instances, classes, sketches_per, unlabelled, image_size, seed : optional
            Passed to generate_synthetic. image_size and seed default to the configuration.

        Returns
        -------
        LoadReport
        """
        out = kwargs.get("out", None) or self.data_dir
        if out is None:
            raise IOError("gen_data needs an output directory.")
        seed = kwargs.get("seed", None)
        seed = self.hp.seed if seed is None else seed
        image_size = kwargs.get("image_size", None) or self.hp.image_size

        manifest = self._manifest("gen-data")
        dataset = generate_synthetic(kwargs.get("instances", 16), kwargs.get("classes", 4), kwargs.get("sketches_per", 2), seed,
                                     n_unlabelled=kwargs.get("unlabelled", 0), image_size=image_size)
        os.makedirs(out, exist_ok=True)
        report = save_directory(dataset, out)
        atomic_write_text(os.path.join(out, "load_report.txt"), report.to_text())
        manifest.seed = seed

        manifest.outputs["dataset"] = out
        manifest.write(out)
        return report


    def pretrain_teacher(self, **kwargs):
        """Pre-trains the teacher on the training photo pool and writes teacher.ckpt and bank.bin."""
        manifest = self._manifest("pretrain-teacher", data=self.data_dir)
        train_set, _ = self.split()
        result = pretrain_teacher(train_set.photo_pool(), self.hp, out_dir=self.out_dir, verbose=self.verbose)
        self._finish(manifest, teacher=os.path.join(self.out_dir, "teacher.ckpt"), bank=os.path.join(self.out_dir, "bank.bin"))
        return result


    def train_student(self, **kwargs):
        """Trains a student and writes student.ckpt and metrics.csv.

        Parameters
        ----------
        mode : str, optional
            Defaults to "strong_baseline".

        teacher : str, optional
            Path to teacher.ckpt. Required by distilling modes. A bank.bin beside it
            is used when present.
        """
        mode = kwargs.get("mode", "strong_baseline")
        teacher_path = kwargs.get("teacher", None)
        recipe = get_recipe(mode)
        if recipe.distill and teacher_path is None:
            raise ValueError("Mode '{0}' needs a teacher checkpoint.".format(mode))

        manifest = self._manifest("train-student", data=self.data_dir, teacher=teacher_path)
        train_set, gallery = self.split()

        teacher = None
        bank = None
        if recipe.distill:
            teacher = load_checkpoint(teacher_path, self.hp).model
            bank_path = os.path.join(os.path.dirname(os.path.abspath(teacher_path)), "bank.bin")
            if os.path.exists(bank_path):
                bank = FeatureBank.load(bank_path)
                manifest.inputs["bank"] = bank_path

        result = train_student(train_set, self.hp, mode=mode, teacher=teacher, bank=bank, gallery=gallery, out_dir=self.out_dir, verbose=self.verbose)
        self._finish(manifest, student=os.path.join(self.out_dir, "student.ckpt"), metrics=os.path.join(self.out_dir, "metrics.csv"))
        return result


    def evaluate(self, **kwargs):
        """Evaluates a student checkpoint (or a freshly initialised student) on the gallery.

        Parameters
        ----------
        checkpoint : str, optional
            Path to student.ckpt. EMA weights are used when stored.

        per_class : bool, optional
            Search within each class only.

        Writes evaluation.txt and, when a metrics.csv sits beside the checkpoint with
        enough evaluation rows, stability.csv and stability.png.

        Returns
        -------
        dict
            Acc@q for q in 1, 5, 10, plus the gallery size.
        """
        checkpoint_path = kwargs.get("checkpoint", None)
        per_class = kwargs.get("per_class", False)

        manifest = self._manifest("evaluate", data=self.data_dir, checkpoint=checkpoint_path)
        _, gallery = self.split()

        if checkpoint_path is None:
            model = PyramidBackbone(self.hp, init_name="student.init")
            result = retrieval(model, gallery, per_class=per_class)
        else:
            checkpoint = load_checkpoint(checkpoint_path, self.hp)
            model = checkpoint.model
            if checkpoint.ema is not None:
                with ema_swap_for_eval(checkpoint.ema, model):
                    result = retrieval(model, gallery, per_class=per_class)
            else:
                result = retrieval(model, gallery, per_class=per_class)

        accuracies = {"acc{0}".format(q) : acc_at_q(result, q) for q in ACC_QS}
        accuracies["gallery_size"] = result.gallery_size
        os.makedirs(self.out_dir, exist_ok=True)
        outputs = {"evaluation" : os.path.join(self.out_dir, "evaluation.txt")}

        # Stability trace of the run that produced the checkpoint
        trace = None
        if checkpoint_path is not None:
            metrics_path = os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)), "metrics.csv")
            if os.path.exists(metrics_path):
                try:
                    trace = stability_trace(metrics_path)
                except ValueError:
                    trace = None
        if trace is not None:
            write_series_csv(trace.series(), os.path.join(self.out_dir, "stability.csv"))
            plot_series(trace.series(), os.path.join(self.out_dir, "stability.png"))
            accuracies["std_raw"] = trace.std_raw
            accuracies["std_ema"] = trace.std_ema
            outputs["stability"] = os.path.join(self.out_dir, "stability.csv")

        atomic_write_text(outputs["evaluation"], "".join("{0}: {1}\n".format(key, value) for key, value in accuracies.items()))

        if self.verbose:
            for key, value in accuracies.items():
                print("{0:<20}{1}".format(key, value))

        self._finish(manifest, **outputs)
        return accuracies


    def ablate(self, **kwargs):
        """Runs an ablation suite and writes ablation_<suite>.csv.

        Parameters
        ----------
        suite : str

        seeds : list of int, optional
        """
        suite = kwargs.get("suite", "loss_stripdown")
        manifest = self._manifest("ablate", data=self.data_dir, suite=suite)
        train_set, gallery = self.split()
        extra = {"seeds" : kwargs["seeds"]} if kwargs.get("seeds", None) is not None else {}
        table = run_ablation(suite, train_set, gallery, self.hp, out_dir=self.out_dir, verbose=self.verbose, **extra)
        self._finish(manifest, table=os.path.join(self.out_dir, "ablation_{0}.csv".format(suite)))
        return table


    def study(self, **kwargs):
        """Runs the labelled-data scaling study and writes study.csv.

        Parameters
        ----------
        fractions : list of float, optional
            Defaults to [0.25, 0.5, 1.0].

        seeds : list of int, optional
        """
        fractions = kwargs.get("fractions", None) or [0.25, 0.5, 1.0]
        manifest = self._manifest("study", data=self.data_dir)
        train_set, gallery = self.split()
        extra = {"seeds" : kwargs["seeds"]} if kwargs.get("seeds", None) is not None else {}
        table = data_scaling_study(train_set, gallery, fractions, self.hp, out_dir=self.out_dir, verbose=self.verbose, **extra)
        self._finish(manifest, table=os.path.join(self.out_dir, "study.csv"))
        return table


    def cross_category(self, **kwargs):
        """Runs the cross-category harness and writes cross_category.txt.

        Parameters
        ----------
        seen, unseen : list of str
            Disjoint class ids.

        mode : str, optional
            Defaults to "full_kd".
        """
        seen = kwargs.get("seen", [])
        unseen = kwargs.get("unseen", [])
        mode = kwargs.get("mode", "full_kd")
        manifest = self._manifest("cross-category", data=self.data_dir)
        report = cross_category_harness(self._load_dataset(), seen, unseen, self.hp, mode=mode, verbose=self.verbose)
        os.makedirs(self.out_dir, exist_ok=True)
        atomic_write_text(os.path.join(self.out_dir, "cross_category.txt"), report.to_text())
        self._finish(manifest, report=os.path.join(self.out_dir, "cross_category.txt"))
        return report


    def export_config(self, filename=None):
        """Writes the effective configuration as JSON."""
        filename = filename or os.path.join(self.out_dir, "config.json")
        os.makedirs(os.path.dirname(os.path.abspath(filename)), exist_ok=True)
        save_config(self.hp, filename)
        return filename
