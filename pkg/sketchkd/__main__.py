"""Command-line entry point.

    python -m sketchkd <command> [options]
    python -m sketchkd run.json

The second form loads run.json as an Experiment and calls every method listed in
its "run" object with the given keyword arguments, in order.
"""

import sys
import json
import argparse

from sketchkd import Experiment


def _int_list(value):
    return [int(item) for item in value.split(",") if item != ""]


def _float_list(value):
    return [float(item) for item in value.split(",") if item != ""]


def _str_list(value):
    return [item for item in value.split(",") if item != ""]


class _Parser(argparse.ArgumentParser):
    # Usage errors go to the one-line handler in main
    def error(self, message):
        raise argparse.ArgumentError(None, message)


def build_parser():
    parser = _Parser(prog="sketchkd", description="Semi-supervised sketch-based image retrieval with photo-teacher distillation.")
    subparsers = parser.add_subparsers(dest="command")

    def common(sub, data=True):
        sub.add_argument("--config", default=None, help="Configuration JSON file.")
        if data:
            sub.add_argument("--data", required=True, help="Dataset directory.")
        sub.add_argument("--out", required=True, help="Output directory.")
        sub.add_argument("--seed", type=int, default=None, help="Overrides the configured seed.")
        sub.add_argument("--n-test", type=int, default=None, help="Labelled instances held out as the gallery.")
        sub.add_argument("--verbose", action="store_true")

    gen = subparsers.add_parser("gen-data", help="Generate a synthetic dataset.")
    gen.add_argument("--config", default=None)
    gen.add_argument("--out", required=True)
    gen.add_argument("--instances", type=int, default=16)
    gen.add_argument("--classes", type=int, default=4)
    gen.add_argument("--sketches-per", type=int, default=2)
    gen.add_argument("--unlabelled", type=int, default=0)
    gen.add_argument("--image-size", type=int, default=32)
    gen.add_argument("--seed", type=int, default=0)

    common(subparsers.add_parser("pretrain-teacher", help="Pre-train the photo teacher and build its feature bank."))

    student = subparsers.add_parser("train-student", help="Train a student.")
    common(student)
    student.add_argument("--mode", default="strong_baseline")
    student.add_argument("--teacher", default=None, help="teacher.ckpt; required by distilling modes.")

    evaluate = subparsers.add_parser("evaluate", help="Evaluate a student on the held-out gallery.")
    common(evaluate)
    evaluate.add_argument("--checkpoint", default=None, help="student.ckpt; a fresh student is evaluated when omitted.")
    evaluate.add_argument("--per-class", action="store_true")

    ablate = subparsers.add_parser("ablate", help="Run an ablation suite.")
    common(ablate)
    ablate.add_argument("--suite", required=True)
    ablate.add_argument("--seeds", type=_int_list, default=None)

    study = subparsers.add_parser("study", help="Run the labelled-data scaling study.")
    common(study)
    study.add_argument("--fractions", type=_float_list, default=None)
    study.add_argument("--seeds", type=_int_list, default=None)

    cross = subparsers.add_parser("cross-category", help="Run the cross-category harness.")
    common(cross)
    cross.add_argument("--seen", type=_str_list, required=True)
    cross.add_argument("--unseen", type=_str_list, required=True)
    cross.add_argument("--mode", default="full_kd")

    return parser


def _experiment(args, data=True):
    experiment_input = {"out" : args.out, "seed" : args.seed, "verbose" : getattr(args, "verbose", False)}
    if args.config is not None:
        experiment_input["config"] = args.config
    else:
        experiment_input["config"] = {"profile" : "desk"}
    if data:
        experiment_input["data"] = args.data
        experiment_input["n_test"] = args.n_test
    return Experiment(experiment_input)


def run_command(args):
    # Dispatches one parsed sub-command
    if args.command == "gen-data":
        experiment = _experiment(args, data=False)
        report = experiment.gen_data(out=args.out, instances=args.instances, classes=args.classes, sketches_per=args.sketches_per,
                                     unlabelled=args.unlabelled, image_size=args.image_size, seed=args.seed)
        print(report.to_text(), end='')

    elif args.command == "pretrain-teacher":
        _experiment(args).pretrain_teacher()

    elif args.command == "train-student":
        _experiment(args).train_student(mode=args.mode, teacher=args.teacher)

    elif args.command == "evaluate":
        accuracies = _experiment(args).evaluate(checkpoint=args.checkpoint, per_class=args.per_class)
        print(" ".join("{0}={1}".format(key, value) for key, value in accuracies.items()))

    elif args.command == "ablate":
        print(_experiment(args).ablate(suite=args.suite, seeds=args.seeds).to_csv(), end='')

    elif args.command == "study":
        print(_experiment(args).study(fractions=args.fractions, seeds=args.seeds).to_csv(), end='')

    elif args.command == "cross-category":
        print(_experiment(args).cross_category(seen=args.seen, unseen=args.unseen, mode=args.mode).to_text(), end='')


def run_prescribed_commands(input_filename):
    # Runs the methods listed under "run" in the JSON input
    experiment = Experiment(input_filename)
    with open(input_filename) as json_file_handle:
        input_dict = json.load(json_file_handle)

    print("\nRunning prescribed commands")
    print("---------------------------")
    for key, params in input_dict.get("run", {}).items():
        method = getattr(experiment, key, None)
        if method is None or key.startswith("_") or not callable(method):
            print("{0} is not recognized as a valid run command. Skipping...".format(key))
            continue
        print("Calling method {0}...".format(key), end='')
        method(**params)
        print("Done")
    print("\nCompleted prescribed commands.")


def main(argv=None):
    """Runs the command line and returns the exit code.

    Any failure is reported as a one-line diagnostic on stderr with exit code 1.
    """
    argv = sys.argv[1:] if argv is None else list(argv)

    try:
        if len(argv) == 1 and argv[0].endswith(".json"):
            run_prescribed_commands(argv[0])
            return 0

        parser = build_parser()
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 2
        run_command(args)

    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    except Exception as e:
        print("sketchkd: error: {0}: {1}".format(type(e).__name__, str(e).splitlines()[0] if str(e) else ""), file=sys.stderr)
        return 1

    return 0


if __name__=="__main__":
    sys.exit(main())
